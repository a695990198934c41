import math

import numpy as np
import pytest
from scipy import integrate

from halflab.operator import Grid, assemble_operator
from halflab.potential import PotentialProfile
from halflab.spectral import (
    SpectralDensity,
    SpectralError,
    chi_family,
    density_jost,
    density_resolvent_extrapolated,
    density_resolvent_limit,
    free_density,
    free_stieltjes,
    free_stieltjes_quad,
    hilbert_identity_residual,
    outgoing_root,
    resolvent_density_operator,
    richardson,
    smooth_step,
    stieltjes,
    weakstar_convergence_check,
    wronskian_defect,
)


def test_free_density_mass_is_one():
    # mass of mu_free is |f|^2 = 1; in k = sqrt(t) the density is 2 (1 - cos k)^2 / (pi k^2)
    pts = [0.0] + [2 * math.pi * m for m in range(1, 200)]
    total = sum(integrate.quad(lambda k: 2 * k * free_density(k * k), a, b, epsabs=1e-13)[0] for a, b in zip(pts, pts[1:]))
    # (1 - cos k)^2 averages to 3/2 over a period, so the tail past K is 3 / (pi K)
    tail = 3.0 / (math.pi * pts[-1])
    assert total + tail == pytest.approx(1.0, abs=1e-6)


@pytest.mark.parametrize("z", [1j, 1 + 1j, 10 + 1j, -3 + 0.5j])
def test_free_stieltjes_closed_form_vs_quadrature(z):
    assert abs(free_stieltjes(z) - free_stieltjes_quad(z)) < 1e-8


def test_dirichlet_stieltjes_approximates_free_far_from_axis():
    op = assemble_operator(PotentialProfile.zero(), Grid(50.0, 1e-3))
    assert abs(stieltjes(op, 1j).value - free_stieltjes(1j)) < 1e-5


def test_outgoing_root_is_decaying():
    for z in (1 + 1e-3j, 30 + 1e-3j, -2 + 1j):
        zeta = outgoing_root(z, 1e-3)
        assert abs(zeta) < 1
        assert zeta + 1 / zeta == pytest.approx(2 - 1e-6 * z)


def test_jost_free_is_exact():
    lam = np.array([0.5, 3.0, 30.0])
    d = density_jost(PotentialProfile.zero(), lam)
    assert np.allclose(d.density, free_density(lam), rtol=1e-14)


@pytest.mark.parametrize(
    "profile",
    [
        PotentialProfile.square_well(4, 1, 2),
        PotentialProfile.bump(3, 6, -3),
        PotentialProfile.step([(1, 2, [[0, 0], [0, -2]]), (2, 4, [[-1, 0.7], [0.7, 1.5]])], n=2),
    ],
    ids=["well-[1,2]", "bump", "two-channel"],
)
def test_two_density_routes_agree(profile):
    lam = np.array([0.5, 3.0, 15.0, 20.0])
    a = density_jost(profile, lam).density
    b = density_resolvent_extrapolated(profile, lam).density
    assert np.max(np.abs(b / a - 1)) < 2e-5


def test_wronskian_is_conserved():
    p = PotentialProfile.step([(2, 3, -2), (3, 4, 1)])
    assert np.max(wronskian_defect(p, np.array([0.5, 10.0, 50.0]))) < 1e-9


def test_richardson_removes_linear_and_quadratic_terms():
    t = np.array([0.1, 0.05, 0.025])
    table = 3.0 + 2 * t + 5 * t**2
    assert richardson(table[:, None], 2.0)[0] == pytest.approx(3.0, abs=1e-13)


def test_resolvent_limit_rejects_bad_eps():
    with pytest.raises(ValueError):
        density_resolvent_limit(resolvent_density_operator(PotentialProfile.zero()), [1.0], 0.0)


def test_spectral_density_validation():
    with pytest.raises(SpectralError):
        SpectralDensity(np.array([1.0, 0.5]), np.array([1.0, 1.0]), "x")
    with pytest.raises(SpectralError):
        SpectralDensity(np.array([0.5, 1.0]), np.array([1.0, -1.0]), "x")
    d = SpectralDensity(np.array([0.5, 1.0]), np.array([0.0, 1.0]), "x")
    assert d.density[0] > 0
    assert d.to_csv().splitlines()[0] == "lambda,density"


def test_hilbert_identity():
    g = Grid(20.0, 1e-2)
    op1 = assemble_operator(PotentialProfile.square_well(2, 3, 4), g)
    op2 = assemble_operator(PotentialProfile.step([(2.5, 5, -1)]), g)
    res = hilbert_identity_residual(op1, op2, 2 + 0.5j)
    assert res["residual"] < 1e-10 * max(1.0, abs(res["lhs"]))


def test_herglotz_and_conjugate_symmetry():
    op = assemble_operator(PotentialProfile.square_well(3, 2, 3), Grid(20.0, 1e-2))
    for z in (0.3 + 0.1j, -2 + 1j, 40 + 3j):
        s, sc = stieltjes(op, z).value, stieltjes(op, z.conjugate()).value
        assert s.imag > 0
        assert abs(sc - s.conjugate()) < 1e-13


def test_smooth_step_limits():
    t = np.array([-1.0, 0.0, 0.5, 1.0, 2.0])
    assert smooth_step(t).tolist() == pytest.approx([1.0, 1.0, 0.5, 0.0, 0.0])


def test_chi_family_weak_star():
    grid = Grid(30.0, 1e-2)
    r = grid.interior
    v = np.where((r > 3) & (r < 4), -1.0, 0.0)
    w_minus = np.where((r > 2) & (r < 8), 0.5, 0.0)
    fam = {n: chi_family(v, w_minus, r, n) for n in (2, 4, 6, 8, 10)}
    # (1 - chi_n) W_- moves out to infinity, so the limit is V itself
    res = weakstar_convergence_check(fam, v, grid)
    assert res["converged"]
    assert max(res["rows"][0]["diff"]) > 1e-6
