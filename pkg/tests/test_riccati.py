import math

import numpy as np
import pytest

from halflab.corpus import bump_corpus
from halflab.eigen import lowest_eigenvalue_on
from halflab.potential import PotentialProfile
from halflab.riccati import (
    RiccatiError,
    centrifugal_weight,
    cutoff_bound,
    decompose,
    dirichlet_bottom,
    integration_by_parts_check,
    positive_solution,
    residual_ratio,
    trapezoid_theta,
    weighted_estimate,
)


def test_zero_potential_zero_gamma_gives_zero_field():
    dec = decompose(PotentialProfile.zero(), (1, 4), 0.0, d=1)
    assert dec.slope == 0.0
    assert np.max(np.abs(dec.A)) < 1e-14


def test_constant_level_matches_tanh():
    g = 0.7
    dec = decompose(PotentialProfile.zero(), (2, 6), g, d=1, step=1e-3)
    assert np.allclose(dec.A, g * np.tanh(g * (dec.r - 2)), atol=1e-10)


def test_three_dimensional_free_case_matches_closed_form():
    # u'' + 2u'/r = g^2 u with u(a) = 1, u'(a) = 0: r u = c1 cosh(g(r-a)) + c2 sinh(g(r-a))
    g, a = 0.5, 1.0
    dec = decompose(PotentialProfile.zero(), (a, 5), g, d=3, step=1e-3)
    r = dec.r
    w = a * np.cosh(g * (r - a)) + (1.0 / g) * np.sinh(g * (r - a))
    assert np.allclose(dec.positive_solution, w / r, rtol=1e-10)


def test_positive_solution_needs_shift_for_deep_well():
    well = PotentialProfile.square_well(4, 2, 3)
    b = dirichlet_bottom(well, (1, 4))
    g = math.sqrt(-b) + 0.1
    r, u, p, s, trials = positive_solution(well, (1, 4), g)
    assert np.all(u > 0)
    assert len(trials) >= 1


def test_precondition_violation():
    well = PotentialProfile.square_well(4, 2, 3)
    with pytest.raises(RiccatiError, match="precondition"):
        decompose(well, (1, 4), 0.1)


def test_dirichlet_bottom_matches_eigen_module():
    well = PotentialProfile.square_well(3, 2, 3)
    val, _ = lowest_eigenvalue_on(well, (1, 5))
    assert dirichlet_bottom(well, (1, 5), d=3) == pytest.approx(val, rel=1e-9)


def test_riccati_residual_is_second_order():
    q = bump_corpus(1)[0]
    g = math.sqrt(max(0.0, -dirichlet_bottom(q, (1, 8)))) + 0.1
    rr = residual_ratio(q, (1, 8), g)
    assert 3.5 <= rr["ratio"] <= 4.5


def test_weighted_estimate_holds_and_is_consistent():
    q = bump_corpus(2)[1]
    g = math.sqrt(max(0.0, -dirichlet_bottom(q, (1, 8)))) + 0.1
    dec = decompose(q, (1, 8), g)
    est = weighted_estimate(dec, (2, 7))
    assert est.margin >= 0
    assert est.lhs <= est.direct_rhs
    assert est.to_json()["rhs"] == pytest.approx(est.rhs)


def test_weighted_estimate_errors():
    dec = decompose(PotentialProfile.zero(), (1, 4), 0.5)
    with pytest.raises(RiccatiError, match="ordering"):
        weighted_estimate(dec, (0.5, 3))
    wide = decompose(PotentialProfile.zero(), (1, 140), 1.0, step=1e-2)
    with pytest.raises(RiccatiError, match="67"):
        weighted_estimate(wide, (2, 100))


def test_cutoff_bound_holds():
    q = PotentialProfile.square_well(2, 3, 4)
    g = math.sqrt(max(0.0, -dirichlet_bottom(q, (1, 8)))) + 0.05
    dec = decompose(q, (1, 8), g)
    assert cutoff_bound(dec, trapezoid_theta(dec.r, 1, 2, 7, 8))["margin"] >= 0


def test_centrifugal_weight():
    assert centrifugal_weight(3) == 6.0
    assert centrifugal_weight(5) == 24.0


def test_integration_by_parts_identity():
    well = PotentialProfile.square_well(3, 2, 3)
    lam, gs = lowest_eigenvalue_on(well, (1, 5), step=1e-3)
    r = np.concatenate([[1.0], gs.r, [5.0]])
    psi = np.concatenate([[0.0], gs.values[:, 0], [0.0]])
    q = well.scalar(r)
    phi = np.cos(r)
    res = integration_by_parts_check(phi, psi, q, lam, gs.h)
    assert abs(res["difference"]) < 1e-2 * abs(res["lhs"])


def test_csv_header():
    dec = decompose(PotentialProfile.zero(), (1, 2), 0.3, step=0.1)
    lines = dec.to_csv().splitlines()
    assert lines[0] == "r,u,A,residual"
    assert len(lines) == dec.r.size + 1
