import math

import mpmath
import numpy as np
import pytest

from halflab.entropy import (
    NEG_INF,
    MeasurePair,
    correction_integral,
    entropy_integral,
    weighted_measure_pair,
    free_log_integral,
    integrate_k,
    radial_sum_rule_check,
    relative_entropy,
    semicontinuity_check,
    sphere_area,
    sum_rule_check,
    weighted_log_integral,
)
from halflab.potential import HypothesisViolation, PotentialProfile, make_piece
from halflab.spectral import density_jost, free_density


def clausen_free_log_integral(a, b):
    """Closed form through the Clausen function Cl_2 (mpmath), independent of the quadrature."""

    def F(k):
        k = mpmath.mpf(k)
        return 2 * (-2 * mpmath.clsin(2, k) - k * mpmath.log(2)) - k * mpmath.log(mpmath.pi) - 3 * (k * mpmath.log(k) - k)

    return float(2 * (F(math.sqrt(b)) - F(math.sqrt(a))))


@pytest.mark.parametrize("a,b", [(0.5, 20.0), (1.0, 50.0), (0.1, 200.0), (30.0, 45.0)])
def test_free_log_integral_matches_clausen_oracle(a, b):
    val, err = free_log_integral(a, b)
    assert val == pytest.approx(clausen_free_log_integral(a, b), abs=1e-9)
    assert err < 1e-8


def test_correction_integral_shift():
    v, _ = free_log_integral(0.5, 20)
    c, _ = correction_integral(0.5, 20)
    assert v - c == pytest.approx(2 * math.log(4) * (math.sqrt(20) - math.sqrt(0.5)))


def test_integrate_k_on_smooth_integrand():
    # int_a^b lambda^{-1/2} dl = 2 (sqrt b - sqrt a)
    val, _ = integrate_k(lambda k: np.ones_like(k), 0.5, 20)
    assert val == pytest.approx(2 * (math.sqrt(20) - math.sqrt(0.5)), rel=1e-13)


def test_entropy_integral_callable_and_sampled_agree():
    p = PotentialProfile.square_well(2, 3, 4)
    sampled = density_jost(p, np.geomspace(0.5, 20, 3000))
    exact = entropy_integral(lambda t: density_jost(p, np.atleast_1d(t)).density, 0.5, 20)
    assert entropy_integral(sampled, 0.5, 20) == pytest.approx(exact, abs=1e-5)


def test_entropy_integral_free_matches_closed_form():
    assert entropy_integral(free_density, 0.5, 20) == pytest.approx(clausen_free_log_integral(0.5, 20), abs=1e-9)


def test_entropy_integral_vanishing_density_is_minus_inf():
    assert entropy_integral(lambda t: np.where(t > 5, 1.0, 0.0), 0.5, 20) == NEG_INF


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_sum_rule_square_well_relative_margin_nonnegative():
    rep = sum_rule_check(PotentialProfile.square_well(2, 3, 4))
    assert rep.relative_margin >= 0
    assert rep.margin < 0  # the literal form is logged only
    doc = rep.to_json()
    assert set(doc["rhs_terms"]) == {"potential_term", "eigen_term", "depth_term", "centrifugal_term"}
    assert doc["lhs_total"] == pytest.approx(rep.lhs_entropy + rep.lhs_correction)


def test_sum_rule_free_has_zero_potential_terms():
    rep = sum_rule_check(PotentialProfile.zero())
    assert rep.eigen_term == 0 and rep.potential_term == 0 and rep.depth_term == 0
    assert rep.relative_entropy_variant == pytest.approx(0.0, abs=1e-12)


def test_sum_rule_hypothesis_violation():
    with pytest.raises(HypothesisViolation):
        sum_rule_check(PotentialProfile.square_well(1, 1.5, 2.5))


def test_radial_sum_rule_d3_reduces_to_scalar():
    v = PotentialProfile.square_well(1.5, 3, 4)
    rad = radial_sum_rule_check(v, 3)
    base = sum_rule_check(v)
    assert rad.lhs_entropy == pytest.approx(base.lhs_entropy)
    assert rad.extra_term == 0.0


def test_radial_sum_rule_d2_has_centrifugal_term():
    # V = -(d-1)(d-3)/(4 r^2) on [1, 2] so that the channel potential vanishes there
    v = PotentialProfile.from_pieces([
        make_piece(1, 2, "centrifugal", ["0.25"]),
        make_piece(2, 3, "const", [0]),
        make_piece(3, 4, "const", [-1.5]),
    ])
    rad = radial_sum_rule_check(v, 2, tail=30)
    assert rad.extra_term == pytest.approx(1 / 8)
    assert rad.relative_margin >= 0


def test_radial_sum_rule_d2_requires_compensated_core():
    with pytest.raises(HypothesisViolation):
        radial_sum_rule_check(PotentialProfile.square_well(1.5, 3, 4), 2, tail=30)


# --- relative entropy ------------------------------------------------------------------------


X = np.linspace(0.0, 1.0, 2001)


def test_relative_entropy_identical_is_zero():
    assert relative_entropy(MeasurePair(X, 1 + X, 1 + X)) == pytest.approx(0.0, abs=1e-15)


def test_relative_entropy_constant_ratio():
    c = 2.5
    assert relative_entropy(MeasurePair(X, c * np.ones_like(X), np.ones_like(X))) == pytest.approx(-c * math.log(c))


def test_relative_entropy_atoms():
    pair = MeasurePair(X, np.zeros_like(X), np.zeros_like(X), rho_atoms=((0.5, 2.0),), nu_atoms=((0.5, 1.0),))
    assert relative_entropy(pair) == pytest.approx(-2 * math.log(2))


def test_relative_entropy_missing_atom_is_minus_inf():
    pair = MeasurePair(X, np.zeros_like(X), np.ones_like(X), rho_atoms=((0.25, 1.0),))
    assert relative_entropy(pair) == NEG_INF


def test_relative_entropy_not_absolutely_continuous():
    nu = np.where(X < 0.5, 1.0, 0.0)
    assert relative_entropy(MeasurePair(X, np.ones_like(X), nu)) == NEG_INF


def test_relative_entropy_nonpositive_for_equal_mass():
    rng = np.random.default_rng(3)
    for _ in range(5):
        rho = rng.uniform(0.1, 2, X.size)
        nu = rng.uniform(0.1, 2, X.size)
        nu *= np.trapezoid(rho, X) / np.trapezoid(nu, X)
        assert relative_entropy(MeasurePair(X, rho, nu)) <= 1e-12


def test_measure_pair_validation():
    with pytest.raises(ValueError):
        MeasurePair(X, -np.ones_like(X), np.ones_like(X))
    with pytest.raises(ValueError):
        MeasurePair(X, np.ones(3), np.ones_like(X))
    with pytest.raises(ValueError):
        MeasurePair(X, np.ones_like(X), np.ones_like(X), rho_atoms=((2.0, 1.0),))


def test_semicontinuity_constant_sequence():
    base = MeasurePair(X, np.ones_like(X), 1 + X)
    res = semicontinuity_check([base] * 4, base)
    assert res["verdict"] == "pass" and not res["strict"]


def test_semicontinuity_oscillating_density_is_strict():
    y = np.linspace(0, 2 * math.pi, 100001)
    seq = [MeasurePair(y, 1 + 0.5 * np.sin(n * y), np.ones_like(y)) for n in (1, 2, 4, 8, 16)]
    res = semicontinuity_check(seq, MeasurePair(y, np.ones_like(y), np.ones_like(y)))
    s = math.sqrt(3) / 2
    per_length = -(math.log((1 + s) / 2) + (1 - s))
    assert res["values"][-1] == pytest.approx(2 * math.pi * per_length, abs=1e-6)
    assert res["verdict"] == "pass" and res["strict"]


def test_semicontinuity_mollifier_runs_to_minus_inf():
    seq = []
    for n in (2, 4, 8, 16, 32):
        g = np.exp(-0.5 * (n * (X - 0.5)) ** 2)
        seq.append(MeasurePair(X, np.ones_like(X), g / np.trapezoid(g, X)))
    limit = MeasurePair(X, np.ones_like(X), np.zeros_like(X), nu_atoms=((0.5, 1.0),))
    res = semicontinuity_check(seq, limit)
    assert res["limit"] == NEG_INF
    # closed form: int_0^1 log nu_n = log(n / sqrt(2 pi)) - n^2 / 24 (mass ~ 1 for n >= 8)
    n = 32
    assert res["values"][-1] == pytest.approx(math.log(n / math.sqrt(2 * math.pi)) - n * n / 24, rel=1e-4)
    assert res["verdict"] == "pass"


def test_semicontinuity_inconclusive_without_weak_convergence():
    seq = [MeasurePair(X, np.ones_like(X), np.ones_like(X) * (1 + n)) for n in range(4)]
    res = semicontinuity_check(seq, MeasurePair(X, np.ones_like(X), np.ones_like(X)))
    assert res["verdict"] == "inconclusive"


def test_weighted_measure_pair_matches_weighted_log_integral():
    lam = np.linspace(0.5, 20, 4001)
    dens = free_density(lam)
    pair = weighted_measure_pair(lam, dens, 0.5, 20)
    # S(rho|nu) = -int log(rho/nu) rho = int log(mu' l^{1/2}) l^{-1/2}
    expected = weighted_log_integral(lam, dens * np.sqrt(lam), 0.5, 20)
    assert relative_entropy(pair) == pytest.approx(expected, rel=1e-10)
