import math

import numpy as np
import pytest

from halflab.eigen import (
    EigenError,
    EigenReport,
    dense_oracle,
    eigenvalue_monotonicity_check,
    lowest_eigenvalue_on,
    negative_spectrum,
    square_well_oracle,
)
from halflab.operator import Grid, assemble_operator
from halflab.potential import PotentialProfile


def test_free_operator_has_no_negative_eigenvalues():
    rep = negative_spectrum(assemble_operator(PotentialProfile.zero(), Grid(50.0, 1e-3)))
    assert rep.eigenvalues == () and rep.sum_sqrt == 0.0


def test_square_well_matches_transcendental_oracle():
    well = PotentialProfile.square_well(4, 1, 2)
    e = [negative_spectrum(assemble_operator(well, Grid(30.0, h))).lowest for h in (2e-3, 1e-3)]
    assert abs((4 * e[1] - e[0]) / 3 - square_well_oracle()) < 1e-6


def test_sturm_agrees_with_dense_oracle():
    p = PotentialProfile.step([(2, 3, -6), (5, 6.5, -3)])
    op = assemble_operator(p, Grid(20.0, 5e-3))
    a, b = negative_spectrum(op), dense_oracle(op)
    assert a.count == b.count >= 2
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)


def test_matrix_channel_uses_banded_solver():
    p = PotentialProfile.step([(1, 2, [[0, 0], [0, -8]]), (2, 3, [[-3, 1], [1, -3]])], n=2)
    op = assemble_operator(p, Grid(15.0, 1e-2))
    a, b = negative_spectrum(op), dense_oracle(op)
    assert a.method == "banded-symmetric"
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)


def test_two_separated_wells_split_into_isolated_levels():
    p = PotentialProfile.step([(1, 2, -4), (12, 13, -4)])
    rep = negative_spectrum(assemble_operator(p, Grid(30.0, 1e-3)))
    wall = negative_spectrum(assemble_operator(PotentialProfile.square_well(4, 1, 2), Grid(30.0, 1e-3))).lowest
    free = negative_spectrum(assemble_operator(PotentialProfile.square_well(4, 12, 13), Grid(30.0, 1e-3))).lowest
    assert rep.count == 2
    # levels interact only through a tunnelling tail of order exp(-2 sqrt(0.4) * 10)
    assert rep.eigenvalues[0] == pytest.approx(free, abs=1e-4)
    assert rep.eigenvalues[1] == pytest.approx(wall, abs=1e-4)


def test_report_validation():
    with pytest.raises(EigenError):
        EigenReport((-1.0, 0.5), "x")
    with pytest.raises(EigenError):
        EigenReport((-1.0, -2.0), "x")
    rep = EigenReport((-4.0, -1.0), "x")
    assert rep.sum_sqrt == 3.0


def test_lowest_on_interval_free_is_pi_squared():
    val, gs = lowest_eigenvalue_on(PotentialProfile.zero(), (1, 2), step=1e-3)
    assert val == pytest.approx(math.pi**2, rel=1e-6)
    assert gs.norm == pytest.approx(1.0)
    assert gs.sign_changes() == 0


def test_cutoff_monotonicity():
    v = PotentialProfile.square_well(2, 3, 4)
    wt = PotentialProfile.step([(5, 9, -1.5)])
    res = eigenvalue_monotonicity_check(v, wt, 6.0, 8.0, Grid(30.0, 1e-2))
    assert res["passed"]
