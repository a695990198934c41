import json

import numpy as np
import pytest

from halflab.operator import DiscreteOperator, Grid, GridError, assemble_operator, sample_potential
from halflab.potential import HypothesisViolation, PotentialProfile, ProfileError, make_piece


def test_grid_last_node_is_L():
    g = Grid(50.0, 1e-3)
    assert g.nodes[0] == 1.0
    assert g.nodes[-1] == pytest.approx(50.0, abs=1e-12)
    assert g.interior.size == g.count - 1


@pytest.mark.parametrize("kw", [{"step": 0.0}, {"step": -1e-3}, {"r_max": 1.001, "step": 1e-3}])
def test_grid_rejects_bad_parameters(kw):
    with pytest.raises(GridError):
        Grid(**kw)


def test_grid_r_min_fixed():
    with pytest.raises(GridError):
        Grid(10.0, 0.1, r_min=0.5)


def test_square_well_samples_and_jumps():
    p = PotentialProfile.square_well(4, 1, 2)
    assert p.scalar(np.array([1.5, 2.5])).tolist() == [-4.0, 0.0]
    assert p.discontinuities() == [2.0]
    assert p.negative_part_sup() == pytest.approx(4.0)
    assert p.sup_norm() == pytest.approx(4.0)


def test_profile_json_roundtrip_is_exact():
    p = PotentialProfile.step([(2, 3, "-1.25"), (4, 5.5, 0.75)])
    q = PotentialProfile.loads(p.dumps())
    assert q.to_json() == p.to_json()
    assert json.loads(p.dumps())["support_end"] == "5.5"


def test_overlapping_pieces_rejected():
    with pytest.raises(ProfileError):
        PotentialProfile.from_pieces([make_piece(1, 3, "const", [1]), make_piece(2, 4, "const", [1])])


def test_e0_hypothesis():
    PotentialProfile.square_well(1, 2, 3).check_e0_hypothesis()
    with pytest.raises(HypothesisViolation, match="hypothesis violation"):
        PotentialProfile.square_well(1, 1.5, 3).check_e0_hypothesis()
    two = PotentialProfile.step([(1, 2, [[0, 0], [0, -2]])], n=2)
    two.check_e0_hypothesis()


def test_integral_00():
    p = PotentialProfile.step([(2, 3, -1), (4, 6, 0.5)])
    assert p.integral_00(1.0) == pytest.approx(0.0)
    assert p.integral_00(2.5) == pytest.approx(-0.5 + 1.0)


def test_operator_matches_dense_matvec():
    p = PotentialProfile.step([(1.5, 2.5, [[1, 0.3], [0.3, -2]])], n=2)
    op = assemble_operator(p, Grid(4.0, 0.05))
    rng = np.random.default_rng(0)
    u = rng.standard_normal((op.grid.count - 1, 2))
    assert np.allclose(op.dense() @ u.reshape(-1), op.matvec(u).reshape(-1))
    dense = op.dense()
    assert np.allclose(dense, dense.T)


def test_free_operator_spectrum_is_dirichlet_laplacian():
    op = assemble_operator(PotentialProfile.zero(), Grid(2.0, 0.01))
    w = np.linalg.eigvalsh(op.dense())
    m = np.arange(1, w.size + 1)
    exact = 4 / op.h**2 * np.sin(m * np.pi * op.h / 2) ** 2
    assert np.allclose(np.sort(w), exact, rtol=1e-10)


def test_from_samples_accepts_full_and_interior():
    g = Grid(3.0, 0.1)
    full = DiscreteOperator.from_samples(g, np.ones(g.count + 1))
    inner = DiscreteOperator.from_samples(g, np.ones(g.count - 1))
    assert np.array_equal(full.potential, inner.potential)
    with pytest.raises(GridError):
        DiscreteOperator.from_samples(g, np.ones(5))


def test_sample_potential_shape():
    g = Grid(3.0, 0.5)
    assert sample_potential(PotentialProfile.square_well(1, 2, 3), g).shape == (g.count + 1, 1, 1)
