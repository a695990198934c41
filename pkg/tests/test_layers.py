import math

import numpy as np
import pytest

from halflab.corpus import layer_corpus, profile_from_components
from halflab.layers import (
    LayerError,
    build_and_fill,
    build_layers,
    cells,
    range_bottom,
    replay,
    separation_diagnostic,
    structural_invariants,
    window_search,
)
from halflab.potential import PotentialProfile


def cases(system):
    return [e["case"] for e in system.history if e["op"] == "case"]


def test_cells_rounds_up():
    assert cells(1.0, 0.1) == 10
    assert cells(1.05, 0.1) == 11
    assert cells(6 / math.sqrt(0.25), 1e-2) == 1200


def test_range_bottom_free_is_dirichlet_laplacian():
    h = 1e-2
    q = np.zeros(1001)
    expected = 4 / h**2 * math.sin(math.pi * h / (2 * 10.0)) ** 2
    assert range_bottom(q, 0, 1000, h) == pytest.approx(expected, rel=1e-10)


def test_window_search_well_inside_range():
    h = 1e-2
    r = 1 + h * np.arange(10001)
    q = np.where((r >= 50) & (r < 51), -1.0, 0.0)
    w = window_search(q, 0, 10000, h)
    gamma = math.sqrt(-range_bottom(q, 0, 10000, h))
    assert w.hi - w.lo == cells(6 / gamma, h)
    assert 1 + w.lo * h <= 50 and 1 + w.hi * h >= 51
    assert w.bottom <= -0.5 * gamma**2
    assert w.rd_lhs <= w.rd_rhs


def test_window_search_requires_negative_bottom():
    with pytest.raises(LayerError, match="precondition"):
        window_search(np.zeros(2001), 0, 2000, 1e-2)


def test_zero_potential_has_only_omega0():
    system, report = build_and_fill(PotentialProfile.zero())
    assert len(system.layers) == 1
    assert all(ok for ok, _ in report["filled"].values())


def test_single_well_case4_layer_and_tail_gap():
    system, report = build_and_fill(PotentialProfile.square_well(1, 40, 41))
    assert cases(system) == [4]
    assert len(system.layers) == 2
    l1 = system.layers[1]
    assert system.r(l1.lo) <= 40 and system.r(l1.hi) >= 41
    assert any(not g.bounded for g in system.gaps)
    for group in ("prefill", "filled", "spectral"):
        assert all(ok for ok, _ in report[group].values()), group


def two_wells(far):
    return profile_from_components([("well", 40, 41, -0.8), ("well", far, far + 1, -1.0)])


def test_separated_wells_give_disjoint_layers():
    system, report = build_and_fill(two_wells(95))
    assert cases(system) == [2, 4]
    assert all(ok for ok, _ in report["filled"].values())


def test_close_wells_merge_by_case1():
    system, report = build_and_fill(two_wells(70))
    assert cases(system) == [2, 1]
    assert all(ok for ok, _ in report["filled"].values())
    assert all(ok for ok, _ in report["spectral"].values())


def test_eps_nonincreasing_and_width_bounds():
    system, _ = build_and_fill(layer_corpus(3)[2]["v"])
    eps = [l.eps for l in system.layers]
    assert all(b <= a for a, b in zip(eps, eps[1:]))
    for l in system.layers[1:]:
        assert l.width(system.h) <= 67 / math.sqrt(l.eps) + system.h


def test_sum_bound_against_eigenvalues():
    system, _ = build_and_fill(layer_corpus(5)[4]["v"])
    assert system.sum_sqrt_eps() <= system.eigen_bound()


def test_replay_and_determinism():
    v = layer_corpus(2)[1]["v"]
    a, _ = build_and_fill(v)
    b, _ = build_and_fill(v)
    assert a.to_json() == b.to_json()
    assert replay(a).to_json() == a.to_json()


def test_trace_streams_decisions():
    seen = []
    build_layers(PotentialProfile.square_well(1, 40, 41), trace=seen.append)
    ops = [e["op"] for e in seen]
    assert ops[0] == "init" and "case" in ops and ops[-1] == "stop"


def test_structural_invariants_detect_corruption():
    system, _ = build_and_fill(PotentialProfile.square_well(1, 40, 41))
    from dataclasses import replace

    bad = replace(system, layers=system.layers[:1] + (replace(system.layers[1], eps=system.layers[0].eps * 2),))
    inv = structural_invariants(bad)
    assert not inv["eps_nonincreasing"][0]


def test_separation_is_only_a_diagnostic():
    system, report = build_and_fill(layer_corpus(19)[18]["v"])
    diag = separation_diagnostic(system)
    assert isinstance(diag, dict)
    assert all(ok for ok, _ in report["filled"].values())
