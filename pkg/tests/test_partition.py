from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from halflab.corpus import layer_corpus, profile_from_components
from halflab.layers import build_and_fill, build_layers
from halflab.partition import PartitionError, assemble, build_partition, partition_certificates
from halflab.potential import PotentialProfile


@pytest.fixture(scope="module")
def single_well():
    v = PotentialProfile.square_well(1, 40, 41)
    system, _ = build_and_fill(v)
    return v, system, build_partition(system)


def test_requires_filled_system():
    system = build_layers(PotentialProfile.square_well(1, 40, 41))
    with pytest.raises(PartitionError):
        build_partition(system)


def test_breakpoints_are_exact_middle_thirds(single_well):
    _, _, pu = single_well
    for rp in pu.ramps:
        assert isinstance(rp.p, Fraction)
        assert rp.p - rp.lo == rp.hi - rp.q == Fraction(rp.hi - rp.lo, 3)


def test_sum_to_one_and_gradient_bounds(single_well):
    _, _, pu = single_well
    cert = partition_certificates(pu)
    assert cert["sum_to_one_max_error"] <= 1e-12
    assert cert["per_overlap_ok"] and cert["total_ok"] and cert["supports_ok"]
    for item in cert["per_overlap"]:
        assert item["gradient"] == pytest.approx(item["gradient_quad"], rel=1e-3)


def test_functions_are_bounded_and_supported(single_well):
    _, system, pu = single_well
    f = pu.functions()
    for arr in f["phi"] + f["psi"]:
        assert arr.min() >= 0 and arr.max() <= 1
    for j in range(len(pu.owners)):
        lo, hi = pu.support(j)
        x = np.arange(system.n_nodes + 1, dtype=float)
        outside = (x < float(lo)) | (x > float(hi))
        assert np.all(pu.theta(j, x)[outside] == 0)


def test_csv_columns(single_well):
    _, system, pu = single_well
    head = pu.to_csv(stride=100).splitlines()[0].split(",")
    assert head[0] == "r"
    assert sum(c.startswith("phi_") for c in head) == len(system.layers)
    assert sum(c.startswith("psi_") for c in head) == len(system.gaps)


def test_assembly_identity_at_fine_grid():
    v = PotentialProfile.square_well(1, 40, 41)
    system, _ = build_and_fill(v, step=1e-3)
    pu = build_partition(system)
    asm = assemble(system, pu, v)
    assert asm.identity_residual < 1e-6
    assert asm.certificates["p_l1_bound"]["ok"]
    assert asm.certificates["final_identity"] < 1e-10


def test_assembly_on_case1_merge():
    v = profile_from_components([("well", 40, 41, -0.8), ("well", 70, 71, -1.0)])
    system, _ = build_and_fill(v)
    pu = build_partition(system)
    asm = assemble(system, pu, v)
    assert asm.identity_residual < 1e-6
    assert all(asm.certificates[k]["ok"] for k in ("p_l1_bound", "A_l2_bound", "local_A_bound"))


def test_partition_with_w():
    sc = layer_corpus(1)[0]
    w = PotentialProfile.step([(20, 25, 0.05)])
    system, _ = build_and_fill(sc["v"], w)
    pu = build_partition(system)
    asm = assemble(system, pu, sc["v"], w)
    assert asm.identity_residual < 1e-6


def test_missing_decomposition_is_named(single_well, monkeypatch):
    v, system, pu = single_well
    import halflab.partition as part

    def broken(*a, **k):
        raise part.RiccatiError("boom")

    monkeypatch.setattr(part, "decompose", broken)
    with pytest.raises(PartitionError, match="dependency: no Riccati decomposition for layer 0"):
        assemble(system, pu, v)
