"""Command-line front end: scenario JSON in, CSV/JSON artifacts and a margin table out.

Exit codes: 0 when every stage check passes, 2 when an inequality or
invariant check fails, 1 on any execution error.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .corpus import DEFAULT_SEED, bump_corpus, layer_corpus, scalar_corpus
from .eigen import EigenError, negative_spectrum
from .entropy import default_eigen_grid, sum_rule_check
from .layers import build_and_fill
from .operator import Grid, GridError, assemble_operator
from .partition import PartitionError, assemble, build_partition, partition_certificates
from .potential import HypothesisViolation, PotentialProfile, ProfileError
from .riccati import RiccatiError, decompose, weighted_estimate
from .spectral import default_lambda_grid, density_jost, free_density

STAGES = ("eig", "measure", "sumrule", "riccati", "layers", "partition")
REQUIRES = {"sumrule": ("measure", "eig"), "partition": ("layers",)}
SUMRULE_TOL = 1e-6
FREE_DENSITY_TOL = 1e-6


class ScenarioError(RuntimeError):
    """Execution error carrying its message prefix (``unknown stage:``, ``missing dependency:``, ...)."""


@dataclass
class Check:
    stage: str
    name: str
    value: float
    bound: float
    ok: bool
    kind: str = ">="  # value >= bound, "<=" for upper bounds, "info" for logged-only rows

    @property
    def margin(self) -> float:
        if self.kind == "<=":
            return self.bound - self.value
        if self.kind == ">=":
            return self.value - self.bound
        return None

    def to_json(self) -> dict:
        return {"stage": self.stage, "name": self.name, "value": self.value, "bound": self.bound,
                "relation": self.kind, "margin": self.margin, "ok": self.ok}


@dataclass
class Context:
    name: str
    profile: PotentialProfile
    w: PotentialProfile | None
    params: dict
    seed: int
    grid_h: float | None = None
    grid_L: float | None = None
    trace: bool = False
    results: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)

    def check(self, stage, name, value, bound, kind=">="):
        value, bound = float(value), float(bound)
        ok = True if kind == "info" else (value <= bound if kind == "<=" else value >= bound)
        self.checks.append(Check(stage, name, value, bound, bool(ok), kind))

    def flag(self, stage, name, ok, detail=None):
        self.checks.append(Check(stage, name, 1.0 if ok else 0.0, 1.0, bool(ok), "=="))


# --- scenario loading ------------------------------------------------------------------------


def _load_potential(source, base: Path, seed: int) -> PotentialProfile | None:
    if source is None:
        return None
    if isinstance(source, str):
        path = (base / source) if not Path(source).is_absolute() else Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ScenarioError(f"unreadable file: {path}: {exc.strerror or exc}") from exc
        try:
            return PotentialProfile.loads(text)
        except (ValueError, ProfileError) as exc:
            raise ScenarioError(f"unreadable file: {path}: {exc}") from exc
    if isinstance(source, dict) and "corpus" in source:
        kind, index = source["corpus"], int(source.get("index", 0))
        if kind == "scalar":
            return scalar_corpus(index + 1, seed)[index]
        if kind == "bump":
            return bump_corpus(index + 1, seed)[index]
        if kind == "layer":
            return layer_corpus(index + 1, seed)[index]["v"]
        raise ScenarioError(f"invalid scenario: unknown corpus {kind!r}")
    if isinstance(source, dict) and source.get("kind") == "zero":
        return PotentialProfile.zero()
    if isinstance(source, dict):
        try:
            return PotentialProfile.loads(json.dumps(source))
        except (ValueError, ProfileError) as exc:
            raise ScenarioError(f"invalid scenario: bad inline potential: {exc}") from exc
    raise ScenarioError(f"invalid scenario: cannot interpret potential {source!r}")


def load_scenario(path, seed: int | None = None) -> tuple[dict, Path]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"unreadable file: {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"unreadable file: {path}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("invalid scenario: top level must be an object")
    return doc, path.parent


def validate_pipeline(pipeline) -> tuple:
    if not isinstance(pipeline, (list, tuple)) or not pipeline:
        raise ScenarioError("invalid scenario: pipeline must be a nonempty list")
    for s in pipeline:
        if s not in STAGES:
            raise ScenarioError(f"unknown stage: {s!r} (expected one of {', '.join(STAGES)})")
    for s in pipeline:
        for dep in REQUIRES.get(s, ()):
            if dep not in pipeline:
                raise ScenarioError(f"missing dependency: stage {s!r} requires {dep!r}")
    return tuple(s for s in STAGES if s in pipeline)


# --- stages --------------------------------------------------------------------------------


def stage_eig(ctx: Context):
    g = ctx.params.get("grid", {})
    default = default_eigen_grid(ctx.profile)
    L = ctx.grid_L or g.get("L", default.r_max)
    h = ctx.grid_h or g.get("h", default.step)
    rep = negative_spectrum(assemble_operator(ctx.profile, Grid(float(L), float(h))))
    ctx.results["eig"] = rep
    ctx.artifacts["eigen.json"] = io.dumps({"seed": ctx.seed, **rep.to_json()})
    ctx.check("eig", "count", rep.count, 0, "info")


def stage_measure(ctx: Context):
    m = ctx.params.get("measure", {})
    lam = default_lambda_grid(float(m.get("lo", 0.05)), float(m.get("hi", 100.0)), int(m.get("count", 2000)))
    dens = density_jost(ctx.profile, lam)
    ctx.results["measure"] = dens
    ctx.artifacts["density.csv"] = dens.to_csv()
    ctx.artifacts["measure.json"] = io.dumps({"seed": ctx.seed, "method": dens.method, "points": int(lam.size),
                                              "mass": dens.mass(), "meta": dict(dens.meta)})
    ctx.check("measure", "min_density", float(np.min(dens.density)), 0.0, ">=")
    if all(p.is_zero() for p in ctx.profile.pieces):
        ref = free_density(lam)
        keep = ref > 1e-8 * np.max(ref)
        err = float(np.max(np.abs(dens.density[keep] / ref[keep] - 1.0)))
        ctx.check("measure", "free_closed_form_rel_error", err, FREE_DENSITY_TOL, "<=")


def stage_sumrule(ctx: Context):
    p = ctx.params.get("sumrule", {})
    try:
        rep = sum_rule_check(ctx.profile, float(p.get("a", 0.5)), float(p.get("b", 20.0)),
                             eigen=ctx.results["eig"], d=int(p.get("d", 3)))
    except HypothesisViolation as exc:
        raise ScenarioError(str(exc)) from exc
    ctx.results["sumrule"] = rep
    ctx.artifacts["sumrule.json"] = io.dumps({"seed": ctx.seed, **rep.to_json()})
    ctx.check("sumrule", "relative_margin", rep.relative_margin, -SUMRULE_TOL, ">=")
    ctx.check("sumrule", "margin_literal", rep.margin, 0.0, "info")


def stage_riccati(ctx: Context):
    p = ctx.params.get("riccati")
    if not p or "interval" not in p or "gamma" not in p:
        raise ScenarioError("invalid scenario: riccati stage needs params.riccati.interval and gamma")
    q = ctx.profile if ctx.w is None else ctx.profile.plus(ctx.w)
    d = int(p.get("d", 3))
    dec = decompose(q, tuple(p["interval"]), float(p["gamma"]), d, float(p.get("step", 1e-3)))
    ctx.results["riccati"] = dec
    ctx.artifacts["riccati.csv"] = dec.to_csv()
    doc = {"seed": ctx.seed, "interval": list(dec.interval), "gamma": dec.gamma, "d": d, "slope": dec.slope,
           "residual": dec.residual}
    ctx.check("riccati", "positive_solution_min", float(np.min(dec.positive_solution)), 0.0, ">=")
    ctx.check("riccati", "residual", dec.residual, 0.0, "info")
    if "inner" in p:
        est = weighted_estimate(dec, tuple(p["inner"]), ctx.w)
        doc["weighted_estimate"] = est.to_json()
        ctx.check("riccati", "weighted_estimate_margin", est.margin, 0.0, ">=")
    ctx.artifacts["riccati.json"] = io.dumps(doc)


def stage_layers(ctx: Context):
    p = ctx.params.get("layers", {})
    kw = {k: p[k] for k in ("extent", "tol_eps", "step", "d") if k in p}
    if ctx.trace:
        kw["trace"] = _trace_printer
    system, report = build_and_fill(ctx.profile, ctx.w, **kw)
    ctx.results["layers"] = system
    doc = {"seed": ctx.seed, **system.to_json(), "invariants": {}}
    for group in ("prefill", "filled", "spectral"):
        for name, (ok, detail) in report[group].items():
            ctx.flag("layers", f"{group}.{name}", ok)
            doc["invariants"][f"{group}.{name}"] = {"ok": bool(ok), "detail": detail}
    ok, failed = report["per_iteration"]
    ctx.flag("layers", "per_iteration", ok)
    doc["invariants"]["per_iteration"] = {"ok": bool(ok), "detail": failed}
    doc["diagnostics"] = report["diagnostics"]
    ctx.check("layers", "sum_sqrt_eps", system.sum_sqrt_eps(), system.eigen_bound(), "<=")
    ctx.artifacts["layers.json"] = io.dumps(doc)


def _trace_printer(entry: dict):
    if entry.get("op") != "check":
        sys.stderr.write("trace " + json.dumps(entry, default=float, sort_keys=True) + "\n")
        sys.stderr.flush()


def stage_partition(ctx: Context):
    system = ctx.results["layers"]
    pu = build_partition(system)
    cert = partition_certificates(pu)
    asm = assemble(system, pu, ctx.profile, ctx.w)
    ctx.artifacts["partition.csv"] = pu.to_csv(int(ctx.params.get("partition", {}).get("stride", 1)))
    ctx.artifacts["assembly.json"] = io.dumps({"seed": ctx.seed, "partition": cert, **asm.to_json()})
    ctx.check("partition", "sum_to_one_error", cert["sum_to_one_max_error"], 1e-12, "<=")
    for i, item in enumerate(cert["per_overlap"]):
        ctx.check("partition", f"overlap_{i}_gradient", item["gradient"], item["bound"], "<=")
    ctx.check("partition", "total_gradient", cert["total_gradient"], cert["total_bound"], "<=")
    ctx.check("partition", "identity_residual", asm.identity_residual, 1e-6, "<=")
    for key in ("p_l1_bound", "A_l2_bound", "local_A_bound"):
        c = asm.certificates[key]
        ctx.check("partition", key, c["value"], c["bound"], "<=")


RUNNERS = {"eig": stage_eig, "measure": stage_measure, "sumrule": stage_sumrule,
           "riccati": stage_riccati, "layers": stage_layers, "partition": stage_partition}


# --- coordinator ---------------------------------------------------------------------------


def margin_table(checks) -> str:
    head = f"{'stage':<10} {'check':<36} {'value':>16} {'bound':>16} {'margin':>16} status"
    rows = [head, "-" * len(head)]
    for c in checks:
        status = "info" if c.kind == "info" else ("pass" if c.ok else "FAIL")
        margin = "" if c.margin is None else f"{c.margin:16.8e}"
        rows.append(f"{c.stage:<10} {c.name[:36]:<36} {c.value:16.8e} {c.bound:16.8e} {margin:>16} {status}")
    return "\n".join(rows)


def run(scenario, out=None, trace: bool = False, grid_h=None, grid_L=None, seed=None, stdout=None) -> int:
    """Execute a scenario file; returns the process exit code."""
    stdout = stdout or sys.stdout
    try:
        doc, base = load_scenario(scenario)
        seed = int(seed if seed is not None else doc.get("seed", DEFAULT_SEED))
        pipeline = validate_pipeline(doc.get("pipeline"))
        profile = _load_potential(doc.get("potential"), base, seed)
        if profile is None:
            raise ScenarioError("invalid scenario: missing potential")
        w = _load_potential(doc.get("w"), base, seed)
        out_dir = Path(out or doc.get("output") or (base / f"{doc.get('name', 'scenario')}-out"))
        ctx = Context(str(doc.get("name", Path(scenario).stem)), profile, w, dict(doc.get("params", {})), seed,
                      grid_h, grid_L, trace)
        for stage in pipeline:
            try:
                RUNNERS[stage](ctx)
            except ScenarioError:
                raise
            except HypothesisViolation as exc:
                raise ScenarioError(str(exc)) from exc
            except (EigenError, GridError, ProfileError, RiccatiError, PartitionError, ValueError, RuntimeError) as exc:
                raise ScenarioError(f"execution error: stage {stage}: {exc}") from exc
    except ScenarioError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    status = "pass" if all(c.ok for c in ctx.checks) else "violation"
    files = []
    for name in sorted(ctx.artifacts):
        path = io.write_text(out_dir / name, ctx.artifacts[name])
        files.append({"file": name, "sha256": io.sha256_file(path)})
    report = {"scenario": ctx.name, "seed": seed, "pipeline": list(pipeline), "status": status,
              "checks": [c.to_json() for c in ctx.checks], "artifacts": files}
    io.write_text(out_dir / "report.json", io.dumps(report))
    stdout.write(margin_table(ctx.checks) + "\n")
    stdout.write(f"status: {status}  artifacts: {out_dir}\n")
    return 0 if status == "pass" else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="halflab", description="Run a half-line operator scenario and write artifacts.")
    ap.add_argument("--scenario", required=True, help="scenario JSON file")
    ap.add_argument("--out", help="output directory (default: <scenario dir>/<name>-out)")
    ap.add_argument("--trace", action="store_true", help="stream layer-builder decisions to stderr")
    ap.add_argument("--grid-h", type=float, help="eigen grid step")
    ap.add_argument("--grid-L", type=float, help="eigen grid right end")
    ap.add_argument("--seed", type=int, help=f"corpus seed (default {DEFAULT_SEED})")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.scenario, args.out, args.trace, args.grid_h, args.grid_L, args.seed)


if __name__ == "__main__":
    sys.exit(main())
