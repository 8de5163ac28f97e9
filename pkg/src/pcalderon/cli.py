"""Command line entry point.

Verbs ``forward``, ``enclose``, ``probe`` and ``bem-check`` run one method on the
scenario of a configuration file and write CSV (and optionally SVG) artifacts;
``verify`` runs the acceptance checks that belong to the configured method.
Exit codes: 0 success, 1 error or failed check, 2 success with warnings.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import acceptance, dnmap, enclosure, fem, layer, probe
from .config import ConfigError, ExperimentConfig, parse_config
from .geometry import overlay_svg, polygon_csv
from .mesh import triangulate

log = logging.getLogger("pcalderon")

OUT_DIR_ENV = "PCALDERON_OUT_DIR"
VERB_METHOD = {"forward": "forward-only", "enclose": "enclosure", "probe": "probe", "bem-check": "bem-crosscheck"}


@dataclass(frozen=True)
class RunWarning:
    code: str
    message: str


@dataclass
class RunReport:
    method: str
    timings: dict = field(default_factory=dict)
    mesh: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def warn(self, code: str, message: str) -> None:
        self.warnings.append(RunWarning(code, message))
        log.warning("%s: %s", code, message)

    @property
    def failed_checks(self) -> list:
        return [c for c in self.checks if not c.passed]

    @property
    def exit_code(self) -> int:
        if self.failed_checks:
            return 1
        return 2 if self.warnings else 0

    def to_json(self) -> str:
        data = {
            "method": self.method,
            "timings": self.timings,
            "mesh": self.mesh,
            "warnings": [asdict(w) for w in self.warnings],
            "checks": [{"criterion": c.number, "name": c.name, "passed": c.passed,
                        "metrics": {k: _jsonable(v) for k, v in c.metrics.items()}} for c in self.checks],
            "artifacts": self.artifacts,
            "summary": {k: _jsonable(v) for k, v in self.summary.items()},
            "exit_code": self.exit_code,
        }
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _jsonable(v):
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


def write_atomic(path: Path, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Stage:
    def __init__(self, report: RunReport, name: str):
        self.report, self.name = report, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.report.timings[self.name] = round(time.perf_counter() - self.t0, 3)
        return False


def _mesh_stats(mesh) -> dict:
    return {"nodes": int(mesh.n_nodes), "triangles": int(mesh.n_triangles), "h_max": float(mesh.h_max),
            "max_circumdiameter": float(mesh.circumdiameters.max())}


# ---------------------------------------------------------------------------
# methods


def _run_forward(cfg: ExperimentConfig, out: Path, svg: bool, report: RunReport) -> None:
    sc = cfg.scenario
    with _Stage(report, "mesh"):
        mesh = triangulate(sc, cfg.forward["h_max"])
    report.mesh = _mesh_stats(mesh)
    traces = acceptance.fourier_traces(mesh, cfg.forward["modes"])
    labels = [f"{fn}{k}" for k in cfg.forward["modes"] for fn in ("cos", "sin")]
    with _Stage(report, "pairing"):
        P = dnmap.pairing_matrix(sc, mesh, traces)
    with _Stage(report, "gap"):
        solver = dnmap.GapSolver(sc, mesh)
        rows = ["trace,pairing,free_pairing,gap"]
        for lab, tr in zip(labels, traces):
            g = solver.gap(dnmap.BoundaryData(tr)).value
            rows.append(f"{lab},{P[labels.index(lab), labels.index(lab)]:.15g},"
                        f"{dnmap.free_pair(mesh, tr, tr, sc.p):.15g},{g:.15g}")
    with _Stage(report, "solution"):
        sol = acceptance._solve(sc, mesh, traces[0])
    _emit(out, "pairing.csv", dnmap.pairing_csv(P, labels), report)
    _emit(out, "gap.csv", "\n".join(rows) + "\n", report)
    _emit(out, "solution.csv", fem.solution_csv(sol), report)
    _emit(out, "flux.csv", fem.flux_csv(sol), report)
    if svg:
        _emit(out, "scenario.svg", overlay_svg(sc), report)
    if not sol.converged:
        report.warn("SOLVER_NOT_CONVERGED", f"Newton stopped after {sol.iterations} iterations")


def _run_enclosure(cfg: ExperimentConfig, out: Path, svg: bool, report: RunReport, threads: int) -> None:
    sc, opts = cfg.scenario, cfg.enclosure
    fam = enclosure.MeshFamily(sc, opts["h_max"], opts["fine_factor"], opts["band_factor"])
    with _Stage(report, "meshes"):
        for tau in opts["tau_grid"]:
            fam.solver_for(float(tau))
    report.mesh = _mesh_stats(fam.mesh_for(float(opts["tau_grid"][-1])))
    with _Stage(report, "classify"):
        try:
            report.summary["verdict"] = enclosure.classify(sc, fam, tau_grid=tuple(opts["tau_grid"][:2])).verdict.value
        except enclosure.MixedSigns as exc:
            report.warn("MIXED_SIGNS", str(exc))
            report.summary["verdict"] = "mixed"
    if report.summary["verdict"] == "empty":
        hull = enclosure.HullEstimate(np.zeros((0, 2)), [], [])
        report.warn("EMPTY_INCLUSION", "indicators vanish; no hull to recover")
    else:
        with _Stage(report, "hull"):
            hull = enclosure.reconstruct_hull(sc, fam, opts["directions"], tuple(opts["tau_grid"]), workers=threads,
                                              noise=opts["noise"], seed=cfg.seed)
        for rho, reason in hull.dropped:
            report.warn("DIRECTION_DROPPED", f"direction ({rho[0]:.6f}, {rho[1]:.6f}): {reason}")
    report.summary["directions_kept"] = len(hull.estimates)
    _emit(out, "hull.csv", enclosure.hull_csv(hull), report)
    _emit(out, "polygon.csv", polygon_csv(hull.polygon), report)
    if svg:
        _emit(out, "hull.svg", overlay_svg(sc, polygon=hull.polygon), report)


def _run_probe(cfg: ExperimentConfig, out: Path, svg: bool, report: RunReport, threads: int) -> None:
    sc, opts = cfg.scenario, cfg.probe
    with _Stage(report, "mesh"):
        mesh = triangulate(sc, opts["h_max"] * 2.5, h_fine=opts["h_max"] / 2, band=0.1) if sc.inclusions \
            else triangulate(sc, opts["h_max"] * 2.5)
    report.mesh = _mesh_stats(mesh)
    needles = probe.chord_fan(sc.domain, opts["needles"], tube_radius=opts["tube_radius"],
                              taper=math.radians(opts["taper_deg"]))
    grid = acceptance.t_grid(opts["t_points"], opts["t_max"])
    with _Stage(report, "needles"):
        cloud = probe.reconstruct_boundary(sc, mesh, needles, grid, opts["k"], opts["factor"],
                                           opts["far_fraction"], workers=threads)
    report.summary["hits"] = len(cloud.points)
    report.summary["threshold"] = cloud.threshold
    _emit(out, "cloud.csv", probe.cloud_csv(cloud), report)
    _emit(out, "needles.csv", probe.needles_csv(cloud), report)
    if svg:
        _emit(out, "cloud.svg", overlay_svg(sc, points=cloud.points), report)


def _run_bem(cfg: ExperimentConfig, out: Path, svg: bool, report: RunReport) -> None:
    sc, opts = cfg.scenario, cfg.bem
    with _Stage(report, "fem_bem"):
        rows = acceptance.fem_bem_gaps(sc, opts["h_max"], opts["panels"], tuple(opts["modes"]))
    lines = ["mode,fem_gap,bem_gap,rel_diff"] + [f"{k},{a:.15g},{b:.15g},{d:.6g}" for k, a, b, d in rows]
    for k, _, _, d in rows:
        if d > 0.02:
            report.warn("BEM_FEM_MISMATCH", f"mode {k}: relative gap difference {d:.3%} exceeds 2%")
    with _Stage(report, "operators"):
        o, i = layer.scenario_curves(sc, opts["panels"], opts["panels"])
        system = layer.LayerSystem(o, i)
        n_oi, n_io, n_k = layer.operator_norm_estimates(system)
    report.summary.update({"norm_K_outer_inner": n_oi, "norm_K_inner_outer": n_io, "norm_K": n_k,
                           "capacity": layer.capacity(i, system.r)})
    if n_k >= 0.9:
        report.warn("WEAK_CONTRACTION", f"operator norm {n_k:.4f} >= 0.9; direct solve used")
    _emit(out, "bem.csv", "\n".join(lines) + "\n", report)
    _emit(out, "density.csv", layer.density_csv(i, system.eq_density_inner), report)
    if svg:
        _emit(out, "scenario.svg", overlay_svg(sc), report)


def _emit(out: Path, name: str, text: str, report: RunReport) -> None:
    write_atomic(out / name, text)
    report.artifacts.append(name)


def run(cfg: ExperimentConfig, method: str | None = None, out_dir=None, svg: bool | None = None,
        threads: int | None = None) -> RunReport:
    """Run one method and write its artifacts; returns the report (also written as report.json)."""
    method = method or cfg.method
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    svg = cfg.output["svg"] if svg is None else svg
    threads = cfg.threads if threads is None else threads
    report = RunReport(method)
    if method == "forward-only":
        _run_forward(cfg, out, svg, report)
    elif method == "enclosure":
        _run_enclosure(cfg, out, svg, report, threads)
    elif method == "probe":
        _check_probe(cfg)
        _run_probe(cfg, out, svg, report, threads)
    elif method == "bem-crosscheck":
        layer.scenario_curves(cfg.scenario, 16, 16)
        _run_bem(cfg, out, svg, report)
    else:
        raise ValueError(f"unknown method {method!r}")
    write_atomic(out / "report.json", report.to_json())
    return report


def _check_probe(cfg: ExperimentConfig) -> None:
    if cfg.scenario.p != 2.0 or cfg.scenario.has_insulators:
        raise probe.ProbeUnsupported("needle probing needs p = 2 and superconducting inclusions only")


def verify(cfg: ExperimentConfig, out_dir=None, criteria=None) -> RunReport:
    """Run the acceptance checks of the configured method and print one line per criterion."""
    numbers = acceptance.BY_METHOD[cfg.method] if criteria is None else criteria
    report = RunReport(cfg.method)
    for n in numbers:
        res = acceptance.CRITERIA[n]()
        report.checks.append(res)
        report.timings[f"criterion_{n}"] = round(res.seconds, 3)
        print(res.line(), flush=True)
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    write_atomic(out / "verify.json", report.to_json())
    return report


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcalderon", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment configuration")
    common.add_argument("--out-dir", help=f"artifact directory (overrides ${OUT_DIR_ENV} and the config)")
    common.add_argument("--seed", type=int, help="seed for randomized families (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads (overrides the config)")
    common.add_argument("--svg", action="store_true", default=None, help="also write SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("forward", "enclose", "bem-check"):
        sub.add_parser(verb, parents=[common])
    pr = sub.add_parser("probe", parents=[common])
    pr.add_argument("--needles", type=int, help="number of chords in the fan")
    pr.add_argument("--t-points", type=int, help="points of the needle parameter grid")
    pr.add_argument("--k", type=int, help="Runge sequence index")
    ver = sub.add_parser("verify", parents=[common])
    ver.add_argument("--criteria", help="comma-separated criterion numbers (default: those of the method)")
    return parser


def _resolve_out(args, cfg: ExperimentConfig) -> Path:
    if args.out_dir:
        return Path(args.out_dir)
    if os.environ.get(OUT_DIR_ENV):
        return Path(os.environ[OUT_DIR_ENV])
    return cfg.out_dir


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"pcalderon: invalid configuration {args.config}:\n{exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        if args.threads < 1:
            print("pcalderon: --threads must be at least 1", file=sys.stderr)
            return 1
        cfg.threads = args.threads
    if args.verb == "probe":
        for key, val in (("needles", args.needles), ("t_points", args.t_points), ("k", args.k)):
            if val is not None:
                if val < 1:
                    print(f"pcalderon: --{key.replace('_', '-')} must be positive", file=sys.stderr)
                    return 1
                cfg.probe[key] = val
    out = _resolve_out(args, cfg)
    try:
        if args.verb == "verify":
            criteria = [int(c) for c in args.criteria.split(",")] if args.criteria else None
            report = verify(cfg, out, criteria)
            print(f"{len(report.checks) - len(report.failed_checks)}/{len(report.checks)} criteria passed")
        else:
            report = run(cfg, VERB_METHOD[args.verb], out, args.svg, cfg.threads)
            for w in report.warnings:
                print(f"warning [{w.code}] {w.message}", file=sys.stderr)
            print(f"{args.verb}: wrote {', '.join(report.artifacts)} to {out}")
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit code 1
        log.debug("run failed", exc_info=True)
        print(f"pcalderon: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
