"""Command-line experiment runner.

Every subcommand writes its artifacts (CSV data, SVG plots, a ``summary.txt``)
into ``--out`` and exits with 0 on success, 2 on a failed precondition, 3 on
non-convergence and 4 on a failed reduction.  Failures still write the
summary and whatever data exist at that point.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import obstruction
from .atlas import demo_atlas_spec, load_atlas, parse_atlas, rotation_atlas_spec, trivial_atlas_spec
from .bundle import (
    BUNDLE_FLOW,
    FamilyError,
    ReductionError,
    check_orbit_preservation,
    max_adjacent_distance,
    reduce_bundle,
    representative_independence,
)
from .cartan import DEFAULT_DEPTH, NORTH, cartan_isometry, check_equivariance, check_isometry, frame_defect
from .flow import FlowConfig, FlowNotConverged, FlowTrace, PinchingError, normalize_to_curvature_one, run_flow_to_round
from .geometry import ConformalMetricS2, gauss_curvature
from .harmonics import DEFAULT_L, HarmonicField
from .milnor import MilnorMetricS3, total_volume
from .mobius import Mobius
from .samples import random_pinched_metric

log = logging.getLogger(__name__)

EXIT_OK, EXIT_PRECONDITION, EXIT_NOT_CONVERGED, EXIT_REDUCTION = 0, 2, 3, 4

ATLAS_PRESETS = {
    "demo": lambda n: demo_atlas_spec(n),
    "demo-rp": lambda n: demo_atlas_spec(n, rp_mode=True),
    "trivial": trivial_atlas_spec,
    "rotation": rotation_atlas_spec,
}


@dataclasses.dataclass(frozen=True)
class RunConfig:
    subcommand: str
    L: int = DEFAULT_L
    flow: FlowConfig = FlowConfig()
    input: str | None = None  # atlas or fragment file
    out: Path = Path("out")
    seed: int = 0
    sequential: bool = False
    options: dict = dataclasses.field(default_factory=dict)

    @property
    def workers(self) -> int:
        return 1 if self.sequential else (os.cpu_count() or 1)

    @property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


# --- output helpers -----------------------------------------------------------------

def _write(cfg: RunConfig, name: str, text: str) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / name
    path.write_text(text)
    return path


def _summary(cfg: RunConfig, status: str, lines: list[str]) -> None:
    text = "\n".join([f"status: {status}", *lines]) + "\n"
    _write(cfg, "summary.txt", text)
    print(text, end="")


def _table(rows: list[tuple[str, object]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["quantity", "value"])
    for k, v in rows:
        w.writerow([k, repr(float(v)) if isinstance(v, (float, np.floating)) else v])
    return buf.getvalue()


def _plot_trace(cfg: RunConfig, trace: FlowTrace, name: str, title: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "fiberround"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    r = np.maximum(np.asarray(trace.residual), 1e-300)
    ax.semilogy(trace.times, r, marker=".", lw=1)
    ax.axhline(cfg.flow.convergence_tol, color="gray", ls="--", lw=0.8, label="tolerance")
    ax.set_xlabel("flow time")
    ax.set_ylabel("curvature residual")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    cfg.out.mkdir(parents=True, exist_ok=True)
    fig.savefig(cfg.out / name, format="svg", metadata={"Date": None})
    plt.close(fig)


def _parse_floats(text: str, n: int | None = None) -> list[float]:
    vals = [float(x) for x in text.split(",") if x.strip()]
    if n is not None and len(vals) != n:
        raise ValueError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _parse_modes(text: str) -> dict[tuple[int, int], float]:
    """``"2,0,0.05;3,1,0.02"`` -> {(2, 0): 0.05, (3, 1): 0.02}."""
    modes = {}
    for item in filter(None, (s.strip() for s in text.split(";"))):
        l, m, c = item.split(",")
        modes[(int(l), int(m))] = float(c)
    return modes


# --- flow ---------------------------------------------------------------------------

def _initial_s2(cfg: RunConfig) -> ConformalMetricS2:
    init = cfg.options.get("init", "random")
    even = bool(cfg.options.get("even", True))
    if init == "round":
        return ConformalMetricS2.round(cfg.L)
    if init == "random":
        return random_pinched_metric(cfg.rng, cfg.L, max_sup=float(cfg.options.get("amplitude", 0.1)), even=even)
    if init == "modes":
        modes = _parse_modes(cfg.options.get("modes") or "")
        even = all(l % 2 == 0 for l, _ in modes)
        return ConformalMetricS2(HarmonicField.from_modes(modes, cfg.L), antipodal_even=even)
    raise ValueError(f"unknown initial metric {init!r}")


def _trace_lines(trace: FlowTrace) -> list[str]:
    return [
        f"steps: {trace.steps}",
        f"final time: {trace.times[-1]:.6g}",
        f"final residual: {trace.residual[-1]:.3e}",
        f"max area drift per unit time: {trace.max_volume_drift_rate():.3e}",
        f"max Gauss-Bonnet defect: {max(trace.gauss_bonnet):.3e}",
        f"max symmetry defect: {max(trace.symmetry_defect):.3e}",
    ]


def cmd_flow_s2(cfg: RunConfig) -> int:
    try:
        g0 = _initial_s2(cfg)
    except ValueError as exc:
        _summary(cfg, "precondition failed", [str(exc)])
        return EXIT_PRECONDITION
    try:
        limit, trace = run_flow_to_round(g0, cfg.flow)
    except PinchingError as exc:
        _summary(cfg, "precondition failed", [str(exc)])
        return EXIT_PRECONDITION
    except FlowNotConverged as exc:
        _write(cfg, "flow_s2_trace.csv", exc.trace.to_csv())
        _plot_trace(cfg, exc.trace, "flow_s2_convergence.svg", "surface flow (not converged)")
        _summary(cfg, "not converged", [str(exc), *_trace_lines(exc.trace)])
        return EXIT_NOT_CONVERGED
    _write(cfg, "flow_s2_trace.csv", trace.to_csv())
    _plot_trace(cfg, trace, "flow_s2_convergence.svg", "surface flow")
    K = gauss_curvature(normalize_to_curvature_one(limit))
    _summary(cfg, "converged", [*_trace_lines(trace), f"sup|K - 1| after rescaling: {np.max(np.abs(K - 1.0)):.3e}"])
    return EXIT_OK


def cmd_flow_s3(cfg: RunConfig) -> int:
    try:
        lam = _parse_floats(cfg.options.get("lambdas", "1,1,0.8"), 3)
        m0 = MilnorMetricS3.from_array(lam)
        limit, trace = run_flow_to_round(m0, cfg.flow)
    except (ValueError, PinchingError) as exc:
        _summary(cfg, "precondition failed", [str(exc)])
        return EXIT_PRECONDITION
    except FlowNotConverged as exc:
        _write(cfg, "flow_s3_trace.csv", exc.trace.to_csv())
        _plot_trace(cfg, exc.trace, "flow_s3_convergence.svg", "homogeneous flow (not converged)")
        _summary(cfg, "not converged", [str(exc)])
        return EXIT_NOT_CONVERGED
    _write(cfg, "flow_s3_trace.csv", trace.to_csv())
    _plot_trace(cfg, trace, "flow_s3_convergence.svg", "homogeneous flow")
    # volume is conserved, so the round limit has lam* = (lam1 lam2 lam3)^(1/3)
    oracle = float(np.prod(lam)) ** (1.0 / 3.0)
    lims = limit.lambdas
    _summary(cfg, "converged", [
        f"steps: {trace.steps}",
        f"final time: {trace.times[-1]:.6g}",
        "limit lambda: " + ", ".join(f"{x:.12g}" for x in lims),
        f"volume-oracle lambda: {oracle:.12g}",
        f"max |lambda - oracle|: {np.max(np.abs(lims - oracle)):.3e}",
        f"relative volume drift: {abs(total_volume(limit) / total_volume(m0) - 1.0):.3e}",
    ])
    return EXIT_OK


# --- Cartan ---------------------------------------------------------------------

def _cartan_input(cfg: RunConfig) -> ConformalMetricS2:
    kind = cfg.options.get("metric", "round")
    if kind == "round":
        return ConformalMetricS2.round(cfg.L)
    if kind == "mobius":
        rot = _parse_floats(cfg.options.get("rotvec") or "0,0,0", 3)
        boost = _parse_floats(cfg.options.get("boost") or "0,0,0", 3)
        return Mobius.from_params(rot, boost).pullback_round(cfg.L)
    if kind == "random-mobius":
        from .mobius import random_mobius

        return random_mobius(cfg.rng).pullback_round(cfg.L)
    if kind == "modes":
        modes = _parse_modes(cfg.options.get("modes") or "")
        return ConformalMetricS2(HarmonicField.from_modes(modes, cfg.L), antipodal_even=all(l % 2 == 0 for l, _ in modes))
    raise ValueError(f"unknown metric {kind!r}")


def cmd_cartan(cfg: RunConfig) -> int:
    try:
        g = _cartan_input(cfg)
        phi = cartan_isometry(g, depth=int(cfg.options.get("depth", DEFAULT_DEPTH)), source=cfg.options.get("metric", "round"))
    except (ValueError, RuntimeError) as exc:
        _summary(cfg, "precondition failed", [str(exc)])
        return EXIT_PRECONDITION
    round_metric = ConformalMetricS2.round(g.L)
    rows = [
        ("pullback_residual", check_isometry(phi, g, round_metric)),
        ("base_point_error", float(np.max(np.abs(phi(NORTH[None]) - NORTH)))),
        ("frame_defect", frame_defect(phi, g)),
        ("identity_distance", float(np.max(np.abs(phi.images - phi.nodes)))),
    ]
    if g.antipodal_even:
        rows.append(("equivariance_deviation", check_equivariance(phi)))
    _write(cfg, "cartan_report.csv", _table(rows))
    _write(cfg, "sphere_map.txt", phi.to_text())
    _summary(cfg, "ok", [f"{k}: {v:.3e}" for k, v in rows])
    return EXIT_OK


# --- reduction --------------------------------------------------------------------

def _load_atlas(cfg: RunConfig):
    if cfg.input:
        return load_atlas(cfg.input)
    name = cfg.options.get("preset", "demo")
    if name not in ATLAS_PRESETS:
        raise ValueError(f"unknown atlas preset {name!r}; choose from {sorted(ATLAS_PRESETS)}")
    return parse_atlas(ATLAS_PRESETS[name](int(cfg.options.get("samples", 64))))


def cmd_reduce(cfg: RunConfig) -> int:
    try:
        desc = _load_atlas(cfg)
    except (OSError, ValueError, KeyError) as exc:
        _summary(cfg, "precondition failed", [f"cannot load atlas: {exc}"])
        return EXIT_PRECONDITION
    try:
        result = reduce_bundle(desc, cfg.flow, workers=cfg.workers)
    except PinchingError as exc:
        _summary(cfg, "precondition failed", [str(exc)])
        return EXIT_PRECONDITION
    except FamilyError as exc:
        code = {"flow": EXIT_NOT_CONVERGED, "cartan": EXIT_REDUCTION}.get(exc.stage, EXIT_PRECONDITION)
        where = f" (chart {exc.chart}, sample {exc.sample})" if exc.sample is not None else ""
        _summary(cfg, f"{exc.stage or 'family'} failure", [f"{exc}{where}"])
        return code
    except ReductionError as exc:
        buf = io.StringIO()
        np.savetxt(buf, exc.raw_images, delimiter=",", header="x,y,z", comments="")
        _write(cfg, "failed_beta_images.csv", buf.getvalue())
        _summary(cfg, "reduction failed", [f"{exc} on overlap ({exc.i}, {exc.j}) at sample {exc.sample}"])
        return EXIT_REDUCTION
    cocycle, report = result.cocycle, result.cocycle_report
    _write(cfg, "cocycle.csv", cocycle.to_csv())
    lines = [
        f"samples: {desc.atlas.base.size}",
        f"rp_mode: {desc.atlas.rp_mode}",
        f"max family inconsistency: {result.validation.max_discrepancy:.3e}",
        f"max orthogonality residual: {cocycle.max_residual:.3e}",
        f"min raw transition defect: {cocycle.min_raw_defect:.3e}",
        f"cocycle identity/inverse/triple: {report.identity_error:.3e} / {report.inverse_error:.3e} / {report.triple_error:.3e}",
        f"max adjacent change of beta: {max_adjacent_distance(cocycle, desc.atlas):.3e}",
    ]
    if desc.atlas.rp_mode:
        lines += [
            f"representative independence: {representative_independence(cocycle):.3e}",
            f"orbit preservation: {check_orbit_preservation(result.fmaps):.3e}",
        ]
    if not report.passed:
        kind, idx, b, err = report.failures[0]
        _summary(cfg, "reduction failed", [*lines, f"first failure: {kind} {idx} at sample {b}: {err:.3e}"])
        return EXIT_REDUCTION
    _summary(cfg, "pass", lines)
    return EXIT_OK


# --- obstruction ------------------------------------------------------------------

def cmd_obstruction(cfg: RunConfig) -> int:
    try:
        problem = obstruction.load_problem(cfg.input) if cfg.input else obstruction.preset(cfg.options.get("preset", "example-3.3"))
        report, frag = obstruction.decide(problem, propagate=not cfg.options.get("no_propagate", False))
    except (OSError, ValueError, KeyError) as exc:
        _summary(cfg, "precondition failed", [str(exc)])
        return EXIT_PRECONDITION
    lines = [report.line(), *(f"derived: {d}" for d in frag.derivations)]
    _write(cfg, "verdict.txt", report.verdict.value + "\n")
    _summary(cfg, report.verdict.value, lines)
    return EXIT_OK


COMMANDS = {
    "flow-s2": cmd_flow_s2,
    "flow-s3": cmd_flow_s3,
    "cartan": cmd_cartan,
    "reduce": cmd_reduce,
    "obstruction": cmd_obstruction,
}


# --- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--L", type=int, default=DEFAULT_L, help="spherical harmonic degree cutoff")
    common.add_argument("--dt-max", type=float, default=None, help="largest flow time step")
    common.add_argument("--tol", type=float, default=None, help="curvature residual at which the flow stops")
    common.add_argument("--max-time", type=float, default=None, help="flow time limit")
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument("--sequential", action="store_true", help="single worker; bit-reproducible output")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--config", type=Path, default=None,
                        help="JSON file whose keys (flag names with underscores) override the flags")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fiberround", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("flow-s2", parents=[common], help="normalized flow of a conformal metric on S^2")
    p.add_argument("--init", choices=["random", "round", "modes"], default="random")
    p.add_argument("--modes", help="harmonic modes of u as 'l,m,c;l,m,c'")
    p.add_argument("--amplitude", type=float, default=0.1, help="sup bound for random initial data")
    p.add_argument("--odd", dest="even", action="store_false", help="allow odd modes in random initial data")

    p = sub.add_parser("flow-s3", parents=[common], help="normalized flow of a left-invariant metric on S^3")
    p.add_argument("--lambdas", default="1,1,0.8", help="metric eigenvalues 'l1,l2,l3'")

    p = sub.add_parser("cartan", parents=[common], help="isometry of a round metric onto the standard sphere")
    p.add_argument("--metric", choices=["round", "mobius", "random-mobius", "modes"], default="round")
    p.add_argument("--rotvec", help="rotation vector of the Mobius map")
    p.add_argument("--boost", help="boost vector of the Mobius map")
    p.add_argument("--modes", help="harmonic modes of u as 'l,m,c;l,m,c'")
    p.add_argument("--depth", type=int, default=DEFAULT_DEPTH, help="icosphere depth of the sampled map")

    p = sub.add_parser("reduce", parents=[common], help="reduce the transition cocycle of a bundle atlas")
    p.add_argument("--atlas", dest="input", help="atlas description file (JSON)")
    p.add_argument("--preset", choices=sorted(ATLAS_PRESETS), default="demo")
    p.add_argument("--samples", type=int, default=64, help="base samples for preset atlases")

    p = sub.add_parser("obstruction", parents=[common], help="decide the covering-fibration conditions")
    p.add_argument("--fragment", dest="input", help="exact-sequence fragment file (JSON)")
    p.add_argument("--preset", choices=sorted(obstruction.PRESETS), default="example-3.3")
    p.add_argument("--no-propagate", action="store_true", help="skip the exactness closure")
    return parser


_COMMON = {"subcommand", "L", "dt_max", "tol", "max_time", "seed", "sequential", "out", "config", "verbose", "input"}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    values = vars(args).copy()
    if args.config is not None:
        overrides = json.loads(Path(args.config).read_text())
        unknown = set(overrides) - set(values)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(overrides)
    if values["subcommand"] == "reduce":
        base = BUNDLE_FLOW
    elif values["subcommand"] == "flow-s3":
        base = FlowConfig(stepper="RK4-ODE", dt_max=0.05)
    else:
        base = FlowConfig()
    flow = dataclasses.replace(
        base,
        **{k: v for k, v in (("dt_max", values["dt_max"]), ("convergence_tol", values["tol"]),
                             ("max_time", values["max_time"])) if v is not None},
    )
    return RunConfig(
        subcommand=values["subcommand"],
        L=int(values["L"]),
        flow=flow,
        input=values.get("input"),
        out=Path(values["out"]),
        seed=int(values["seed"]),
        sequential=bool(values["sequential"]),
        options={k: v for k, v in values.items() if k not in _COMMON},
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        # failures always leave an artifact, even before a config exists
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.txt").write_text(f"status: precondition failed\ncannot build config: {exc}\n")
        return EXIT_PRECONDITION
    return COMMANDS[cfg.subcommand](cfg)


if __name__ == "__main__":
    sys.exit(main())
