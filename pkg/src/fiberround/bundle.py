"""Fibrewise flow, Cartan maps and reduction of the transition cocycle.

Chart metrics are ``G_i(b) = (h_i(b))_* g_b``.  After flowing every fibre to
a round metric, ``f_i(b)`` is the Cartan isometry of ``G_i(b)`` and

    beta_ij(b) = f_j(b) o alpha_ij(b) o f_i(b)^-1

is an isometry of the standard sphere, i.e. an element of O(3), which is
certified by an orthogonal Procrustes fit on sampled points.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import io
import logging

import numpy as np

from .atlas import AtlasDescription, BundleAtlas
from .cartan import (
    CartanIsometry,
    SphereMap,
    cartan_isometry,
    check_equivariance,
    icosphere,
)
from .flow import FlowConfig, FlowNotConverged, FlowTrace, PinchingError, normalize_to_curvature_one, run_flow_to_round
from .geometry import ConformalMetricS2, pinching_report_s2
from .procrustes import fit_orthogonal

log = logging.getLogger(__name__)

CONSISTENCY_TOL = 1e-10
ORTHOGONALITY_TOL = 1e-6
COCYCLE_TOL = 1e-6
EQUIVARIANCE_TOL = 1e-6
# the Cartan maps amplify the non-roundness of a flow limit near the cut
# point, so the pipeline flows further than the generic default
BUNDLE_FLOW = FlowConfig(convergence_tol=1e-10, dt_max=0.1)
FIT_DEPTH = 3


class FamilyError(RuntimeError):
    def __init__(self, message: str, chart: int | None = None, sample: int | None = None, stage: str = ""):
        super().__init__(message)
        self.chart = chart
        self.sample = sample
        self.stage = stage  # "validation", "flow" or "cartan"


class ReductionError(RuntimeError):
    def __init__(self, message: str, i: int, j: int, sample: int, raw_images: np.ndarray):
        super().__init__(message)
        self.i, self.j, self.sample = i, j, sample
        self.raw_images = raw_images


# --- families -------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class FiberwiseMetricFamily:
    atlas: BundleAtlas
    metrics: dict  # (chart, sample) -> ConformalMetricS2

    @property
    def rp_mode(self) -> bool:
        return self.atlas.rp_mode

    def __getitem__(self, key: tuple[int, int]) -> ConformalMetricS2:
        return self.metrics[key]

    def replace(self, key: tuple[int, int], metric: ConformalMetricS2) -> "FiberwiseMetricFamily":
        metrics = dict(self.metrics)
        metrics[key] = metric
        return FiberwiseMetricFamily(self.atlas, metrics)


def family_from_reference(atlas: BundleAtlas, reference: tuple[ConformalMetricS2, ...]) -> FiberwiseMetricFamily:
    """Chart metrics ``G_i(b) = (h_i(b))_* g_b`` for every chart containing ``b``."""
    metrics = {}
    for i, chart in enumerate(atlas.charts):
        for b in chart.members:
            metrics[(i, int(b))] = atlas.trivialization(i, int(b)).push_forward(reference[int(b)])
    return FiberwiseMetricFamily(atlas, metrics)


def family_from_description(desc: AtlasDescription) -> FiberwiseMetricFamily:
    return family_from_reference(desc.atlas, desc.reference_metrics)


def _coeff_distance(a: ConformalMetricS2, b: ConformalMetricS2) -> float:
    L = max(a.L, b.L)
    return float(np.max(np.abs(a.u.resized(L).coeffs - b.u.resized(L).coeffs)))


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    max_discrepancy: float
    per_pair: dict  # (i, j) -> max discrepancy
    failures: list  # (i, j, sample, discrepancy)
    tol: float

    @property
    def passed(self) -> bool:
        return not self.failures


def validate_family(family: FiberwiseMetricFamily, tol: float = CONSISTENCY_TOL) -> ValidationReport:
    """Check ``(alpha_ij(b))_* G_i(b) = G_j(b)`` on every overlap sample."""
    atlas = family.atlas
    per_pair, failures = {}, []
    worst = 0.0
    for i, j in atlas.pairs():
        if i == j:
            continue
        pair_max = 0.0
        for b in atlas.overlap(i, j):
            b = int(b)
            pushed = atlas.transition(i, j, b).push_forward(family[(i, b)])
            d = _coeff_distance(pushed, family[(j, b)])
            pair_max = max(pair_max, d)
            if d >= tol:
                failures.append((i, j, b, d))
        per_pair[(i, j)] = pair_max
        worst = max(worst, pair_max)
    return ValidationReport(worst, per_pair, failures, tol)


# --- flow -------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class FlowedFamily:
    family: FiberwiseMetricFamily  # round, curvature one
    traces: dict  # sample -> FlowTrace of the home-chart run
    continuity_constant: float
    max_adjacent_distance: float


def _flow_sample(metric: ConformalMetricS2, cfg: FlowConfig) -> tuple[ConformalMetricS2, FlowTrace]:
    limit, trace = run_flow_to_round(metric, cfg)
    return normalize_to_curvature_one(limit), trace


def flow_family(family: FiberwiseMetricFamily, cfg: FlowConfig = BUNDLE_FLOW, workers: int | None = None) -> FlowedFamily:
    """Flow every fibre to a round metric of curvature one.

    Each sample is flowed once, in its home chart (lowest chart index); the
    limit is carried to the other charts by the transitions, which is exact
    because the normalised flow commutes with pushforward by diffeomorphisms.
    """
    atlas = family.atlas
    samples = range(atlas.base.size)
    homes = [atlas.home_chart(b) for b in samples]
    inputs = [family[(homes[b], b)] for b in samples]
    for b, m in enumerate(inputs):
        rep = pinching_report_s2(m)
        if not rep.pinched:
            raise PinchingError(f"fibre over sample {b} is not pinched (K_min = {rep.K_min:.4g})")
    try:
        results = _map(lambda m: _flow_sample(m, cfg), inputs, workers)
    except FlowNotConverged as exc:
        raise FamilyError(f"flow did not converge: {exc}", stage="flow") from exc
    metrics, traces = {}, {}
    for b, (limit, trace) in enumerate(results):
        h = homes[b]
        traces[b] = trace
        for i in atlas.charts_at(b):
            metrics[(i, b)] = limit if i == h else atlas.transition(h, i, b).push_forward(limit)
    rounded = FiberwiseMetricFamily(atlas, metrics)
    # continuity proxy: adjacent limits move at most C times as much as the inputs
    C, worst = 0.0, 0.0
    for a, b in atlas.base.edges:
        a, b = int(a), int(b)
        common = set(atlas.charts_at(a)) & set(atlas.charts_at(b))
        for i in common:
            d_in = _coeff_distance(family[(i, a)], family[(i, b)])
            d_out = _coeff_distance(metrics[(i, a)], metrics[(i, b)])
            worst = max(worst, d_out)
            if d_in > 1e-14:
                C = max(C, d_out / d_in)
    return FlowedFamily(rounded, traces, C, worst)


def _map(fn, items, workers):
    if not workers or workers <= 1:
        return [fn(x) for x in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --- Cartan maps ------------------------------------------------------------------

def build_f(family: FiberwiseMetricFamily, depth: int = FIT_DEPTH, workers: int | None = None) -> dict:
    """``f_i(b) = cartan_isometry(G_i(b))`` for every chart and sample."""
    keys = sorted(family.metrics)

    def build(key):
        i, b = key
        try:
            phi = cartan_isometry(family[key], depth=depth, source=f"chart {i} sample {b}")
        except (ValueError, RuntimeError) as exc:
            raise FamilyError(f"Cartan construction failed on chart {i}, sample {b}: {exc}", i, b, "cartan") from exc
        if family.rp_mode:
            dev = check_equivariance(phi)
            if dev >= EQUIVARIANCE_TOL:
                raise FamilyError(f"Cartan map on chart {i}, sample {b} is not equivariant ({dev:.2e})", i, b, "cartan")
        return phi

    return dict(zip(keys, _map(build, keys, workers)))


def check_orbit_preservation(fmaps: dict) -> float:
    """Max over all maps of ``d(f(-p), -f(p))``: antipodal pairs must go to antipodal pairs."""
    return max((check_equivariance(f) for f in fmaps.values()), default=0.0)


# --- reduction -------------------------------------------------------------------

def rp_canonical(M: np.ndarray) -> np.ndarray:
    """Representative of ``{M, -M}``: positive trace, else first nonzero entry positive."""
    tr = float(np.trace(M))
    if tr != 0.0:
        return M if tr > 0 else -M
    flat = M.ravel()
    nz = np.flatnonzero(flat != 0.0)
    return M if nz.size == 0 or flat[nz[0]] > 0 else -M


@dataclasses.dataclass(frozen=True)
class CocycleEntry:
    matrix: np.ndarray
    residual: float  # Procrustes fit residual of beta_ij(b)
    raw_defect: float  # Procrustes residual of alpha_ij(b) itself


@dataclasses.dataclass(frozen=True, eq=False)
class ReducedCocycle:
    entries: dict  # (i, j, sample) -> CocycleEntry
    rp_mode: bool

    def matrix(self, i: int, j: int, b: int) -> np.ndarray:
        return self.entries[(i, j, b)].matrix

    @property
    def max_residual(self) -> float:
        return max((e.residual for e in self.entries.values()), default=0.0)

    @property
    def min_raw_defect(self) -> float:
        return min((e.raw_defect for (i, j, _), e in self.entries.items() if i != j), default=0.0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "b"] + [f"m{r}{c}" for r in range(3) for c in range(3)] + ["residual"])
        for (i, j, b) in sorted(self.entries):
            e = self.entries[(i, j, b)]
            w.writerow([i, j, b] + [repr(float(x)) for x in e.matrix.ravel()] + [repr(float(e.residual))])
        return buf.getvalue()


def fit_points(depth: int = FIT_DEPTH) -> np.ndarray:
    return icosphere(depth)[0]


def reduce_cocycle(atlas: BundleAtlas, fmaps: dict, points: np.ndarray | None = None,
                   tol: float = ORTHOGONALITY_TOL, workers: int | None = None) -> ReducedCocycle:
    """Fit ``beta_ij(b) = f_j o alpha_ij o f_i^-1`` by an orthogonal matrix on every overlap sample."""
    x = fit_points() if points is None else points
    keys = [(i, j, int(b)) for i, j in atlas.pairs() for b in atlas.overlap(i, j)]

    def reduce(key):
        i, j, b = key
        alpha = atlas.transition(i, j, b)
        y = fmaps[(j, b)](alpha(fmaps[(i, b)].inverse(x)))
        fit = fit_orthogonal(x, y)
        if fit.residual >= tol:
            raise ReductionError(
                f"beta_{i}{j} at sample {b} is not orthogonal (Procrustes residual {fit.residual:.3e})", i, j, b, y)
        raw = 0.0 if i == j else fit_orthogonal(x, alpha(x)).residual
        M = rp_canonical(fit.matrix) if atlas.rp_mode else fit.matrix
        return CocycleEntry(M, fit.residual, raw)

    return ReducedCocycle(dict(zip(keys, _map(reduce, keys, workers))), atlas.rp_mode)


@dataclasses.dataclass(frozen=True)
class CocycleReport:
    identity_error: float
    inverse_error: float
    triple_error: float
    failures: list  # (kind, indices, sample, error)
    tol: float

    @property
    def passed(self) -> bool:
        return not self.failures


def _class_distance(A: np.ndarray, B: np.ndarray, rp: bool) -> float:
    d = float(np.max(np.abs(A - B)))
    return min(d, float(np.max(np.abs(A + B)))) if rp else d


def check_cocycle(c: ReducedCocycle, atlas: BundleAtlas, tol: float = COCYCLE_TOL) -> CocycleReport:
    rp = c.rp_mode
    failures = []
    ident = inv = triple = 0.0
    I = np.eye(3)
    for (i, j, b), e in sorted(c.entries.items()):
        if i == j:
            d = _class_distance(e.matrix, I, rp)
            ident = max(ident, d)
            if d >= tol:
                failures.append(("identity", (i, i), b, d))
        elif (j, i, b) in c.entries:
            d = _class_distance(c.matrix(j, i, b), e.matrix.T, rp)
            inv = max(inv, d)
            if d >= tol:
                failures.append(("inverse", (i, j), b, d))
    for i, j, k in atlas.triples():
        for b in np.intersect1d(atlas.overlap(i, j), atlas.charts[k].members):
            b = int(b)
            d = _class_distance(c.matrix(i, k, b), c.matrix(j, k, b) @ c.matrix(i, j, b), rp)
            triple = max(triple, d)
            if d >= tol:
                failures.append(("triple", (i, j, k), b, d))
    return CocycleReport(ident, inv, triple, failures, tol)


def representative_independence(c: ReducedCocycle) -> float:
    """Largest disagreement between the canonical classes of ``M`` and ``-M`` (zero when well defined)."""
    worst = 0.0
    for e in c.entries.values():
        worst = max(worst, float(np.max(np.abs(rp_canonical(e.matrix) - rp_canonical(-e.matrix)))))
    return worst


def max_adjacent_distance(c: ReducedCocycle, atlas: BundleAtlas, stride: int = 1) -> float:
    """Largest change of ``beta_ij`` between adjacent base samples (classes in rp mode).

    ``stride > 1`` (circle bases only) compares samples ``b`` and ``b + stride``
    for ``b`` a multiple of ``stride``, i.e. the coarser sampling obtained by
    keeping every ``stride``-th sample.
    """
    base = atlas.base
    if stride == 1:
        edges = [(int(a), int(b)) for a, b in base.edges]
    elif base.kind == "circle" and base.size % stride == 0:
        edges = [(b, (b + stride) % base.size) for b in range(0, base.size, stride)]
    else:
        raise ValueError("strided comparison needs a circle base whose size is a multiple of the stride")
    worst = 0.0
    for a, b in edges:
        for i, j in atlas.pairs():
            if (i, j, a) in c.entries and (i, j, b) in c.entries:
                worst = max(worst, _class_distance(c.matrix(i, j, a), c.matrix(i, j, b), c.rp_mode))
    return worst


# --- end to end ------------------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class ReductionResult:
    family: FiberwiseMetricFamily
    flowed: FlowedFamily
    fmaps: dict
    cocycle: ReducedCocycle
    cocycle_report: CocycleReport
    validation: ValidationReport


def reduce_bundle(desc: AtlasDescription, cfg: FlowConfig = BUNDLE_FLOW, depth: int = FIT_DEPTH,
                  workers: int | None = None) -> ReductionResult:
    family = family_from_description(desc)
    validation = validate_family(family)
    if not validation.passed:
        i, j, b, d = validation.failures[0]
        raise FamilyError(f"inconsistent family on overlap ({i}, {j}) at sample {b}: {d:.3e}", j, b, "validation")
    flowed = flow_family(family, cfg, workers)
    fmaps = build_f(flowed.family, depth, workers)
    cocycle = reduce_cocycle(desc.atlas, fmaps, fit_points(depth), workers=workers)
    return ReductionResult(family, flowed, fmaps, cocycle, check_cocycle(cocycle, desc.atlas), validation)
