"""Bundle atlases over sampled bases, and their JSON description files.

An atlas is described by chart trivialisations ``h_i(b)``, each a Lorentz
matrix ``(rotation [composed with -I]) o boost`` whose parameters are small
expressions in the base coordinate.  Transitions are ``alpha_ij = h_j h_i^-1``,
which makes ``alpha_ii = id``, ``alpha_ji = alpha_ij^-1`` and the triple
cocycle identity hold at parameter level.

Expression vocabulary: numbers, ``pi``, ``+ - * /``, ``cos``, ``sin`` and the
base variables.  On a circle base these are ``b`` (angle in ``[0, 2 pi)``) and
``s`` (chart-local angle ``b - centre`` wrapped to ``(-pi, pi]``); on a
sphere base ``x, y, z``.
"""

from __future__ import annotations

import ast
import dataclasses
import json
import math
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial.transform import Rotation

from .cartan import icosphere
from .geometry import ConformalMetricS2
from .harmonics import DEFAULT_L, HarmonicField
from .mobius import Mobius, boost_matrix, orthogonal_matrix

FORMAT = "fiberround-atlas"
VERSION = 1

_FUNCTIONS = {"cos": np.cos, "sin": np.sin}
_CONSTANTS = {"pi": math.pi}
_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply, ast.Div: np.divide}


def compile_expression(text: str, variables: tuple[str, ...]) -> Callable[..., np.ndarray]:
    """Parse ``text`` into a vectorised function of ``variables`` (keyword arguments)."""
    if isinstance(text, (int, float)):
        value = float(text)
        return lambda **env: np.full(np.shape(next(iter(env.values()))), value)
    tree = ast.parse(str(text), mode="eval")

    def build(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            value = float(node.value)
            return lambda env: value
        if isinstance(node, ast.Name):
            if node.id in _CONSTANTS:
                value = _CONSTANTS[node.id]
                return lambda env: value
            if node.id in variables:
                name = node.id
                return lambda env: env[name]
            raise ValueError(f"unknown name {node.id!r} in {text!r} (allowed: {', '.join(variables)})")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = build(node.operand)
            sign = -1.0 if isinstance(node.op, ast.USub) else 1.0
            return lambda env: sign * inner(env)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            op = _BINOPS[type(node.op)]
            left, right = build(node.left), build(node.right)
            return lambda env: op(left(env), right(env))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCTIONS and len(node.args) == 1 and not node.keywords):
            fn = _FUNCTIONS[node.func.id]
            arg = build(node.args[0])
            return lambda env: fn(arg(env))
        raise ValueError(f"unsupported construct {ast.dump(node)} in {text!r}")

    body = build(tree.body)

    def evaluate(**env):
        shape = np.shape(next(iter(env.values())))
        return np.broadcast_to(np.asarray(body(env), dtype=float), shape).copy()

    return evaluate


# --- base spaces and charts -------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class SampledBase:
    kind: str  # "circle" or "sphere"
    coords: np.ndarray  # circle: angles (n,); sphere: unit vectors (n, 3)
    edges: np.ndarray  # adjacency pairs (m, 2)

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def circle(cls, n: int) -> "SampledBase":
        k = np.arange(n)
        return cls("circle", 2.0 * math.pi * k / n, np.stack([k, (k + 1) % n], axis=1))

    @classmethod
    def sphere(cls, depth: int) -> "SampledBase":
        V, F = icosphere(depth)
        e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
        e = np.unique(np.sort(e, axis=1), axis=0)
        return cls("sphere", np.array(V), e)

    @property
    def variables(self) -> tuple[str, ...]:
        return ("b",) if self.kind == "circle" else ("x", "y", "z")

    def env(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        if self.kind == "circle":
            return {"b": self.coords[idx]}
        x = self.coords[idx]
        return {"x": x[:, 0], "y": x[:, 1], "z": x[:, 2]}

    def spacing(self) -> float:
        if self.kind == "circle":
            return 2.0 * math.pi / self.size
        a, b = self.coords[self.edges[:, 0]], self.coords[self.edges[:, 1]]
        return float(np.max(np.arccos(np.clip(np.sum(a * b, axis=1), -1.0, 1.0))))


@dataclasses.dataclass(frozen=True, eq=False)
class Chart:
    name: str
    center: object  # angle (circle) or unit vector (sphere)
    radius: float
    members: np.ndarray  # sample indices, increasing

    def local_env(self, base: SampledBase) -> dict[str, np.ndarray]:
        env = base.env(self.members)
        if base.kind == "circle":
            env["s"] = np.angle(np.exp(1j * (env["b"] - float(self.center))))
        return env


def _members(base: SampledBase, center, radius: float) -> np.ndarray:
    if base.kind == "circle":
        d = np.abs(np.angle(np.exp(1j * (base.coords - float(center)))))
    else:
        c = np.asarray(center, dtype=float)
        c = c / np.linalg.norm(c)
        d = np.arccos(np.clip(base.coords @ c, -1.0, 1.0))
    return np.flatnonzero(d < radius)


def trivialization_matrices(spec: dict, env: dict[str, np.ndarray]) -> np.ndarray:
    """Lorentz matrices ``diag(1, +-R(rotvec)) @ boost(b)`` for every sample of a chart."""
    variables = tuple(env)
    n = len(next(iter(env.values())))
    rot = np.stack([compile_expression(e, variables)(**env) for e in spec.get("rotation", [0, 0, 0])], axis=1)
    bst = np.stack([compile_expression(e, variables)(**env) for e in spec.get("boost", [0, 0, 0])], axis=1)
    sign = -1.0 if spec.get("reflect", False) else 1.0
    Q = sign * Rotation.from_rotvec(rot.reshape(n, 3)).as_matrix()
    return np.stack([orthogonal_matrix(Q[k]) @ boost_matrix(bst[k]) for k in range(n)])


@dataclasses.dataclass(frozen=True, eq=False)
class BundleAtlas:
    """Charts over a sampled base with Lorentz trivialisations ``h_i(b)``."""

    base: SampledBase
    charts: tuple[Chart, ...]
    trivializations: tuple[np.ndarray, ...]  # per chart, (len(members), 4, 4)
    rp_mode: bool = False

    def __post_init__(self):
        covered = np.zeros(self.base.size, dtype=bool)
        for c in self.charts:
            covered[c.members] = True
        if not covered.all():
            raise ValueError(f"charts do not cover base samples {np.flatnonzero(~covered).tolist()}")
        if self.rp_mode:
            for i, H in enumerate(self.trivializations):
                boost = np.max(np.abs(H[:, 0, 1:])) if H.size else 0.0
                if boost > 1e-12:
                    raise ValueError(f"rp_mode requires orthogonal trivialisations; chart {i} has a boost")

    def charts_at(self, b: int) -> list[int]:
        return [i for i, c in enumerate(self.charts) if b in self._position(i)]

    def _position(self, i: int) -> dict[int, int]:
        cache = self.__dict__.setdefault("_pos", {})
        if i not in cache:
            cache[i] = {int(b): k for k, b in enumerate(self.charts[i].members)}
        return cache[i]

    def home_chart(self, b: int) -> int:
        return self.charts_at(b)[0]

    def trivialization(self, i: int, b: int) -> Mobius:
        return Mobius(self.trivializations[i][self._position(i)[b]])

    def overlap(self, i: int, j: int) -> np.ndarray:
        return np.intersect1d(self.charts[i].members, self.charts[j].members)

    def transition(self, i: int, j: int, b: int) -> Mobius:
        """``alpha_ij(b) = h_j(b) h_i(b)^-1``."""
        return self.trivialization(j, b) @ self.trivialization(i, b).inverse()

    def pairs(self) -> list[tuple[int, int]]:
        n = len(self.charts)
        return [(i, j) for i in range(n) for j in range(n) if self.overlap(i, j).size]

    def triples(self) -> list[tuple[int, int, int]]:
        n = len(self.charts)
        out = []
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if len({i, j, k}) == 3:
                        common = np.intersect1d(self.overlap(i, j), self.charts[k].members)
                        if common.size:
                            out.append((i, j, k))
        return out


@dataclasses.dataclass(frozen=True, eq=False)
class AtlasDescription:
    """A parsed description file: the atlas plus the fibre metric ``g_b`` in the reference frame."""

    atlas: BundleAtlas
    reference_metrics: tuple[ConformalMetricS2, ...]
    source: dict


def fiber_metrics(spec: dict, base: SampledBase, rp_mode: bool) -> tuple[ConformalMetricS2, ...]:
    L = int(spec.get("L", DEFAULT_L))
    idx = np.arange(base.size)
    env = base.env(idx)
    coeffs = np.zeros((base.size, (L + 1) ** 2))
    for l, m, expr in spec.get("modes", []):
        if not (0 <= l <= L and -l <= m <= l):
            raise ValueError(f"mode ({l}, {m}) outside degree {L}")
        f = compile_expression(expr, base.variables)
        coeffs[:, l * l + l + m] += f(**env)
        if base.kind == "circle":
            seam = f(b=np.array([0.0, 2.0 * math.pi]))
            if abs(seam[1] - seam[0]) > 1e-12:
                raise ValueError(f"fibre metric coefficient {expr!r} is not 2*pi-periodic in b")
    return tuple(ConformalMetricS2(HarmonicField(c), antipodal_even=rp_mode) for c in coeffs)


def parse_atlas(spec: dict) -> AtlasDescription:
    if spec.get("format") != FORMAT:
        raise ValueError(f"not an atlas description (format {spec.get('format')!r})")
    if int(spec.get("version", 0)) != VERSION:
        raise ValueError(f"unsupported atlas version {spec.get('version')!r}")
    b = spec["base"]
    if b["kind"] == "circle":
        base = SampledBase.circle(int(b["samples"]))
    elif b["kind"] == "sphere":
        base = SampledBase.sphere(int(b.get("depth", 1)))
    else:
        raise ValueError(f"unknown base kind {b['kind']!r}")
    rp_mode = bool(spec.get("rp_mode", False))
    charts, triv = [], []
    for k, (c, t) in enumerate(zip(spec["charts"], spec["trivializations"], strict=True)):
        chart = Chart(c.get("name", f"U{k}"), c["center"], float(c["radius"]), _members(base, c["center"], float(c["radius"])))
        charts.append(chart)
        triv.append(trivialization_matrices(t, chart.local_env(base)))
    atlas = BundleAtlas(base, tuple(charts), tuple(triv), rp_mode)
    return AtlasDescription(atlas, fiber_metrics(spec.get("fiber_metric", {}), base, rp_mode), spec)


def load_atlas(path: str | Path) -> AtlasDescription:
    return parse_atlas(json.loads(Path(path).read_text()))


def demo_atlas_spec(samples: int = 64, rp_mode: bool = False) -> dict:
    """Three arcs over a circle, each of half-width 135 degrees (so triple overlaps exist).

    The default variant uses boosted trivialisations, so no transition is an
    isometry; the ``rp_mode`` variant uses rotations and reflections (the only
    conformal maps commuting with ``-I``) and an antipodally even fibre metric.
    """
    charts = [{"name": f"U{k}", "center": 2.0 * math.pi * k / 3.0, "radius": 0.75 * math.pi} for k in range(3)]
    if rp_mode:
        triv = [
            {"rotation": ["0", "0", "0.3*s"]},
            {"rotation": ["0.4*s", "0", "0.1"], "reflect": True},
            {"rotation": ["0.1*cos(b)", "0.5*s", "0.2"]},
        ]
        modes = [[2, 0, "0.05*cos(b)"], [4, 2, "0.03"], [2, 2, "0.02*sin(b)"]]
    else:
        triv = [
            {"rotation": ["0", "0", "0.3*s"], "boost": ["0.25*cos(b)", "0.25*sin(b)", "0.1"]},
            {"rotation": ["0.4*s", "0", "0"], "boost": ["0.2*sin(b)", "0.1", "-0.25 + 0.05*cos(b)"], "reflect": True},
            {"rotation": ["0", "0.5*s", "0.2"], "boost": ["-0.3", "0.2*cos(b)", "0.2*sin(b)"]},
        ]
        modes = [[2, 0, "0.05*cos(b)"], [4, 2, "0.03"], [3, 1, "0.02*sin(b)"]]
    return {
        "format": FORMAT,
        "version": VERSION,
        "base": {"kind": "circle", "samples": samples},
        "rp_mode": rp_mode,
        "charts": charts,
        "trivializations": triv,
        "fiber_metric": {"L": DEFAULT_L, "modes": modes},
    }


def trivial_atlas_spec(samples: int = 16) -> dict:
    """Product bundle: identity trivialisations and a constant fibre metric."""
    spec = demo_atlas_spec(samples)
    spec["trivializations"] = [{} for _ in spec["charts"]]
    spec["fiber_metric"] = {"L": DEFAULT_L, "modes": [[2, 0, "0.05"]]}
    return spec


def rotation_atlas_spec(samples: int = 16) -> dict:
    """Orthogonal trivialisations with the round fibre metric."""
    spec = demo_atlas_spec(samples)
    spec["trivializations"] = [
        {"rotation": ["0", "0", "0.3*s"]},
        {"rotation": ["0.4*s", "0.2", "0"]},
        {"rotation": ["0", "0.5*s", "0.1*cos(b)"], "reflect": True},
    ]
    spec["fiber_metric"] = {"L": DEFAULT_L, "modes": []}
    return spec
