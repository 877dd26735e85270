"""Becker–Gottlieb covering conditions on declared homotopy data.

A covering of the fibration ``F -> E -> B`` extending the universal cover of
``F`` exists exactly when ``i_*: pi_1(F) -> pi_1(E)`` is injective and
``p_*: pi_1(E) -> pi_1(B)`` has a right inverse.  Groups are finitely
generated abelian (``Z^r + Z/n1 + ...``) or opaque (``UnknownGroup``, used for
possibly nonabelian fundamental groups).  Maps are integer matrices between
abelian groups or declared property sets.  Three-valued answers are first
class: when the data do not decide a question the answer is ``Undecided``.

Generators of ``Z^r + Z/n1 + ... + Z/nk`` are ordered free part first, then
the torsion summands; a map matrix has one column per source generator.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import logging
import re
from pathlib import Path

import numpy as np

from . import snf

log = logging.getLogger(__name__)


class Decision(enum.Enum):
    YES = "Yes"
    NO = "No"
    UNDECIDED = "Undecided"

    @classmethod
    def of(cls, value: bool | None) -> "Decision":
        return cls.UNDECIDED if value is None else (cls.YES if value else cls.NO)


class Verdict(enum.Enum):
    COVERING_EXISTS = "CoveringExists"
    NO_COVERING = "NoCovering"
    UNDECIDED = "Undecided"


class Property(enum.Enum):
    ZERO = "zero"
    INJECTIVE = "injective"
    SURJECTIVE = "surjective"
    ISOMORPHISM = "isomorphism"


BASIC = (Property.ZERO, Property.INJECTIVE, Property.SURJECTIVE)


class InconsistencyError(ValueError):
    """Declared or derived facts contradict each other."""


# --- groups -----------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class FgAbGroup:
    rank: int = 0
    torsion: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "torsion", tuple(int(n) for n in self.torsion))
        if self.rank < 0:
            raise ValueError("rank must be nonnegative")
        if any(n < 2 for n in self.torsion):
            raise ValueError(f"invariant factors must be >= 2, got {self.torsion}")
        for a, b in zip(self.torsion, self.torsion[1:]):
            if b % a:
                raise ValueError(f"invariant factors must divide successively, got {self.torsion}")

    @classmethod
    def trivial(cls) -> "FgAbGroup":
        return cls()

    @property
    def ngens(self) -> int:
        return self.rank + len(self.torsion)

    @property
    def is_trivial(self) -> bool:
        return self.ngens == 0

    @property
    def is_free(self) -> bool:
        return not self.torsion

    def relations(self) -> np.ndarray:
        """Columns generate the relation lattice in ``Z^ngens``."""
        R = snf.int_matrix(np.zeros((self.ngens, len(self.torsion)), dtype=int), (self.ngens, len(self.torsion)))
        for k, n in enumerate(self.torsion):
            R[self.rank + k, k] = n
        return R

    def __str__(self) -> str:
        parts = ([f"Z^{self.rank}" if self.rank > 1 else "Z"] if self.rank else [])
        parts += [f"Z/{n}" for n in self.torsion]
        return " + ".join(parts) or "0"


@dataclasses.dataclass(frozen=True)
class UnknownGroup:
    """A group known only by name, possibly nonabelian; triviality may be derived."""

    name: str
    trivial: bool | None = None

    @property
    def is_trivial(self) -> bool | None:
        return self.trivial

    def __str__(self) -> str:
        return "?" if self.trivial is None else ("0" if self.trivial else "?(nontrivial)")


Group = FgAbGroup | UnknownGroup

_TERM = re.compile(r"^Z(?:\^(\d+))?$|^Z/(\d+)$")


def parse_group(text: str) -> Group:
    """``"Z^2 + Z/2 + Z/4"``, ``"Z"``, ``"0"``/``"1"``/``"trivial"``, or ``"?"``."""
    text = text.strip()
    if text in {"0", "1", "trivial"}:
        return FgAbGroup.trivial()
    if text.startswith("?"):
        return UnknownGroup(text[1:].strip() or "?")
    rank, torsion = 0, []
    for term in text.replace(" ", "").split("+"):
        m = _TERM.match(term)
        if not m:
            raise ValueError(f"cannot parse group term {term!r} in {text!r}")
        if m.group(2) is not None:
            n = int(m.group(2))
            if n != 1:
                torsion.append(n)
        else:
            rank += int(m.group(1) or 1)
    return FgAbGroup(rank, tuple(torsion))


# --- maps -------------------------------------------------------------------------

def _as_properties(items) -> frozenset[Property]:
    props = set()
    for p in items:
        p = Property(p) if not isinstance(p, Property) else p
        if p is Property.ISOMORPHISM:
            props |= {Property.INJECTIVE, Property.SURJECTIVE}
        else:
            props.add(p)
    return frozenset(props)


def _in_image(M: np.ndarray, v) -> bool:
    return snf.in_lattice(M, v)


def matrix_facts(source: FgAbGroup, target: FgAbGroup, M: np.ndarray) -> dict[Property, bool]:
    """Zero, injective and surjective, decided by Smith normal form."""
    RA, RB = source.relations(), target.relations()
    nB = target.ngens
    zero = all(_in_image(RB, M[:, k]) for k in range(M.shape[1]))
    # kernel: x with M x in im R_B, taken modulo im R_A
    big = snf.hstack(M, -RB if RB.size else RB, rows=nB)
    K = snf.kernel_basis(big)[: source.ngens]
    injective = all(_in_image(RA, K[:, k]) for k in range(K.shape[1]))
    cover = snf.hstack(M, RB, rows=nB)
    surjective = snf.smith_normal_form(cover).diagonal == (1,) * nB
    return {Property.ZERO: zero, Property.INJECTIVE: injective, Property.SURJECTIVE: surjective}


@dataclasses.dataclass(frozen=True, eq=False)
class MapSpec:
    """A homomorphism given by an integer matrix or by known properties.

    ``properties`` are facts known to hold and ``excluded`` facts known to
    fail.  When a matrix is given it decides everything and overrides any
    declaration.
    """

    source: Group
    target: Group
    matrix: np.ndarray | None = None
    properties: frozenset = frozenset()
    excluded: frozenset = frozenset()
    name: str = "map"

    def __post_init__(self):
        object.__setattr__(self, "properties", _as_properties(self.properties))
        object.__setattr__(self, "excluded", _as_properties(self.excluded))
        if self.matrix is not None:
            if not (isinstance(self.source, FgAbGroup) and isinstance(self.target, FgAbGroup)):
                raise ValueError(f"{self.name}: matrices are only accepted between f.g. abelian groups")
            M = snf.int_matrix(self.matrix, (self.target.ngens, self.source.ngens))
            RA, RB = self.source.relations(), self.target.relations()
            for k in range(RA.shape[1]):
                if not _in_image(RB, M.dot(RA[:, k])):
                    raise ValueError(f"{self.name}: matrix does not respect the relations of {self.source}")
            object.__setattr__(self, "matrix", M)
            facts = matrix_facts(self.source, self.target, M)
            declared = {p: True for p in self.properties} | {p: False for p in self.excluded}
            if any(facts[p] != v for p, v in declared.items()):
                log.warning("%s: declared properties disagree with the matrix; the matrix wins", self.name)
            object.__setattr__(self, "properties", frozenset(p for p, v in facts.items() if v))
            object.__setattr__(self, "excluded", frozenset(p for p, v in facts.items() if not v))
            return
        both = self.properties & self.excluded
        if both:
            raise InconsistencyError(f"{self.name}: {sorted(p.value for p in both)} both declared and excluded")
        # closing over the endpoints rejects e.g. zero + injective on a nontrivial source
        _close_map(dict(self.facts()), self.source, self.target, self.name)

    def facts(self) -> dict[Property, bool]:
        return {p: True for p in self.properties} | {p: False for p in self.excluded}

    def fact(self, p: Property) -> bool | None:
        if p is Property.ISOMORPHISM:
            a, b = self.fact(Property.INJECTIVE), self.fact(Property.SURJECTIVE)
            return False if False in (a, b) else (True if a and b else None)
        return self.facts().get(p)

    def with_facts(self, facts: dict[Property, bool], source: Group | None = None,
                   target: Group | None = None) -> "MapSpec":
        return dataclasses.replace(
            self,
            source=source or self.source,
            target=target or self.target,
            properties=frozenset(p for p, v in facts.items() if v),
            excluded=frozenset(p for p, v in facts.items() if not v),
        ) if self.matrix is None else dataclasses.replace(self, source=source or self.source, target=target or self.target)


def _close_map(facts: dict, source: Group, target: Group, name: str) -> None:
    """Apply the single-map rules once to ``facts``; raises on contradiction."""
    src, tgt = source.is_trivial, target.is_trivial
    Z, I, S = Property.ZERO, Property.INJECTIVE, Property.SURJECTIVE

    def need(p, value, why):
        if facts.get(p, value) != value:
            raise InconsistencyError(f"{name}: {why}, but it is declared {'not ' if value else ''}{p.value}")
        facts[p] = value

    if src:
        need(Z, True, "the source is trivial so the map is zero")
        need(I, True, "the source is trivial so the map is injective")
    if tgt:
        need(Z, True, "the target is trivial so the map is zero")
        need(S, True, "the target is trivial so the map is surjective")
    if facts.get(Z) and src is False:
        need(I, False, f"a zero map out of the nontrivial group {source} is not injective")
    if facts.get(Z) and tgt is False:
        need(S, False, f"a zero map onto the nontrivial group {target} is not surjective")


# --- the two conditions ------------------------------------------------------------

def check_injective(m: MapSpec) -> Decision:
    return Decision.of(m.fact(Property.INJECTIVE))


def section_matrix(m: MapSpec) -> np.ndarray | None:
    """Integer matrix ``S`` of a homomorphism with ``m o S = id``, or ``None``.

    Unknowns are ``S`` (nA x nB), ``Z`` (kA x kB) and ``W`` (kB x nB) with
    ``S R_B = R_A Z`` (``S`` is well defined on the target) and
    ``M S = I + R_B W`` (``m o S`` is the identity on the target).
    """
    A, B, M = m.source, m.target, m.matrix
    RA, RB = A.relations(), B.relations()
    nA, nB, kA, kB = A.ngens, B.ngens, RA.shape[1], RB.shape[1]
    nS, nZ, nW = nA * nB, kA * kB, kB * nB
    s_idx = lambda a, b: a * nB + b
    z_idx = lambda p, q: nS + p * kB + q
    w_idx = lambda q, b: nS + nZ + q * nB + b
    rows, rhs = [], []
    for a in range(nA):
        for q in range(kB):
            r = [0] * (nS + nZ + nW)
            for b in range(nB):
                r[s_idx(a, b)] += RB[b, q]
            for p in range(kA):
                r[z_idx(p, q)] -= RA[a, p]
            rows.append(r)
            rhs.append(0)
    for c in range(nB):
        for b in range(nB):
            r = [0] * (nS + nZ + nW)
            for a in range(nA):
                r[s_idx(a, b)] += M[c, a]
            for q in range(kB):
                r[w_idx(q, b)] -= RB[c, q]
            rows.append(r)
            rhs.append(int(c == b))
    if not rows:
        return snf.int_matrix(np.zeros((nA, nB), dtype=int), (nA, nB))
    x = snf.solve(snf.int_matrix(rows), rhs)
    if x is None:
        return None
    return snf.int_matrix(x[:nS], (nA, nB))


def check_right_inverse(m: MapSpec) -> Decision:
    if m.target.is_trivial:
        return Decision.YES
    if m.matrix is not None:
        return Decision.of(section_matrix(m) is not None)
    if m.fact(Property.SURJECTIVE) is False:
        return Decision.NO
    if m.fact(Property.ISOMORPHISM):
        return Decision.YES
    if m.fact(Property.SURJECTIVE) and isinstance(m.target, FgAbGroup) and m.target.is_free:
        # lifts of a free basis define a section when the lifts commute
        if isinstance(m.source, FgAbGroup) or m.target.rank <= 1:
            return Decision.YES
    return Decision.UNDECIDED


@dataclasses.dataclass(frozen=True)
class VerdictReport:
    verdict: Verdict
    injective: Decision
    right_inverse: Decision
    reason: str

    def line(self) -> str:
        return (f"verdict: {self.verdict.value} (i_* injective: {self.injective.value}; "
                f"p_* right inverse: {self.right_inverse.value}) {self.reason}")


def becker_gottlieb_verdict(i_star: MapSpec, p_star: MapSpec) -> VerdictReport:
    if i_star.target != p_star.source:
        raise ValueError(f"i_* lands in {i_star.target} but p_* starts at {p_star.source}")
    inj, sec = check_injective(i_star), check_right_inverse(p_star)
    if Decision.NO in (inj, sec):
        verdict = Verdict.NO_COVERING
        failed = [n for n, d in (("condition (1) i_* injective", inj), ("condition (2) right inverse of p_*", sec)) if d is Decision.NO]
        reason = "fails " + " and ".join(failed)
    elif inj is sec is Decision.YES:
        verdict, reason = Verdict.COVERING_EXISTS, "both conditions hold"
    else:
        verdict, reason = Verdict.UNDECIDED, "the data do not decide every condition"
    return VerdictReport(verdict, inj, sec, reason)


# --- exact sequences --------------------------------------------------------------

def exact_at(f: MapSpec, g: MapSpec) -> bool:
    """``im f == ker g`` for matrix maps ``f: A -> B``, ``g: B -> C``."""
    B, C = f.target, g.target
    RB, RC = B.relations(), C.relations()
    nB = B.ngens
    im_f = snf.hstack(f.matrix, RB, rows=nB)
    big = snf.hstack(g.matrix, -RC if RC.size else RC, rows=C.ngens)
    ker_g = snf.kernel_basis(big)[:nB]
    inside = all(_in_image(RC, g.matrix.dot(im_f[:, k])) for k in range(im_f.shape[1]))
    covers = all(_in_image(im_f, ker_g[:, k]) for k in range(ker_g.shape[1]))
    return inside and covers


@dataclasses.dataclass(frozen=True, eq=False)
class SequenceFragment:
    """``G_0 -> G_1 -> ... -> G_n`` with exactness flags at ``G_1 .. G_{n-1}``."""

    groups: tuple
    maps: tuple
    exact: tuple
    names: tuple = ()
    derivations: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "maps", tuple(self.maps))
        object.__setattr__(self, "exact", tuple(bool(e) for e in self.exact))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"G{k}" for k in range(len(self.groups))))
        if len(self.maps) != len(self.groups) - 1:
            raise ValueError("a fragment needs exactly one map between consecutive groups")
        if len(self.exact) != max(len(self.groups) - 2, 0):
            raise ValueError("exactness flags are given at the interior groups")
        for k, m in enumerate(self.maps):
            if m.source != self.groups[k] or m.target != self.groups[k + 1]:
                raise ValueError(f"map {m.name} does not run from {self.names[k]} to {self.names[k + 1]}")
        for k, flag in enumerate(self.exact):
            f, g = self.maps[k], self.maps[k + 1]
            if flag and f.matrix is not None and g.matrix is not None and not exact_at(f, g):
                raise InconsistencyError(f"declared exact at {self.names[k + 1]}, but im {f.name} != ker {g.name}")

    def map(self, name: str) -> MapSpec:
        for m in self.maps:
            if m.name == name:
                return m
        raise KeyError(name)


def propagate_exactness(frag: SequenceFragment) -> SequenceFragment:
    """Close the known facts under exactness and the single-map rules.

    At an exact junction ``A -f-> B -g-> C``: ``f`` surjective iff ``g`` zero,
    and ``f`` zero iff ``g`` injective.  Trivial groups force zero maps, and
    a zero map that is injective (surjective) forces a trivial source
    (target).  Iterates to a fixed point; contradictions raise
    ``InconsistencyError``.
    """
    Z, I, S = Property.ZERO, Property.INJECTIVE, Property.SURJECTIVE
    facts = [dict(m.facts()) for m in frag.maps]
    trivial = [g.is_trivial for g in frag.groups]
    notes = list(frag.derivations)

    def set_map(k, p, value, why):
        old = facts[k].get(p)
        if old is None:
            facts[k][p] = value
            notes.append(f"{frag.maps[k].name} {'is' if value else 'is not'} {p.value}: {why}")
            return True
        if old != value:
            raise InconsistencyError(f"{frag.maps[k].name}: {why}, contradicting the known fact that it is "
                                     f"{'' if old else 'not '}{p.value}")
        return False

    def set_group(k, value, why):
        old = trivial[k]
        if old is None:
            trivial[k] = value
            notes.append(f"{frag.names[k]} {'is' if value else 'is not'} trivial: {why}")
            return True
        if old != value:
            raise InconsistencyError(f"{frag.names[k]}: {why}, but it is known to be {'' if old else 'non'}trivial")
        return False

    changed = True
    while changed:
        changed = False
        for k, m in enumerate(frag.maps):
            F, a, b = facts[k], k, k + 1
            if trivial[a]:
                changed |= set_map(k, Z, True, f"{frag.names[a]} is trivial")
                changed |= set_map(k, I, True, f"{frag.names[a]} is trivial")
            if trivial[b]:
                changed |= set_map(k, Z, True, f"{frag.names[b]} is trivial")
                changed |= set_map(k, S, True, f"{frag.names[b]} is trivial")
            if F.get(Z) and F.get(I):
                changed |= set_group(a, True, f"{m.name} is zero and injective")
            if F.get(Z) and F.get(S):
                changed |= set_group(b, True, f"{m.name} is zero and surjective")
            if F.get(Z) and trivial[a] is False:
                changed |= set_map(k, I, False, f"it is zero on the nontrivial group {frag.names[a]}")
            if F.get(Z) and trivial[b] is False:
                changed |= set_map(k, S, False, f"it is zero into the nontrivial group {frag.names[b]}")
            if F.get(Z) is False:
                changed |= set_group(a, False, f"{m.name} is not zero")
                changed |= set_group(b, False, f"{m.name} is not zero")
            if F.get(I) and trivial[a] is False:
                changed |= set_group(b, False, f"{m.name} embeds a nontrivial group")
            if F.get(S) and trivial[b] is False:
                changed |= set_group(a, False, f"{m.name} maps onto a nontrivial group")
        for k, flag in enumerate(frag.exact):
            if not flag:
                continue
            f, g = k, k + 1
            fn, gn, at = frag.maps[f].name, frag.maps[g].name, frag.names[k + 1]
            for (src, p), (dst, q) in (((f, S), (g, Z)), ((f, Z), (g, I))):
                sv, dv = facts[src].get(p), facts[dst].get(q)
                sname, dname = frag.maps[src].name, frag.maps[dst].name
                if sv is not None:
                    changed |= set_map(dst, q, sv, f"exactness at {at}: {sname} is {'' if sv else 'not '}{p.value}")
                if dv is not None:
                    changed |= set_map(src, p, dv, f"exactness at {at}: {dname} is {'' if dv else 'not '}{q.value}")
            del fn, gn

    groups = tuple(
        dataclasses.replace(g, trivial=t) if isinstance(g, UnknownGroup) else g
        for g, t in zip(frag.groups, trivial)
    )
    maps = tuple(m.with_facts(facts[k], groups[k], groups[k + 1]) for k, m in enumerate(frag.maps))
    return SequenceFragment(groups, maps, frag.exact, frag.names, tuple(notes))


# --- presets and text format ------------------------------------------------------

@dataclasses.dataclass(frozen=True, eq=False)
class ObstructionProblem:
    fragment: SequenceFragment
    i_star: str
    p_star: str
    title: str = ""


def decide(problem: ObstructionProblem, propagate: bool = True) -> tuple[VerdictReport, SequenceFragment]:
    frag = propagate_exactness(problem.fragment) if propagate else problem.fragment
    return becker_gottlieb_verdict(frag.map(problem.i_star), frag.map(problem.p_star)), frag


def parse_problem(spec: dict) -> ObstructionProblem:
    """Build a problem from the JSON fragment format (``fiberround-fragment``, version 1)."""
    if spec.get("format") != "fiberround-fragment" or spec.get("version") != 1:
        raise ValueError("expected format 'fiberround-fragment', version 1")
    names = [g["name"] for g in spec["groups"]]
    groups = []
    for g in spec["groups"]:
        grp = parse_group(g["group"])
        if isinstance(grp, UnknownGroup):
            grp = UnknownGroup(g["name"], g.get("trivial"))
        groups.append(grp)
    maps = []
    for k, m in enumerate(spec["maps"]):
        maps.append(MapSpec(groups[k], groups[k + 1], matrix=m.get("matrix"),
                            properties=frozenset(m.get("properties", ())),
                            excluded=frozenset(m.get("excluded", ())),
                            name=m.get("name", f"map{k}")))
    exact = spec.get("exact", [True] * max(len(groups) - 2, 0))
    frag = SequenceFragment(tuple(groups), tuple(maps), tuple(exact), tuple(names))
    return ObstructionProblem(frag, spec["i_star"], spec["p_star"], spec.get("title", ""))


def load_problem(path: str | Path) -> ObstructionProblem:
    return parse_problem(json.loads(Path(path).read_text()))


def _universal_so3() -> dict:
    """Universal SO(3)-bundle: pi_1(SO(3)) = Z/2 maps to pi_1(ESO(3)) = 1."""
    return {
        "format": "fiberround-fragment", "version": 1,
        "title": "universal SO(3)-bundle",
        "groups": [
            {"name": "pi2(ESO(3))", "group": "0"},
            {"name": "pi2(BSO(3))", "group": "Z/2"},
            {"name": "pi1(SO(3))", "group": "Z/2"},
            {"name": "pi1(ESO(3))", "group": "0"},
            {"name": "pi1(BSO(3))", "group": "0"},
        ],
        "maps": [
            {"name": "p_2", "matrix": [[]]},
            {"name": "delta_2", "matrix": [[1]]},
            {"name": "i_*", "matrix": np.zeros((0, 1), dtype=int).tolist()},
            {"name": "p_*", "matrix": []},
        ],
        "exact": [True, True, True],
        "i_star": "i_*", "p_star": "p_*",
    }


def _so3_over_four_manifold(n: int = 2) -> dict:
    """Principal SO(3)-bundle over a simply connected 4-manifold with H_2 = Z^n.

    The connecting map delta_2: pi_2(M) -> pi_1(SO(3)) is surjective; pi_2(E)
    and pi_1(E) are unknown (the latter possibly nonabelian).
    """
    return {
        "format": "fiberround-fragment", "version": 1,
        "title": f"SO(3)-bundle over a simply connected 4-manifold with H_2 = Z^{n}",
        "groups": [
            {"name": "pi2(E)", "group": "?"},
            {"name": "pi2(M)", "group": f"Z^{n}"},
            {"name": "pi1(SO(3))", "group": "Z/2"},
            {"name": "pi1(E)", "group": "?"},
            {"name": "pi1(M)", "group": "0"},
        ],
        "maps": [
            {"name": "p_2", "properties": []},
            {"name": "delta_2", "properties": ["surjective"]},
            {"name": "i_*", "properties": []},
            {"name": "p_*", "properties": []},
        ],
        "exact": [True, True, True],
        "i_star": "i_*", "p_star": "p_*",
    }


PRESETS = {
    "example-3.3": _universal_so3,
    "example-3.4": _so3_over_four_manifold,
    "universal-so3": _universal_so3,
    "so3-over-4-manifold": _so3_over_four_manifold,
}


def preset(name: str) -> ObstructionProblem:
    try:
        return parse_problem(PRESETS[name]())
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
