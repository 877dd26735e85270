import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberround.obstruction import (
    Decision,
    FgAbGroup,
    InconsistencyError,
    MapSpec,
    Property,
    SequenceFragment,
    UnknownGroup,
    Verdict,
    becker_gottlieb_verdict,
    check_injective,
    check_right_inverse,
    decide,
    exact_at,
    load_problem,
    matrix_facts,
    parse_group,
    parse_problem,
    preset,
    propagate_exactness,
    section_matrix,
)

Z, I, S = Property.ZERO, Property.INJECTIVE, Property.SURJECTIVE


# --- brute force on finite groups ---------------------------------------------

def elements(G):
    return list(itertools.product(*[range(n) for n in G.torsion]))


def apply(M, G, H, x):
    y = np.array(M, dtype=int).reshape(H.ngens, G.ngens).dot(np.array(x, dtype=int)) if G.ngens else np.zeros(H.ngens, int)
    return tuple(int(v) % n for v, n in zip(y, H.torsion))


def brute_facts(G, H, M):
    img = {apply(M, G, H, x) for x in elements(G)}
    zero_h = tuple(0 for _ in H.torsion)
    return {Z: img == {zero_h}, I: len(img) == len(elements(G)), S: len(img) == len(elements(H))}


def brute_section(G, H, M):
    """Search every homomorphism H -> G for a right inverse of M."""
    gens = range(H.ngens)
    for images in itertools.product(elements(G), repeat=H.ngens):
        # images of the generators must respect the orders of H
        if any(any((n * a) % m for a, m in zip(images[k], G.torsion)) for k, n in zip(gens, H.torsion)):
            continue
        Smat = np.array(images, dtype=int).T.reshape(G.ngens, H.ngens) if H.ngens else np.zeros((G.ngens, 0), int)
        if all(apply(M, G, H, apply(Smat, H, G, y)) == y for y in elements(H)):
            return True
    return False


def _divisibility_chain(t):
    return all(t[k + 1] % t[k] == 0 for k in range(len(t) - 1))


finite_groups = (
    st.lists(st.sampled_from([2, 3, 4, 6]), max_size=2)
    .map(lambda t: tuple(sorted(t)))
    .filter(_divisibility_chain)
    .map(lambda t: FgAbGroup(0, t))
)


@st.composite
def finite_maps(draw):
    G, H = draw(finite_groups), draw(finite_groups)
    M = np.array(draw(st.lists(st.integers(0, 5), min_size=G.ngens * H.ngens, max_size=G.ngens * H.ngens)), int)
    M = M.reshape(H.ngens, G.ngens)
    # keep only well-defined maps: n_j * M[:, j] must vanish in H
    for j, n in enumerate(G.torsion):
        for i, m in enumerate(H.torsion):
            if (n * M[i, j]) % m:
                M[i, j] = 0
    return G, H, M


@given(finite_maps())
@settings(max_examples=60)
def test_matrix_facts_match_brute_force(data):
    G, H, M = data
    assert matrix_facts(G, H, M) == brute_facts(G, H, M)


@given(finite_maps())
@settings(max_examples=60)
def test_section_matches_brute_force(data):
    G, H, M = data
    m = MapSpec(G, H, matrix=M)
    S_ = section_matrix(m)
    assert (S_ is not None) == brute_section(G, H, M)
    if S_ is not None:
        for y in elements(H):
            assert apply(M, G, H, apply(S_, H, G, y)) == y


# --- worked examples ----------------------------------------------------------

def test_multiplication_by_two_on_integers():
    Zg = FgAbGroup(1)
    m = MapSpec(Zg, Zg, matrix=[[2]])
    assert check_injective(m) is Decision.YES
    assert check_right_inverse(m) is Decision.NO


def test_projection_splits():
    m = MapSpec(parse_group("Z + Z/2"), parse_group("Z"), matrix=[[1, 0]])
    assert check_right_inverse(m) is Decision.YES
    assert np.array_equal(section_matrix(m), np.array([[1], [0]], dtype=object))


def test_quotient_of_z4_does_not_split():
    m = MapSpec(parse_group("Z/4"), parse_group("Z/2"), matrix=[[1]])
    assert m.fact(S) and check_right_inverse(m) is Decision.NO


def test_exactness_at_start_forces_injective():
    zero, A, B = FgAbGroup.trivial(), UnknownGroup("A"), UnknownGroup("B")
    frag = SequenceFragment((zero, A, B), (MapSpec(zero, A, name="in"), MapSpec(A, B, name="f")), (True,))
    out = propagate_exactness(frag)
    assert out.map("f").fact(I) is True


def test_short_exact_sequence_closure_adds_nothing():
    Z2, Z4 = FgAbGroup(0, (2,)), FgAbGroup(0, (4,))
    zero = FgAbGroup.trivial()
    maps = (MapSpec(zero, Z2, matrix=np.zeros((1, 0), int), name="a"),
            MapSpec(Z2, Z4, matrix=[[2]], name="i"),
            MapSpec(Z4, Z2, matrix=[[1]], name="p"),
            MapSpec(Z2, zero, matrix=np.zeros((0, 1), int), name="b"))
    frag = SequenceFragment((zero, Z2, Z4, Z2, zero), maps, (True, True, True))
    out = propagate_exactness(frag)
    assert out.derivations == ()
    assert [m.facts() for m in out.maps] == [m.facts() for m in frag.maps]


def test_non_exact_matrices_are_rejected():
    Z2, Z4 = FgAbGroup(0, (2,)), FgAbGroup(0, (4,))
    with pytest.raises(InconsistencyError):
        SequenceFragment((Z2, Z4, Z2), (MapSpec(Z2, Z4, matrix=[[2]]), MapSpec(Z4, Z2, matrix=[[0]])), (True,))


def test_contradictory_declarations_are_rejected():
    Zg = FgAbGroup(1)
    with pytest.raises(InconsistencyError):
        MapSpec(Zg, Zg, properties={"zero", "injective"})
    with pytest.raises(InconsistencyError):
        MapSpec(Zg, Zg, properties={"zero"}, excluded={"zero"})
    A = UnknownGroup("A")
    frag = SequenceFragment((A, Zg, FgAbGroup.trivial()),
                            (MapSpec(A, Zg, properties={"zero"}, name="f"),
                             MapSpec(Zg, FgAbGroup.trivial(), name="g")), (True,))
    with pytest.raises(InconsistencyError):
        propagate_exactness(frag)


def test_matrix_overrides_declaration(caplog):
    m = MapSpec(FgAbGroup(1), FgAbGroup(1), matrix=[[2]], properties={"surjective"})
    assert m.fact(S) is False
    assert "matrix wins" in caplog.text


def test_ill_defined_matrix_is_rejected():
    with pytest.raises(ValueError, match="relations"):
        MapSpec(FgAbGroup(0, (2,)), FgAbGroup(1), matrix=[[1]])


def test_group_parsing():
    assert parse_group("Z^2 + Z/2 + Z/4") == FgAbGroup(2, (2, 4))
    assert parse_group("trivial").is_trivial and parse_group("Z/1").is_trivial
    assert isinstance(parse_group("?"), UnknownGroup)
    assert str(FgAbGroup(3, (2,))) == "Z^3 + Z/2"
    with pytest.raises(ValueError):
        parse_group("Q")
    with pytest.raises(ValueError):
        FgAbGroup(0, (4, 2))


# --- verdicts -----------------------------------------------------------------

def test_universal_bundle_preset():
    report, _ = decide(preset("example-3.3"))
    assert report.verdict is Verdict.NO_COVERING
    assert report.injective is Decision.NO
    assert "condition (1)" in report.reason


def test_four_manifold_preset_needs_the_chase():
    problem = preset("example-3.4")
    undecided, _ = decide(problem, propagate=False)
    assert undecided.verdict is Verdict.UNDECIDED
    report, frag = decide(problem)
    assert report.verdict is Verdict.NO_COVERING
    assert frag.map("i_*").fact(Z) is True and frag.map("i_*").fact(I) is False
    assert any("exactness" in d for d in frag.derivations)


def test_preset_aliases():
    assert decide(preset("universal-so3"))[0].verdict is Verdict.NO_COVERING
    assert decide(preset("so3-over-4-manifold"))[0].verdict is Verdict.NO_COVERING
    with pytest.raises(KeyError):
        preset("nope")


def test_covering_exists_for_split_data():
    Zg = FgAbGroup(1)
    report = becker_gottlieb_verdict(MapSpec(Zg, Zg, matrix=[[1]]), MapSpec(Zg, Zg, matrix=[[1]]))
    assert report.verdict is Verdict.COVERING_EXISTS
    with pytest.raises(ValueError):
        becker_gottlieb_verdict(MapSpec(Zg, Zg, matrix=[[1]]), MapSpec(FgAbGroup(2), Zg, matrix=[[1, 0]]))


def test_fragment_file_roundtrip(tmp_path):
    spec = {
        "format": "fiberround-fragment", "version": 1,
        "groups": [{"name": "F", "group": "Z/2"}, {"name": "E", "group": "Z"}, {"name": "B", "group": "Z"}],
        "maps": [{"name": "i", "matrix": [[0]]}, {"name": "p", "properties": ["isomorphism"]}],
        "exact": [True], "i_star": "i", "p_star": "p",
    }
    path = tmp_path / "frag.json"
    path.write_text(json.dumps(spec))
    report, _ = decide(load_problem(path))
    assert report.verdict is Verdict.NO_COVERING
    with pytest.raises(ValueError):
        parse_problem({**spec, "version": 2})


# --- soundness: forgetting the matrices never changes a decided verdict ---------

@st.composite
def matrix_fragments(draw):
    G0, G1 = draw(finite_groups), draw(finite_groups)
    M0 = np.zeros((G1.ngens, G0.ngens), int)
    M1 = np.array(draw(st.lists(st.integers(0, 3), min_size=G1.ngens, max_size=G1.ngens)), int).reshape(1, G1.ngens)
    Z2 = FgAbGroup(0, (2,))
    for j, n in enumerate(G1.torsion):
        if (n * M1[0, j]) % 2:
            M1[0, j] = 0
    return G0, G1, Z2, M0, M1


@given(matrix_fragments(), st.sets(st.sampled_from([Z, I, S]), max_size=3))
@settings(max_examples=40)
def test_decisions_are_sound_under_forgetting(data, keep):
    G0, G1, G2, M0, M1 = data
    full = (MapSpec(G0, G1, matrix=M0, name="i"), MapSpec(G1, G2, matrix=M1, name="p"))
    truth = becker_gottlieb_verdict(*full)
    partial = []
    for m in full:
        facts = {p: v for p, v in m.facts().items() if p in keep}
        partial.append(MapSpec(UnknownGroup(f"{m.name}-src"), UnknownGroup(f"{m.name}-tgt"),
                               properties={p for p, v in facts.items() if v},
                               excluded={p for p, v in facts.items() if not v}, name=m.name))
    partial[1] = MapSpec(partial[0].target, partial[1].target, properties=partial[1].properties,
                         excluded=partial[1].excluded, name="p")
    guess = becker_gottlieb_verdict(*partial)
    assert guess.verdict in (truth.verdict, Verdict.UNDECIDED)


# --- propagation is sound and monotone ------------------------------------------

@st.composite
def exact_fragments(draw):
    """A -f-> B -g-> C between finite groups, flagged exact only where it is."""
    A, B, F = draw(finite_maps())
    C = draw(finite_groups)
    G = np.array(draw(st.lists(st.integers(0, 5), min_size=C.ngens * B.ngens, max_size=C.ngens * B.ngens)), int)
    G = G.reshape(C.ngens, B.ngens)
    for j, n in enumerate(B.torsion):
        for i, m in enumerate(C.torsion):
            if (n * G[i, j]) % m:
                G[i, j] = 0
    f, g = MapSpec(A, B, matrix=F, name="f"), MapSpec(B, C, matrix=G, name="g")
    return f, g, exact_at(f, g)


def _forget(m, keep):
    facts = {p: v for p, v in m.facts().items() if p in keep}
    return MapSpec(m.source, m.target, properties={p for p, v in facts.items() if v},
                   excluded={p for p, v in facts.items() if not v}, name=m.name)


@given(exact_fragments(), st.sets(st.sampled_from([Z, I, S])), st.sets(st.sampled_from([Z, I, S])))
@settings(max_examples=80)
def test_propagation_is_sound_and_monotone(data, keep_f, keep_g):
    f, g, exact = data
    frag = SequenceFragment((f.source, f.target, g.target), (_forget(f, keep_f), _forget(g, keep_g)), (exact,))
    out = propagate_exactness(frag)
    for truth, derived in zip((f, g), out.maps):
        for p, v in derived.facts().items():
            assert truth.fact(p) is v
    before = becker_gottlieb_verdict(*frag.maps)
    after = becker_gottlieb_verdict(*out.maps)
    if before.verdict is not Verdict.UNDECIDED:
        assert after.verdict is before.verdict
    assert after.verdict in (becker_gottlieb_verdict(f, g).verdict, Verdict.UNDECIDED)
