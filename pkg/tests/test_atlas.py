import json

import numpy as np
import pytest

from fiberround.atlas import (
    SampledBase,
    compile_expression,
    demo_atlas_spec,
    load_atlas,
    parse_atlas,
    trivial_atlas_spec,
)
from fiberround.procrustes import fit_orthogonal


def test_expression_vocabulary():
    f = compile_expression("0.5*cos(b) - sin(2*b)/4 + pi", ("b",))
    b = np.linspace(0, 6, 7)
    assert np.allclose(f(b=b), 0.5 * np.cos(b) - np.sin(2 * b) / 4 + np.pi)
    assert np.allclose(compile_expression(0.25, ("b",))(b=b), 0.25)


@pytest.mark.parametrize("bad", ["__import__('os')", "b**2", "exp(b)", "q + 1", "b.real", "[b]"])
def test_expression_rejects(bad):
    with pytest.raises((ValueError, SyntaxError)):
        compile_expression(bad, ("b",))


def test_demo_atlas_structure():
    desc = parse_atlas(demo_atlas_spec(24))
    atlas = desc.atlas
    assert atlas.base.size == 24 and len(atlas.charts) == 3
    assert all(len(atlas.charts_at(b)) >= 2 for b in range(24))
    assert len(atlas.triples()) == 6
    assert len(desc.reference_metrics) == 24


def test_transitions_satisfy_cocycle_exactly():
    atlas = parse_atlas(demo_atlas_spec(24)).atlas
    for i, j, k in atlas.triples():
        for b in np.intersect1d(atlas.overlap(i, j), atlas.charts[k].members):
            lhs = atlas.transition(i, k, b).matrix
            rhs = (atlas.transition(j, k, b) @ atlas.transition(i, j, b)).matrix
            assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_demo_transitions_are_not_isometries():
    atlas = parse_atlas(demo_atlas_spec(24)).atlas
    x = np.eye(3)
    x = np.concatenate([x, -x, np.ones((1, 3)) / np.sqrt(3)])
    worst = min(
        fit_orthogonal(x, atlas.transition(i, j, b)(x)).residual
        for i, j in atlas.pairs() if i != j for b in atlas.overlap(i, j)
    )
    assert worst > 0.1


def test_rp_variant_refuses_boosts():
    spec = demo_atlas_spec(12, rp_mode=True)
    spec["trivializations"][0]["boost"] = ["0.1", "0", "0"]
    with pytest.raises(ValueError, match="boost"):
        parse_atlas(spec)


def test_rp_variant_has_even_fibres():
    desc = parse_atlas(demo_atlas_spec(12, rp_mode=True))
    assert all(g.antipodal_even for g in desc.reference_metrics)


def test_periodicity_is_checked():
    spec = trivial_atlas_spec(8)
    spec["fiber_metric"]["modes"] = [[2, 0, "0.01*b"]]
    with pytest.raises(ValueError, match="periodic"):
        parse_atlas(spec)


def test_coverage_is_checked():
    spec = trivial_atlas_spec(8)
    spec["charts"] = spec["charts"][:1]
    spec["trivializations"] = spec["trivializations"][:1]
    with pytest.raises(ValueError, match="cover"):
        parse_atlas(spec)


def test_header_is_checked():
    with pytest.raises(ValueError):
        parse_atlas({"format": "something-else"})


def test_load_from_file(tmp_path):
    path = tmp_path / "atlas.json"
    path.write_text(json.dumps(demo_atlas_spec(8)))
    assert load_atlas(path).atlas.base.size == 8


def test_sphere_base():
    base = SampledBase.sphere(1)
    assert base.size == 42 and base.edges.shape == (120, 2)
    assert base.spacing() < 0.7
