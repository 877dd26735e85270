import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fiberround.atlas import demo_atlas_spec, parse_atlas, rotation_atlas_spec, trivial_atlas_spec
from fiberround.bundle import (
    FamilyError,
    ReductionError,
    build_f,
    check_cocycle,
    family_from_description,
    flow_family,
    max_adjacent_distance,
    reduce_bundle,
    reduce_cocycle,
    representative_independence,
    rp_canonical,
    validate_family,
)
from fiberround.cartan import SphereMap
from fiberround.flow import PinchingError


def test_rotation_atlas_reduces_to_its_transitions():
    desc = parse_atlas(rotation_atlas_spec(8))
    res = reduce_bundle(desc)
    assert res.cocycle_report.passed
    for (i, j, b), e in res.cocycle.entries.items():
        alpha = desc.atlas.transition(i, j, b).matrix[1:, 1:]
        assert np.max(np.abs(e.matrix - alpha)) < 1e-8


def test_trivial_atlas_gives_identity_cocycle():
    res = reduce_bundle(parse_atlas(trivial_atlas_spec(6)))
    for e in res.cocycle.entries.values():
        assert np.max(np.abs(e.matrix - np.eye(3))) < 1e-8


def test_small_demo_reduction():
    desc = parse_atlas(demo_atlas_spec(9))
    res = reduce_bundle(desc)
    assert res.validation.max_discrepancy < 1e-10
    assert res.cocycle.max_residual < 1e-6
    assert res.cocycle.min_raw_defect > 0.1
    assert res.cocycle_report.passed
    # every fibre is flowed once and carried to the other charts
    assert len(res.flowed.traces) == 9


def test_validation_detects_inconsistent_family():
    desc = parse_atlas(demo_atlas_spec(6))
    family = family_from_description(desc)
    key = next(k for k in family.metrics if len(desc.atlas.charts_at(k[1])) > 1)
    g = family[key]
    bad = family.replace(key, g.with_u(g.u + g.u.constant(1e-6, g.L)))
    report = validate_family(bad)
    assert not report.passed and report.max_discrepancy > 1e-7


def test_unpinched_family_is_rejected():
    spec = trivial_atlas_spec(4)
    spec["fiber_metric"]["modes"] = [[2, 0, "1.0"]]
    family = family_from_description(parse_atlas(spec))
    with pytest.raises(PinchingError):
        flow_family(family)


def test_non_orthogonal_beta_is_located():
    desc = parse_atlas(demo_atlas_spec(6))
    family = family_from_description(desc)
    flowed = flow_family(family)
    fmaps = build_f(flowed.family, depth=2)
    # replace one Cartan map by the identity: beta is then a raw Mobius transition
    key = next(k for k in fmaps if k[0] == 1)
    fmaps[key] = SphereMap.identity(2)
    with pytest.raises(ReductionError) as info:
        reduce_cocycle(desc.atlas, fmaps)
    assert info.value.raw_images.shape[1] == 3
    assert 1 in (info.value.i, info.value.j)


def test_rp_small_reduction():
    desc = parse_atlas(demo_atlas_spec(6, rp_mode=True))
    res = reduce_bundle(desc)
    assert res.cocycle_report.passed and res.cocycle.rp_mode
    assert representative_independence(res.cocycle) == 0.0
    for e in res.cocycle.entries.values():
        assert np.trace(e.matrix) >= 0.0
    # flipping the sign of one representative leaves the quotient class unchanged
    entries = dict(res.cocycle.entries)
    key = next(k for k in entries if k[0] != k[1])
    entries[key] = dataclasses.replace(entries[key], matrix=-entries[key].matrix)
    assert check_cocycle(dataclasses.replace(res.cocycle, entries=entries), desc.atlas).passed


@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9))
def test_rp_canonical_is_a_class_function(entries):
    M = np.array(entries).reshape(3, 3)
    assert np.array_equal(rp_canonical(M), rp_canonical(-M)) or not np.any(M)
    assert np.array_equal(np.abs(rp_canonical(M)), np.abs(M))


def test_strided_adjacency_needs_circle_multiple():
    desc = parse_atlas(rotation_atlas_spec(6))
    res = reduce_bundle(desc)
    assert max_adjacent_distance(res.cocycle, desc.atlas, stride=2) >= 0.0
    with pytest.raises(ValueError):
        max_adjacent_distance(res.cocycle, desc.atlas, stride=4)


def test_cocycle_check_flags_corruption():
    desc = parse_atlas(rotation_atlas_spec(6))
    res = reduce_bundle(desc)
    entries = dict(res.cocycle.entries)
    key = next(k for k in entries if k[0] != k[1])
    e = entries[key]
    entries[key] = dataclasses.replace(e, matrix=e.matrix @ np.diag([1.0, 1.0, -1.0]))
    bad = dataclasses.replace(res.cocycle, entries=entries)
    report = check_cocycle(bad, desc.atlas)
    assert not report.passed


def test_family_error_carries_stage():
    exc = FamilyError("x", 1, 2, "cartan")
    assert (exc.chart, exc.sample, exc.stage) == (1, 2, "cartan")
