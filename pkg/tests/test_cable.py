from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from tanglesim import layout
from tanglesim.cable import (
    CABLE_LENGTH_MM,
    Centerline,
    KnotKind,
    SimState,
    UnknownTangle,
    classify_knots,
    compute_crossings,
    gauss_code,
    is_untangled,
    knots_of,
)
from tanglesim.fixtures import load_polyline, load_state
from tanglesim.generate import (
    DENSE,
    LOOSE,
    MID,
    N_NODES,
    NEAR_END,
    PlacementInfeasible,
    _initial_plan,
    generate_initial_state,
)
from tanglesim.geometry import DegenerateGeometry
from tanglesim.templates import kink_template


def brute_crossings(nodes):
    """O(n^2) pairwise segment intersection written independently of the library."""
    out = []
    n = len(nodes) - 1
    for i in range(n):
        (x1, y1), (x2, y2) = nodes[i], nodes[i + 1]
        for j in range(i + 2, n):
            (x3, y3), (x4, y4) = nodes[j], nodes[j + 1]
            den = (x1 - x2) * (y3 - y4) - (y1 - y2) * (x3 - x4)
            if den == 0:
                continue
            t = ((x1 - x3) * (y3 - y4) - (y1 - y3) * (x3 - x4)) / den
            u = -((x1 - x2) * (y1 - y3) - (y1 - y2) * (x1 - x3)) / den
            if 0 <= t < 1 and 0 <= u < 1:
                out.append((i, j, x1 + t * (x2 - x1), y1 + t * (y2 - y1)))
    return out


def same_crossings(got, want, tol=0.5):
    if len(got) != len(want):
        return False
    g = sorted((c.seg_a, c.seg_b, c.point) for c in got)
    w = sorted((a, b, (x, y)) for a, b, x, y in want)
    return all(ga == wa and gb == wb and np.hypot(gp[0] - wp[0], gp[1] - wp[1]) <= tol
               for (ga, gb, gp), (wa, wb, wp) in zip(g, w))


# --- Centerline -----------------------------------------------------------


def test_centerline_node_count_and_spacing():
    cl = Centerline.straight()
    assert cl.n_nodes == round(CABLE_LENGTH_MM / cl.seg_len) + 1 == 271
    seg = np.linalg.norm(np.diff(cl.nodes, axis=0), axis=1)
    assert np.all(np.abs(seg - cl.seg_len) <= 0.01 * cl.seg_len)
    assert cl.node_at(0.0) == 0 and cl.node_at(1.0) == 270
    assert cl.node_at(0.5) == 135
    assert cl.u_of(135) == pytest.approx(0.5)


@pytest.mark.parametrize("tier", [1, 2, 3])
def test_generated_segments_within_one_percent(tier):
    s = generate_initial_state(tier, rng_seed=4)
    seg = np.linalg.norm(np.diff(s.nodes, axis=0), axis=1)
    assert s.centerline.n_nodes == N_NODES
    assert np.all(np.abs(seg - 10.0) <= 0.1)


# --- crossings ------------------------------------------------------------


def test_straight_has_no_crossings():
    assert compute_crossings(Centerline.straight()) == ()


def test_crossing_fixture_single_point():
    cs = compute_crossings(Centerline(load_polyline("crossing")))
    assert len(cs) == 1
    assert cs[0].point == pytest.approx((5.0, 0.0))
    assert (cs[0].seg_a, cs[0].seg_b) == (0, 3)


def test_overhand_fixture_matches_oracle():
    nodes = load_polyline("overhand")
    cs = compute_crossings(Centerline(nodes))
    assert len(cs) == 3
    assert same_crossings(cs, brute_crossings(nodes.tolist()))


def test_crossing_invariants():
    s = load_state("series")
    nodes = s.nodes
    for c in s.crossings:
        assert c.seg_a < c.seg_b and c.seg_b - c.seg_a >= 2
        for seg in (c.seg_a, c.seg_b):
            a, b = nodes[seg], nodes[seg + 1]
            t = np.clip(np.dot(np.asarray(c.point) - a, b - a) / np.dot(b - a, b - a), 0, 1)
            assert np.linalg.norm(a + t * (b - a) - c.point) <= 0.5


def test_collinear_overlap_is_degenerate():
    nodes = [(0, 0), (10, 0), (10, 5), (5, 5), (5, 0), (15, 0)]
    with pytest.raises(DegenerateGeometry):
        compute_crossings(Centerline(nodes))


def test_new_crossing_lower_u_goes_under():
    (c,) = compute_crossings(Centerline(load_polyline("crossing")))
    assert c.over == "b" and c.under_seg == 0


def test_flags_carried_from_previous_state():
    s = load_state("crossing")
    flipped = s.with_flags({(0, 3): "a"})
    moved = flipped.moved_to(flipped.nodes + np.array([0.3, 0.0]))
    assert moved.crossings[0].over == "a"


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_crossings_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    nodes = np.cumsum(rng.normal(0, 10, size=(50, 2)), axis=0)
    assert same_crossings(compute_crossings(Centerline(nodes)), brute_crossings(nodes.tolist()))


# --- Gauss code -----------------------------------------------------------


def test_gauss_code_empty():
    assert len(gauss_code(load_state("straight"))) == 0


@pytest.mark.parametrize("name,n", [("overhand", 3), ("figure8", 4)])
def test_gauss_code_alternates(name, n):
    code = gauss_code(load_state(name))
    assert len(code) == 2 * n
    ids = [e.crossing for e in code.entries]
    assert sorted(ids) == sorted(list(range(n)) * 2)
    overs = [e.over for e in code.entries]
    assert all(overs[i] != overs[i + 1] for i in range(len(overs) - 1))


def _reversed(state: SimState) -> SimState:
    n_seg = state.centerline.n_segments
    flags = {(n_seg - 1 - c.seg_b, n_seg - 1 - c.seg_a): ("b" if c.over == "a" else "a")
             for c in state.crossings}
    return SimState.from_nodes(state.nodes[::-1].copy()).with_flags(flags)


@pytest.mark.parametrize("name", ["overhand", "figure8", "series", "kinked"])
def test_gauss_code_each_id_twice_and_reversal(name):
    s = load_state(name)
    code = gauss_code(s)
    for cid in {e.crossing for e in code.entries}:
        es = [e for e in code.entries if e.crossing == cid]
        assert len(es) == 2 and es[0].over != es[1].over
    rev = gauss_code(_reversed(s))
    # same physical crossings walked backwards: over flags reverse in order,
    # and the writhe sign of each crossing is orientation independent
    assert [e.over for e in rev.entries] == [e.over for e in code.entries][::-1]
    assert sorted(e.sign for e in rev.entries) == sorted(e.sign for e in code.entries)
    assert [k.kind for k in knots_of(_reversed(s))] == [k.kind for k in knots_of(s)][::-1]


# --- classification ------------------------------------------------------


def test_classify_empty():
    s = load_state("straight")
    assert classify_knots(gauss_code(s), s) == []


def test_classify_fixtures():
    assert [k.kind for k in knots_of(load_state("overhand"))] == [KnotKind.OVERHAND]
    assert [k.kind for k in knots_of(load_state("figure8"))] == [KnotKind.FIGURE8]
    spans = knots_of(load_state("series"))
    assert [k.kind for k in spans] == [KnotKind.OVERHAND, KnotKind.FIGURE8]
    assert spans[0].u_interval[1] < spans[1].u_interval[0]
    assert [len(k.crossings) for k in spans] == [3, 4]


def test_span_diameter_is_max_crossing_distance():
    s = load_state("overhand")
    (span,) = knots_of(s)
    pts = np.array([s.crossings[c].point for c in span.crossings])
    d = max(np.linalg.norm(p - q) for p in pts for q in pts) / 10.0
    assert span.diameter == pytest.approx(d)


def test_non_alternating_cluster_is_unknown_tangle():
    s = load_state("overhand")
    # flip one crossing: a non-alternating 3-crossing diagram that is the unknot
    c = s.crossings[1]
    flipped = s.with_flags({(c.seg_a, c.seg_b): "a" if c.over == "b" else "b"})
    spans = knots_of(flipped)
    assert all(k.kind is not KnotKind.OVERHAND for k in spans)
    if spans:
        with pytest.raises(UnknownTangle):
            classify_knots(gauss_code(flipped), flipped, strict=True)


# --- untangled predicate -------------------------------------------------


@pytest.mark.parametrize("name,want", [("straight", True), ("kinked", True), ("crossing", True),
                                       ("overhand", False), ("figure8", False), ("series", False)])
def test_is_untangled_fixtures(name, want):
    assert is_untangled(load_state(name)) is want


@settings(max_examples=12, deadline=None)
@given(st.sampled_from(["straight", "overhand", "figure8"]), st.integers(10, 240), st.booleans(),
       st.integers(0, 1000))
def test_is_untangled_invariant_under_kink_insertion(name, at, first_over, seed):
    base = load_state(name)
    blocks = layout.extract_blocks(base)
    kt = kink_template(25.0)
    new = layout.Block(at, kt.local.copy(), "kink", layout.alternating_flags(kt.local, first_over))
    assume(all(new.end + 3 < b.start or b.end + 3 < new.start for b in blocks))
    assume(8 <= at and new.end <= N_NODES - 9)
    allb = sorted(blocks + [new], key=lambda b: b.start)
    rng = np.random.default_rng(seed)
    try:
        kinked = layout.lay_lanes(N_NODES, allb, _initial_plan(allb, rng), rng)
    except (layout.LayoutError, ValueError):
        assume(False)
    assert len(kinked.crossings) == len(base.crossings) + 1
    assert is_untangled(kinked) == is_untangled(base)


# --- generator -----------------------------------------------------------


def test_tier1_loose_overhand_seed7():
    s = generate_initial_state(1, [LOOSE], [MID], rng_seed=7, kinds=["overhand"])
    (span,) = knots_of(s)
    assert span.kind is KnotKind.OVERHAND
    assert 12.0 <= span.diameter <= 14.0


def test_tier3_seed11_three_spans():
    assert len(knots_of(generate_initial_state(3, rng_seed=11))) == 3


def test_generator_deterministic():
    a = generate_initial_state(2, rng_seed=5)
    b = generate_initial_state(2, rng_seed=5)
    assert a.to_json() == b.to_json()
    assert np.array_equal(a.nodes, b.nodes)


@pytest.mark.parametrize("variant,lo,hi", [(DENSE, 6.0, 8.0), (LOOSE, 12.0, 14.0)])
def test_generator_diameter_ranges(variant, lo, hi):
    for seed in range(6):
        (span,) = knots_of(generate_initial_state(1, [variant], [MID], rng_seed=seed))
        assert lo <= span.diameter <= hi


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(0, 10_000), st.lists(st.sampled_from(["overhand", "figure8"]),
                                                            min_size=3, max_size=3))
def test_generator_recovers_requested_kinds(tier, seed, kinds):
    s = generate_initial_state(tier, rng_seed=seed, kinds=kinds[:tier])
    spans = knots_of(s)
    assert len(spans) == tier
    assert sorted(k.kind.value for k in spans) == sorted(kinds[:tier])


def test_generator_errors():
    with pytest.raises(ValueError):
        generate_initial_state(4)
    with pytest.raises(PlacementInfeasible):
        generate_initial_state(3, [LOOSE] * 3, [NEAR_END, MID, NEAR_END], rng_seed=0)


def test_state_json_round_trip():
    s = generate_initial_state(2, rng_seed=3)
    back = SimState.from_json(s.to_json())
    assert back.to_json() == s.to_json()
    assert [k.kind for k in knots_of(back)] == [k.kind for k in knots_of(s)]
