from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from tanglesim import acts, layout
from tanglesim.acts import KnotRemoved, KnotTightened, NoTargets, Verdict
from tanglesim.cable import adjacent_knots, grasp_points, is_untangled, knots_of
from tanglesim.config import RunConfig
from tanglesim.fixtures import load_state
from tanglesim.generate import DENSE, MID, N_NODES, _initial_plan, generate_initial_state
from tanglesim.observe import render
from tanglesim.percept.detect import DetectorConfig
from tanglesim.percept.ensemble import GraspProposal, NetworkStatus
from tanglesim.quasistatics import FORWARD, WORKSPACE, lay_out, rigid_shift
from tanglesim.templates import kink_template

QUIET = RunConfig().noise_off().acts


def proposal_at(state, cage: int, pinch: int) -> GraspProposal:
    t = render(state).truth
    c = tuple(int(v) for v in t.pixels_of_node(cage)[0])
    p = tuple(int(v) for v in t.pixels_of_node(pinch)[0])
    return GraspProposal(c, p, 1.0, NetworkStatus.CERTAIN)


def true_proposal(state):
    span, side = adjacent_knots(state)[0]
    return proposal_at(state, *grasp_points(state, span, side))


def wrong_proposal(state):
    lo = knots_of(state)[0].node_range[0]
    return proposal_at(state, lo - 8, lo - 4)


def sized(state, diameter_mm: float):
    """The same single-knot layout with the knot rebuilt at a given spread."""
    span = knots_of(state)[0]
    blocks = layout.extract_blocks(state)
    idx = acts._span_block(blocks, span)
    return acts._lay(state, acts._resized(state, blocks, idx, span, diameter_mm), FORWARD, 0,
                     np.random.default_rng(1))


def kinked_cable(n_kinks: int, seed: int = 0, knot_state=None):
    base = knot_state if knot_state is not None else load_state("straight")
    blocks = layout.extract_blocks(base)
    kt = kink_template(25.0)
    free = [at for at in range(20, N_NODES - 40, 5)
            if all(at + len(kt.local) + 6 < b.start or b.end + 6 < at for b in blocks)]
    rng = np.random.default_rng(seed)
    picks = []
    for at in rng.permutation(free):
        if all(abs(at - q) > len(kt.local) + 8 for q in picks):
            picks.append(int(at))
        if len(picks) == n_kinks:
            break
    for at in picks:
        blocks.append(layout.Block(at, kt.local.copy(), "kink", layout.alternating_flags(kt.local, True)))
    blocks.sort(key=lambda b: b.start)
    for _ in range(20):
        try:
            return layout.lay_lanes(N_NODES, blocks, _initial_plan(blocks, rng), rng)
        except layout.LayoutError:
            continue
    raise layout.LayoutError("no lane plan fits")


# --- full dilation -------------------------------------------------------


def test_correct_dilation_removes_loose_overhand():
    s = load_state("overhand")
    out = acts.cage_pinch_dilation(s, true_proposal(s), 500.0, np.random.default_rng(0), QUIET)
    assert any(isinstance(e, KnotRemoved) for e in out.events)
    assert len(s.crossings) - len(out.new_state.crossings) == 3
    assert knots_of(out.new_state) == []
    assert out.info["correct"] is True


def test_wrong_dilation_tightens_by_factor():
    s = load_state("overhand")
    d0 = knots_of(s)[0].diameter
    out = acts.cage_pinch_dilation(s, wrong_proposal(s), 500.0, np.random.default_rng(0), QUIET)
    (ev,) = [e for e in out.events if isinstance(e, KnotTightened)]
    (span,) = knots_of(out.new_state)
    assert ev.new_diam == pytest.approx(span.diameter)
    assert span.diameter / d0 == pytest.approx(0.7, rel=0.02)
    assert len(out.new_state.crossings) == len(s.crossings)


def test_dense_knot_over_tightens_after_two_wrong_grasps():
    s = sized(generate_initial_state(1, [DENSE], [MID], rng_seed=0, kink_prob=0.0), 60.0)
    assert knots_of(s)[0].diameter == pytest.approx(6.0, abs=0.06)
    for i in range(2):
        s = acts.cage_pinch_dilation(s, wrong_proposal(s), 500.0, np.random.default_rng(i), QUIET).new_state
    span = knots_of(s)[0]
    assert span.diameter <= 3.0
    # the latch: even the true points no longer count as correct
    assert acts.grasp_is_correct(s, *grasp_points(s, *adjacent_knots(s)[0]), QUIET) is None
    out = acts.cage_pinch_dilation(s, true_proposal(s), 500.0, np.random.default_rng(5), QUIET)
    assert not any(isinstance(e, KnotRemoved) for e in out.events)


def test_dilation_separation_capped_by_reach():
    s = load_state("overhand")
    out = acts.cage_pinch_dilation(s, true_proposal(s), 5000.0, np.random.default_rng(0), QUIET)
    assert out.info["separation_mm"] == pytest.approx(np.hypot(1200.0, 750.0))


# --- partial dilation ----------------------------------------------------


@pytest.mark.parametrize("name", ["overhand", "figure8", "series", "kinked", "straight"])
def test_partial_dilation_keeps_crossings(name):
    s = load_state(name)
    t = render(s).truth
    node = knots_of(s)[0].node_range[0] if knots_of(s) else 100
    prop = proposal_at(s, node, node + 6)
    out = acts.partial_cage_pinch_dilation(s, prop, np.random.default_rng(0), QUIET, t)
    assert len(out.new_state.crossings) == len(s.crossings)
    assert out.info["separation_mm"] - out.info["start_separation_mm"] == 50.0


def test_partial_dilation_halves_occlusion():
    s = load_state("overhand")
    span = knots_of(s)[0]
    s = replace(s, occlusion=((span.start_node, 0.4),))
    out = acts.partial_cage_pinch_dilation(s, wrong_proposal(s), np.random.default_rng(0), QUIET)
    new_span = knots_of(out.new_state)[0]
    assert out.new_state.occlusion_of(new_span.start_node) == pytest.approx(0.2)


def test_partial_dilation_on_correct_side_never_shrinks():
    s = load_state("overhand")
    d0 = knots_of(s)[0].diameter
    out = acts.partial_cage_pinch_dilation(s, true_proposal(s), np.random.default_rng(0), QUIET)
    assert knots_of(out.new_state)[0].diameter >= d0


# --- Reidemeister ---------------------------------------------------------


def endpoints_px(state):
    t = render(state).truth
    return tuple(t.endpoints[k] for k in sorted(t.endpoints))


def test_reidemeister_sheds_kinks():
    s = kinked_cable(3)
    assert len(s.crossings) == 3 and is_untangled(s)
    out = acts.reidemeister_move(s, endpoints_px(s), np.random.default_rng(0), QUIET)
    assert len(out.new_state.crossings) == 0
    assert abs(out.new_state.nodes[-1, 0] - out.new_state.nodes[0, 0]) >= 800.0


def test_reidemeister_keeps_knot_crossings():
    s = kinked_cable(2, seed=3, knot_state=load_state("overhand"))
    assert len(s.crossings) == 5
    out = acts.reidemeister_move(s, endpoints_px(s), np.random.default_rng(0), QUIET)
    assert len(out.new_state.crossings) == 3
    assert [k.kind for k in knots_of(out.new_state)] == [k.kind for k in knots_of(s)]


def test_reidemeister_miss_slides_cable():
    s = load_state("overhand")
    cfg = replace(QUIET, grasp_miss=1.0)
    out = acts.reidemeister_move(s, endpoints_px(s), np.random.default_rng(0), cfg)
    assert [type(e).__name__ for e in out.events][:1] == ["GraspMissed"]
    shift = out.new_state.nodes - s.nodes
    assert np.allclose(shift, shift[0]) and 100.0 <= abs(shift[0, 0]) <= 400.0


# --- incremental Reidemeister --------------------------------------------


def test_incremental_on_untangled_noise_off_is_no_knots():
    s = kinked_cable(2, seed=1)
    det = DetectorConfig(noise=False)
    out, verdict, views = acts.incremental_reidemeister(s, endpoints_px(s), np.random.default_rng(0),
                                                        QUIET, det)
    assert verdict is Verdict.NO_KNOTS
    assert len(views) == 3
    assert out.info["views"] == 3


def test_incremental_with_knot_noise_off_sees_it():
    s = load_state("overhand")
    _, verdict, _ = acts.incremental_reidemeister(s, endpoints_px(s), np.random.default_rng(0), QUIET,
                                                  DetectorConfig(noise=False))
    assert verdict is Verdict.KNOTS_REMAIN


def test_views_verdict_uses_last_views_only():
    knot = render(load_state("overhand"))
    clear = render(load_state("straight"))
    det = DetectorConfig(noise=False)
    rng = np.random.default_rng(0)
    assert acts.views_verdict([knot, knot, clear], rng, det, 1) is Verdict.NO_KNOTS
    assert acts.views_verdict([knot, knot, clear], rng, det, 3) is Verdict.KNOTS_REMAIN


def test_multi_view_false_termination_is_rarer():
    # every view misses with probability 1 - recall, independently
    obs = render(load_state("overhand"))
    det = replace(DetectorConfig(), knot_recall=0.5, kink_false_positive=0.0, slack_false_positive=0.0)
    rng = np.random.default_rng(2)
    n = 2000
    one = sum(acts.views_verdict([obs], rng, det, 1) is Verdict.NO_KNOTS for _ in range(n)) / n
    three = sum(acts.views_verdict([obs] * 3, rng, det, 3) is Verdict.NO_KNOTS for _ in range(n)) / n
    assert one == pytest.approx(0.5, abs=0.05)
    assert three == pytest.approx(0.125, abs=0.03)


# --- exposure ---------------------------------------------------------------


def edge_state():
    laid = lay_out(load_state("straight"), (), FORWARD)
    return rigid_shift(laid, (-(laid.nodes[0, 0] + 50.0), 0.0))


def test_exposure_brings_endpoint_back():
    s = edge_state()
    assert s.nodes[0, 0] == pytest.approx(-50.0)
    out = acts.exposure(s, np.random.default_rng(0), QUIET)
    assert sorted(render(out.new_state).truth.endpoints) == [0, N_NODES - 1]
    assert WORKSPACE.reachable.contains(out.new_state.nodes).all()


def test_exposure_without_targets():
    with pytest.raises(NoTargets):
        acts.exposure(lay_out(load_state("straight"), (), FORWARD), np.random.default_rng(0), QUIET)


def test_exposure_choice_is_seeded():
    s = edge_state()
    runs = {tuple(acts.exposure(s, np.random.default_rng(seed), QUIET).info["run"]) for seed in range(20)}
    assert len(runs) == 2
    for seed in range(5):
        a = acts.exposure(s, np.random.default_rng(seed), QUIET)
        b = acts.exposure(s, np.random.default_rng(seed), QUIET)
        assert a.info == b.info and np.array_equal(a.new_state.nodes, b.new_state.nodes)


def test_exposure_slip_leaves_cable_in_place():
    s = edge_state()
    out = acts.exposure(s, np.random.default_rng(0), replace(QUIET, exposure_slip=1.0))
    assert [type(e).__name__ for e in out.events] == ["CableSlipped"]
    assert np.array_equal(out.new_state.nodes, s.nodes)


# --- ledgers ---------------------------------------------------------------


def test_duration_ledger():
    d = QUIET.durations
    s = load_state("overhand")
    s = s.advance(12.5)
    rng = np.random.default_rng(0)
    eps = endpoints_px(s)
    cases = [
        (acts.cage_pinch_dilation(s, true_proposal(s), 400.0, rng, QUIET), d.dilation),
        (acts.partial_cage_pinch_dilation(s, wrong_proposal(s), rng, QUIET), d.partial_dilation),
        (acts.reidemeister_move(s, eps, rng, QUIET), d.reidemeister),
        (acts.incremental_reidemeister(s, eps, rng, QUIET)[0], d.incremental_reidemeister),
        (acts.exposure(edge_state().advance(12.5), rng, QUIET), d.exposure),
    ]
    for out, want in cases:
        assert out.duration_s == want
        assert out.new_state.sim_clock == pytest.approx(12.5 + want, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_events_match_span_counts(seed):
    rng = np.random.default_rng(seed)
    s = generate_initial_state(1 + seed % 2, rng_seed=seed)
    spans = knots_of(s)
    n = N_NODES - 1
    lo = int(np.clip(spans[0].node_range[0] - rng.integers(0, 10), 0, n))
    try:
        prop = true_proposal(s) if seed % 3 == 0 else proposal_at(s, lo, min(lo + 30, n))
        out = acts.cage_pinch_dilation(s, prop, 400.0, rng, RunConfig().acts)
    except (acts.Unreachable, IndexError):
        pytest.skip("grasp point off the image for this seed")
    removed = sum(isinstance(e, KnotRemoved) for e in out.events)
    assert removed == len(spans) - len(knots_of(out.new_state))
    assert len(out.new_state.crossings) <= len(s.crossings)
