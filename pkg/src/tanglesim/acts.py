"""The five manipulation primitives, built from grasps, lay-outs and topology-level outcome rules.

Knot dynamics under a pull are not simulated in detail. A full dilation with
grasp points close to the true cage and pinch points of an endpoint-adjacent
knot removes the knot; otherwise the knot it touched tightens. Everything
else (separations, lifts, slides, lay-outs) is carried by rigid-block
re-layouts of the cable, which keep every remaining crossing intact.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import layout
from .cable import SEG_LEN_MM, KnotKind, KnotSpan, SimState, adjacent_knots, gauss_code, grasp_points, knots_of
from .observe import render
from .percept.detect import DetectorConfig, detect_knots
from .percept.ensemble import GraspProposal
from .quasistatics import (FORWARD, WIDE_U, Arm, GraspMode, Unreachable, grasp_node, lay_blocks,
                           rigid_shift, settle, slack_spill, workspace_of)
from .templates import knot_template

log = logging.getLogger(__name__)

__all__ = [
    "ActsConfig", "Durations", "PrimitiveOutcome", "Verdict", "NoTargets", "Unreachable",
    "KnotRemoved", "KnotTightened", "KnotLoosened", "GraspMissed", "CableSpilled", "CableSlipped",
    "cage_pinch_dilation", "partial_cage_pinch_dilation", "reidemeister_move",
    "incremental_reidemeister", "exposure", "grasp_is_correct",
]


@dataclass(frozen=True)
class Durations:
    """Simulated seconds per primitive, perception included."""

    dilation: float = 55.0
    partial_dilation: float = 30.0
    reidemeister: float = 45.0
    incremental_reidemeister: float = 90.0
    exposure: float = 30.0
    perception: float = 10.0
    done: float = 0.0


@dataclass(frozen=True)
class ActsConfig:
    grasp_tolerance_mm: float = 25.0
    tighten_factor: float = 0.7
    tight_diameter_cm: float = 3.0
    min_diameter_mm: float = 15.0
    touch_nodes: int = 15  # a wrong grasp within this many nodes of a knot tightens it
    partial_separation_mm: float = 50.0
    disambiguation: float = 0.5  # occlusion factor after a partial dilation
    loosen_mm: float = 10.0
    grasp_miss: float = 0.02
    grasp_miss_false_endpoint: float = 0.5
    slide_mm: tuple = (100.0, 400.0)
    exposure_slip: float = 0.3
    waypoints: int = 3
    spill: float = 0.05
    lost_fraction: float = 0.6
    endpoint_match_px: float = 15.0
    default_occlusion: float = 0.3
    durations: Durations = Durations()


# ---------------------------------------------------------------------------
# events


@dataclass(frozen=True)
class KnotRemoved:
    u: float


@dataclass(frozen=True)
class KnotTightened:
    u: float
    new_diam: float  # cm


@dataclass(frozen=True)
class KnotLoosened:
    u: float
    new_diam: float


@dataclass(frozen=True)
class GraspMissed:
    pass


@dataclass(frozen=True)
class CableSpilled:
    pass


@dataclass(frozen=True)
class CableSlipped:
    pass


def event_name(e) -> str:
    if isinstance(e, (KnotRemoved, KnotTightened, KnotLoosened)):
        extra = f":{e.new_diam:.2f}" if hasattr(e, "new_diam") else ""
        return f"{type(e).__name__}({e.u:.3f}{extra})"
    return type(e).__name__


@dataclass(frozen=True)
class PrimitiveOutcome:
    new_state: SimState
    duration_s: float
    events: tuple = ()
    info: dict = field(default_factory=dict)


class NoTargets(RuntimeError):
    """Exposure found no cable outside the reachable area."""


class Verdict(str, enum.Enum):
    KNOTS_REMAIN = "KnotsRemain"
    NO_KNOTS = "NoKnots"


# ---------------------------------------------------------------------------
# shared helpers


def _truth(state: SimState, truth=None):
    return truth if truth is not None else render(state).truth


def _finish(state: SimState, out: SimState, duration: float, events, rng, cfg: ActsConfig, info=None):
    """Spill check and clock advance shared by every primitive."""
    events = list(events)
    spill = slack_spill(out, rng, p_spill=cfg.spill, lost_fraction=cfg.lost_fraction)
    if spill.spilled:
        events.append(CableSpilled())
    new = replace(spill.state, sim_clock=state.sim_clock).advance(duration)
    return PrimitiveOutcome(new, duration, tuple(events), dict(info or {}))


def _first_over(state: SimState, span: KnotSpan) -> bool:
    e = next(e for e in gauss_code(state).entries if e.crossing in span.crossings)
    return bool(e.over)


def _span_block(blocks, span: KnotSpan):
    lo, hi = span.node_range
    for i, b in enumerate(blocks):
        if b.start <= lo and hi <= b.end:
            return i
    # fall back to the block with the largest overlap
    best = max(range(len(blocks)), key=lambda i: min(blocks[i].end, hi) - max(blocks[i].start, lo))
    return best


def _carry_occlusion(old: SimState, new: SimState, drop=None, overrides=None, default=0.3) -> SimState:
    """Re-key per-knot occlusion after a re-layout, matching knots by order along the cable."""
    old_spans = knots_of(old)
    vals = [old.occlusion_of(s.start_node, default) for s in old_spans]
    overrides = overrides or {}
    vals = [overrides.get(i, v) for i, v in enumerate(vals)]
    if drop is not None:
        vals = [v for i, v in enumerate(vals) if i != drop]
    new_spans = knots_of(new)
    if len(new_spans) != len(vals):
        vals = (vals + [default] * len(new_spans))[:len(new_spans)]
    occ = tuple((s.start_node, float(v)) for s, v in zip(new_spans, vals))
    return replace(new, occlusion=occ)


def _lay(state: SimState, blocks, pattern: str, side: int, rng, u_plans=None) -> SimState | None:
    try:
        st = lay_blocks(state, blocks, pattern, side, rng, strict=True, u_plans=u_plans)
    except layout.LayoutError:
        return None
    return settle(st)


def _nearest_knot(spans, node: int, reach: int):
    best, best_d = None, None
    for i, s in enumerate(spans):
        lo, hi = s.node_range
        d = 0 if lo <= node <= hi else min(abs(node - lo), abs(node - hi))
        if d <= reach and (best_d is None or d < best_d):
            best, best_d = i, d
    return best


def _grasp_nodes(state, proposal: GraspProposal, truth):
    cage = truth.node_of_pixel(proposal.cage_px)
    pinch = truth.node_of_pixel(proposal.pinch_px)
    grasp_node(state, cage, Arm.LEFT, GraspMode.CAGE)
    grasp_node(state, pinch, Arm.RIGHT, GraspMode.PINCH)
    return cage, pinch


def grasp_is_correct(state: SimState, cage: int, pinch: int, cfg: ActsConfig = ActsConfig()):
    """The endpoint-adjacent knot index untied by grasping (cage, pinch) nodes, or None.

    Tolerance is measured as arclength along the cable so a point on a
    neighbouring strand never counts. Knots at or below the tight diameter
    admit no correct grasp.
    """
    spans = knots_of(state)
    tol_nodes = cfg.grasp_tolerance_mm / SEG_LEN_MM
    for span, side in adjacent_knots(state):
        if span.diameter <= cfg.tight_diameter_cm:
            continue
        c_true, p_true = grasp_points(state, span, side)
        if abs(cage - c_true) <= tol_nodes and abs(pinch - p_true) <= tol_nodes:
            return spans.index(span)
    return None


def _layout_side(state: SimState, node: int) -> int:
    return 0 if node <= (state.centerline.n_nodes - 1) / 2 else 1


def _resized(state: SimState, blocks, idx_block: int, span: KnotSpan, diameter_mm: float):
    b = blocks[idx_block]
    t = knot_template(span.kind, float(np.floor(diameter_mm * 10.0) / 10.0))
    new_block = layout.template_block(t, b.start, _first_over(state, span))
    out = list(blocks)
    out[idx_block] = new_block
    return out


# ---------------------------------------------------------------------------
# primitives


def cage_pinch_dilation(state: SimState, proposal: GraspProposal, trace_len_px: float,
                        rng: np.random.Generator, cfg: ActsConfig = ActsConfig(), truth=None) -> PrimitiveOutcome:
    """Full dilation: pull the cage and pinch points apart, then lay the cable forward."""
    truth = _truth(state, truth)
    cage, pinch = _grasp_nodes(state, proposal, truth)
    ws = workspace_of(state)
    feasible = float(np.hypot(ws.reachable.x1 - ws.reachable.x0, ws.reachable.y1 - ws.reachable.y0))
    separation = min(float(trace_len_px), feasible)  # 1 px = 1 mm
    spans = knots_of(state)
    blocks = layout.extract_blocks(state)
    side = _layout_side(state, cage)
    info = {"cage_node": cage, "pinch_node": pinch, "separation_mm": separation}
    hit = grasp_is_correct(state, cage, pinch, cfg)
    events = []
    out = None
    if hit is not None:
        span = spans[hit]
        kept = [b for i, b in enumerate(blocks) if i != _span_block(blocks, span)]
        out = _lay(state, kept, FORWARD, side, rng)
        if out is not None and len(knots_of(out)) == len(spans) - 1:
            out = _carry_occlusion(state, out, drop=hit, default=cfg.default_occlusion)
            events.append(KnotRemoved(span.u_interval[0]))
            info["correct"] = True
        else:
            out = None
    if out is None:
        k = _nearest_knot(spans, cage, cfg.touch_nodes)
        if k is None:
            k = _nearest_knot(spans, pinch, cfg.touch_nodes)
        info["correct"] = False
        if k is not None and spans[k].kind is not KnotKind.UNKNOWN:
            span = spans[k]
            d_new = max(span.diameter * 10.0 * cfg.tighten_factor, cfg.min_diameter_mm)
            if d_new < span.diameter * 10.0:
                # templates hit their spread to 1%, so aim low to never overshoot
                resized = _resized(state, blocks, _span_block(blocks, span), span, d_new * 0.99)
                out = _lay(state, resized, FORWARD, side, rng)
                if out is not None and len(knots_of(out)) == len(spans):
                    out = _carry_occlusion(state, out, default=cfg.default_occlusion)
                    events.append(KnotTightened(span.u_interval[0], knots_of(out)[k].diameter))
                else:
                    out = None
        if out is None:
            out = _lay(state, blocks, FORWARD, side, rng) or state
            out = _carry_occlusion(state, out, default=cfg.default_occlusion)
    return _finish(state, out, cfg.durations.dilation, events, rng, cfg, info)


def partial_cage_pinch_dilation(state: SimState, proposal: GraspProposal, rng: np.random.Generator,
                                cfg: ActsConfig = ActsConfig(), truth=None) -> PrimitiveOutcome:
    """Separate the grasp points by a fixed extra distance to perturb an ambiguous knot."""
    truth = _truth(state, truth)
    cage, pinch = _grasp_nodes(state, proposal, truth)
    nodes = state.nodes
    start_sep = float(np.linalg.norm(nodes[cage] - nodes[pinch]))
    info = {"cage_node": cage, "pinch_node": pinch, "start_separation_mm": start_sep,
            "separation_mm": start_sep + cfg.partial_separation_mm}
    spans = knots_of(state)
    k = _nearest_knot(spans, cage, cfg.touch_nodes)
    events = []
    if k is None:
        return _finish(state, state, cfg.durations.partial_dilation, events, rng, cfg, info)
    span = spans[k]
    occ = state.occlusion_of(span.start_node, cfg.default_occlusion) * cfg.disambiguation
    out = None
    correct = grasp_is_correct(state, cage, pinch, cfg) == k
    if correct and span.kind is not KnotKind.UNKNOWN:
        blocks = layout.extract_blocks(state)
        resized = _resized(state, blocks, _span_block(blocks, span), span,
                           span.diameter * 10.0 + cfg.loosen_mm)
        out = _lay(state, resized, FORWARD, _layout_side(state, cage), rng)
        if out is not None and len(knots_of(out)) == len(spans) and \
                knots_of(out)[k].diameter >= span.diameter:
            events.append(KnotLoosened(span.u_interval[0], knots_of(out)[k].diameter))
        else:
            out = None
    if out is None:
        out = state
    out = _carry_occlusion(state, out, overrides={k: occ}, default=cfg.default_occlusion)
    return _finish(state, out, cfg.durations.partial_dilation, events, rng, cfg, info)


def _endpoints_true(truth, endpoint_px, cfg: ActsConfig) -> bool:
    real = list(truth.endpoints.values())
    if not real:
        return False
    for p in endpoint_px:
        if min(np.hypot(p[0] - q[0], p[1] - q[1]) for q in real) > cfg.endpoint_match_px:
            return False
    return True


def _missed(state, truth, endpoint_px, rng, cfg: ActsConfig) -> bool:
    p = cfg.grasp_miss if _endpoints_true(truth, endpoint_px, cfg) else cfg.grasp_miss_false_endpoint
    return bool(rng.random() < p)


def _slide(state: SimState, rng, cfg: ActsConfig) -> SimState:
    lo, hi = cfg.slide_mm
    dx = float(rng.uniform(lo, hi)) * (1 if rng.random() < 0.5 else -1)
    return rigid_shift(state, (dx, 0.0))


def _lift_and_spread(state: SimState, rng, u_plans=None) -> SimState | None:
    """Loops fall away during the lift; the knots are laid into a wide U."""
    blocks = [b for b in layout.extract_blocks(state) if b.label != "kink"]
    return _lay(state, blocks, WIDE_U, 0, rng, u_plans)


def reidemeister_move(state: SimState, endpoint_px, rng: np.random.Generator,
                      cfg: ActsConfig = ActsConfig(), truth=None) -> PrimitiveOutcome:
    """Grasp near both endpoints, lift so reducible loops fall out, lay the cable in a U."""
    truth = _truth(state, truth)
    if _missed(state, truth, endpoint_px, rng, cfg):
        return _finish(state, _slide(state, rng, cfg), cfg.durations.reidemeister, [GraspMissed()], rng, cfg)
    out = _lift_and_spread(state, rng)
    if out is None:
        out = state
    out = _carry_occlusion(state, out, default=cfg.default_occlusion)
    return _finish(state, out, cfg.durations.reidemeister, [], rng, cfg)


def _waypoint_plans(n: int):
    """U plans for the pauses: progressively wider, the last one the full lay-out."""
    full = layout.UPlan()
    if n <= 1:
        return [full]
    plans = []
    for k in range(n):
        f = (k + 1) / n
        inset = (1.0 - f) * 250.0
        plans.append(replace(full, x_left=full.x_left + inset, x_right=full.x_right - inset))
    return plans


def views_verdict(views, rng: np.random.Generator, detector: DetectorConfig, use_views: int) -> Verdict:
    """NoKnots iff every used view (the last ``use_views``) reports zero knots."""
    for obs in views[len(views) - use_views:]:
        if detect_knots(obs, rng, detector):
            return Verdict.KNOTS_REMAIN
    return Verdict.NO_KNOTS


def incremental_reidemeister(state: SimState, endpoint_px, rng: np.random.Generator,
                             cfg: ActsConfig = ActsConfig(), detector: DetectorConfig = DetectorConfig(),
                             views_used: int | None = None, truth=None):
    """Reidemeister motion paused at waypoints; each pause is rendered and checked for knots.

    Returns ``(outcome, verdict, views)``. ``views_used`` counts the final
    views that take part in the verdict (all of them by default).
    """
    truth = _truth(state, truth)
    n = max(int(cfg.waypoints), 1)
    used = n if views_used is None else max(1, min(int(views_used), n))
    if _missed(state, truth, endpoint_px, rng, cfg):
        moved = _slide(state, rng, cfg)
        views = [render(moved)]
        verdict = views_verdict(views, rng, detector, 1)
        out = _finish(state, moved, cfg.durations.incremental_reidemeister, [GraspMissed()], rng, cfg)
        return out, verdict, views
    final = _lift_and_spread(state, rng) or state
    states = []
    prev = state
    for plan in _waypoint_plans(n)[:-1]:
        # a pause whose narrower U does not fit is observed at the previous pose
        prev = _lift_and_spread(state, rng, [plan]) or prev
        states.append(prev)
    states.append(final)
    views = [render(st, step_index=i) for i, st in enumerate(states)]
    verdict = views_verdict(views, rng, detector, used)
    final = _carry_occlusion(state, final, default=cfg.default_occlusion)
    out = _finish(state, final, cfg.durations.incremental_reidemeister, [], rng, cfg, {"views": used})
    return out, verdict, views


def _runs(mask: np.ndarray):
    d = np.diff(np.concatenate([[0], mask.astype(int), [0]]))
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1) - 1))


def exposure(state: SimState, rng: np.random.Generator, cfg: ActsConfig = ActsConfig()) -> PrimitiveOutcome:
    """Pull a randomly chosen off-reach run of cable back toward the workspace centre."""
    ws = workspace_of(state)
    off = ~ws.reachable.contains(state.nodes)
    runs = _runs(off)
    if not runs:
        raise NoTargets("the whole cable is inside the reachable area")
    n = state.centerline.n_nodes
    a, b = runs[int(rng.integers(len(runs)))]
    boundary = b + 1 if a == 0 else a - 1
    boundary = int(np.clip(boundary, 0, n - 1))
    info = {"run": [int(a), int(b)], "boundary_node": boundary}
    if rng.random() < cfg.exposure_slip:
        return _finish(state, state, cfg.durations.exposure, [CableSlipped()], rng, cfg, info)
    blocks = layout.extract_blocks(state)
    out = _lay(state, blocks, FORWARD, _layout_side(state, boundary), rng)
    if out is None:
        # at least drag the cable toward the centre
        centre = ws.reachable.center
        out = rigid_shift(state, (centre - state.nodes[boundary]) * 0.5)
    out = _carry_occlusion(state, out, default=cfg.default_occlusion)
    return _finish(state, out, cfg.durations.exposure, [], rng, cfg, info)
