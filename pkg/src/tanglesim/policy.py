"""The untangling decision tree and its single-step driver.

``decide`` is a pure function of percepts derived from the observation.
Ground truth reaches perception only through the noise models and reaches
the acts only through their outcome rules; the policy never reads it.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from . import acts
from .acts import NoTargets, Unreachable, Verdict, event_name
from .cable import SimState, knots_of
from .observe import Observation, render, save_png
from .percept.detect import Detection, detect_endpoints, detect_knots
from .percept.ensemble import GraspProposal, NetworkStatus, knot_crop, make_ensemble, score_cage_pinch
from .percept.trace import KnotBBoxes, TraceConfig, TraceResult, TraceStatus, trace
from .quasistatics import WORKSPACE

if TYPE_CHECKING:
    from .config import RunConfig


@dataclass(frozen=True)
class PolicyConfig:
    uncertainty_enabled: bool = True
    kappa: float = 0.35
    knot_threshold_px: float = 24.0
    endpoint_threshold_px: float = 12.0
    ensemble_size: int = 3
    waypoint_views: int = 3
    max_endpoints_traced: int = 2
    reach_margin_px: float = 10.0  # proposals this close to the reach limit count as unreachable

    @property
    def members(self) -> int:
        return self.ensemble_size if self.uncertainty_enabled else 1

    @property
    def views(self) -> int:
        return self.waypoint_views if self.uncertainty_enabled else 1

    def trace_config(self, base: TraceConfig = TraceConfig()) -> TraceConfig:
        return replace(base, knot_threshold_px=self.knot_threshold_px,
                       endpoint_threshold_px=self.endpoint_threshold_px)


# ---------------------------------------------------------------------------
# percepts and actions


@dataclass(frozen=True)
class Percepts:
    endpoints: tuple = ()  # Detection
    knots: tuple = ()  # Detection
    traces: tuple = ()  # TraceResult per traced endpoint, knot mode
    proposal: GraspProposal | None = None
    chosen: int | None = None  # index into traces the proposal was scored from
    last_verdict: Verdict | None = None
    last_unreachable: bool = False  # the previous grasp attempt failed for reach


@dataclass(frozen=True)
class Exposure:
    name = "Exposure"


@dataclass(frozen=True)
class Reidemeister:
    endpoint_px: tuple = ()
    name = "Reidemeister"


@dataclass(frozen=True)
class IncrementalReidemeister:
    endpoint_px: tuple = ()
    name = "IncrementalReidemeister"


@dataclass(frozen=True)
class CagePinchDilation:
    proposal: GraspProposal
    trace_len: float
    name = "CagePinchDilation"


@dataclass(frozen=True)
class PartialCagePinchDilation:
    proposal: GraspProposal
    name = "PartialCagePinchDilation"


@dataclass(frozen=True)
class Done:
    name = "Done"


ACTION_NAMES = ("Exposure", "Reidemeister", "IncrementalReidemeister", "CagePinchDilation",
                "PartialCagePinchDilation", "Done")


def _trace_certain(t: TraceResult, config: PolicyConfig) -> bool:
    if not config.uncertainty_enabled:
        return True
    return t.status is TraceStatus.CERTAIN and not t.dead_end


def select_trace(traces, config: PolicyConfig):
    """Index of the trace to act on: the shortest among those counted as certain."""
    ok = [i for i, t in enumerate(traces) if _trace_certain(t, config)]
    if not ok:
        return None
    return min(ok, key=lambda i: (traces[i].trace_len_px, i))


def _reachable_px(px, margin: float = 0.0) -> bool:
    r = WORKSPACE.reachable
    x, y = float(px[0]), float(px[1])
    return r.x0 + margin <= x <= r.x1 - margin and r.y0 + margin <= y <= r.y1 - margin


def _endpoint_px(percepts: Percepts):
    return tuple(d.center for d in percepts.endpoints[:2])


def decide(percepts: Percepts, config: PolicyConfig = PolicyConfig()):
    """Map percepts to exactly one action."""
    if percepts.last_verdict is Verdict.NO_KNOTS:
        return Done()
    n_end = min(len(percepts.endpoints), 2)
    n_knot = len(percepts.knots)
    if n_end == 0:
        return Exposure()
    if n_knot == 0:
        return IncrementalReidemeister(_endpoint_px(percepts)) if n_end == 2 else Exposure()
    chosen = percepts.chosen
    if chosen is None:
        chosen = select_trace(percepts.traces, config)
    if chosen is None or percepts.proposal is None:
        return Reidemeister(_endpoint_px(percepts)) if n_end == 2 else Exposure()
    prop = percepts.proposal
    m = config.reach_margin_px
    if percepts.last_unreachable or not (_reachable_px(prop.cage_px, m) and _reachable_px(prop.pinch_px, m)):
        # a knot we cannot reach is pulled back in by an exposure
        return Exposure()
    if not config.uncertainty_enabled or prop.status is NetworkStatus.CERTAIN:
        return CagePinchDilation(prop, float(percepts.traces[chosen].trace_len_px))
    return PartialCagePinchDilation(prop)


def _box_for(t: TraceResult, knots) -> tuple:
    if 0 <= t.stop_box < len(knots):
        return knots[t.stop_box].bbox
    tip = t.representative[-1]
    return min((k.bbox for k in knots),
               key=lambda b: np.hypot(0.5 * (b[0] + b[2]) - tip[0], 0.5 * (b[1] + b[3]) - tip[1]))


def perceive(obs: Observation, rng: np.random.Generator, run: "RunConfig",
             last_verdict: Verdict | None = None, last_unreachable: bool = False) -> Percepts:
    pcfg = run.policy
    endpoints = tuple(detect_endpoints(obs, rng, run.detector))
    knots = tuple(detect_knots(obs, rng, run.detector))
    if not endpoints or not knots:
        return Percepts(endpoints, knots, (), None, None, last_verdict, last_unreachable)
    tcfg = pcfg.trace_config(run.trace)
    boxes = KnotBBoxes(tuple(k.bbox for k in knots))
    traces = tuple(trace(obs.mask, d.center, boxes, tcfg) for d in endpoints[:pcfg.max_endpoints_traced])
    chosen = select_trace(traces, pcfg)
    proposal = None
    if chosen is not None:
        t = traces[chosen]
        crop = knot_crop(obs, _box_for(t, knots), t.tail, default_occlusion=run.acts.default_occlusion)
        proposal, _ = score_cage_pinch(crop, make_ensemble(pcfg.members, run.member), rng, pcfg.kappa)
    return Percepts(endpoints, knots, traces, proposal, chosen, last_verdict, last_unreachable)


# ---------------------------------------------------------------------------
# one step


@dataclass
class StepRecord:
    index: int
    action: str
    duration_s: float
    events: list
    k_t: int
    statuses: dict = field(default_factory=dict)
    sim_clock: float = 0.0
    error: str | None = None
    frame: str | None = None

    def to_dict(self) -> dict:
        return {"index": self.index, "action": self.action, "duration_s": self.duration_s,
                "events": list(self.events), "k_t": self.k_t, "statuses": self.statuses,
                "sim_clock": self.sim_clock, "error": self.error, "frame": self.frame}

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(d["index"], d["action"], d["duration_s"], list(d["events"]), d["k_t"],
                   dict(d.get("statuses", {})), d.get("sim_clock", 0.0), d.get("error"), d.get("frame"))


TIMED_OUT = "TimedOut"


def _statuses(p: Percepts, verdict=None) -> dict:
    out = {"endpoints": len(p.endpoints), "knots": len(p.knots),
           "traces": [t.status.value for t in p.traces]}
    if p.proposal is not None:
        out["network"] = p.proposal.status.value
        out["confidence"] = round(float(p.proposal.confidence), 6)
    if verdict is not None:
        out["verdict"] = verdict.value
    return out


def step(state: SimState, run: "RunConfig", rng: np.random.Generator,
         previous: StepRecord | None = None, index: int = 0, frame_dir=None):
    """Render, perceive, decide and act once; returns ``(new_state, record)``."""
    if state.sim_clock >= run.t_max_s:
        return state, StepRecord(index, TIMED_OUT, 0.0, [], len(knots_of(state)), {}, state.sim_clock)
    obs = render(state, index)
    frame = None
    if frame_dir is not None:
        frame = str(frame_dir / f"step_{index}.png")
        save_png(obs, frame)
    last = None
    if previous is not None and previous.action == IncrementalReidemeister.name:
        v = previous.statuses.get("verdict")
        last = Verdict(v) if v else None
    unreachable = previous is not None and (previous.error or "").startswith(Unreachable.__name__)
    percepts = perceive(obs, rng, run, last, unreachable)
    action = decide(percepts, run.policy)
    cfg = run.acts
    truth = obs.truth
    verdict = None
    error = None
    try:
        if isinstance(action, Done):
            outcome = acts.PrimitiveOutcome(state.advance(cfg.durations.done), cfg.durations.done)
        elif isinstance(action, Exposure):
            outcome = acts.exposure(state, rng, cfg)
        elif isinstance(action, Reidemeister):
            outcome = acts.reidemeister_move(state, action.endpoint_px, rng, cfg, truth)
        elif isinstance(action, IncrementalReidemeister):
            outcome, verdict, _ = acts.incremental_reidemeister(
                state, action.endpoint_px, rng, cfg, run.detector, run.policy.views, truth)
        elif isinstance(action, CagePinchDilation):
            outcome = acts.cage_pinch_dilation(state, action.proposal, action.trace_len, rng, cfg, truth)
        else:
            outcome = acts.partial_cage_pinch_dilation(state, action.proposal, rng, cfg, truth)
    except (Unreachable, NoTargets) as exc:
        # perception-only step: nothing moved but time passed
        error = f"{type(exc).__name__}: {exc}"
        outcome = acts.PrimitiveOutcome(state.advance(cfg.durations.perception), cfg.durations.perception)
    new = outcome.new_state
    rec = StepRecord(index, action.name, float(outcome.duration_s),
                     [event_name(e) for e in outcome.events], len(knots_of(new)),
                     _statuses(percepts, verdict), float(new.sim_clock), error, frame)
    return new, rec
