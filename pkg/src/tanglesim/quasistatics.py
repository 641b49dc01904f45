"""Quasi-static cable manipulation: grasps, pulls, settling and workspace bounds."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import layout
from .cable import SimState, gauss_code, knots_of
from .geometry import segment_lengths, turning_angles

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Rect:
    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, float)
        return ((pts[..., 0] >= self.x0) & (pts[..., 0] <= self.x1)
                & (pts[..., 1] >= self.y0) & (pts[..., 1] <= self.y1))

    def within(self, other: "Rect") -> bool:
        return (other.x0 <= self.x0 and self.x1 <= other.x1
                and other.y0 <= self.y0 and self.y1 <= other.y1)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2])

    def boundary_distance(self, pts) -> np.ndarray:
        """Unsigned distance to the rectangle outline."""
        pts = np.asarray(pts, float)
        x, y = pts[..., 0], pts[..., 1]
        dx = np.maximum(np.maximum(self.x0 - x, x - self.x1), 0)
        dy = np.maximum(np.maximum(self.y0 - y, y - self.y1), 0)
        outside = np.hypot(dx, dy)
        inside = np.minimum.reduce([x - self.x0, self.x1 - x, y - self.y0, self.y1 - y])
        return np.where(self.contains(pts), inside, outside)


@dataclass(frozen=True)
class Workspace:
    observable: Rect = Rect(100.0, 75.0, 1100.0, 825.0)
    reachable: Rect = Rect(0.0, 75.0, 1200.0, 825.0)
    image: Rect = Rect(0.0, 0.0, 1200.0, 900.0)

    def __post_init__(self):
        if not (self.observable.within(self.reachable) and self.reachable.within(self.image)):
            raise ValueError("workspace rectangles must nest: observable within reachable within image")


WORKSPACE = Workspace()


def workspace_of(state: SimState) -> Workspace:
    return state.workspace if isinstance(state.workspace, Workspace) else WORKSPACE


class Unreachable(RuntimeError):
    pass


class Arm(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


class GraspMode(str, enum.Enum):
    CAGE = "cage"
    PINCH = "pinch"


@dataclass(frozen=True)
class GraspHandle:
    arm: Arm
    node_index: int
    mode: GraspMode


def grasp(state: SimState, u: float, arm: Arm, mode: GraspMode) -> GraspHandle:
    idx = state.centerline.node_at(u)
    return grasp_node(state, idx, arm, mode)


def grasp_node(state: SimState, idx: int, arm: Arm, mode: GraspMode) -> GraspHandle:
    if not 0 <= idx < state.centerline.n_nodes:
        raise IndexError(f"node {idx} outside the centerline")
    if not workspace_of(state).reachable.contains(state.nodes[idx]):
        raise Unreachable(f"node {idx} at {state.nodes[idx].round(1).tolist()} is outside reach")
    return GraspHandle(Arm(arm), int(idx), GraspMode(mode))


# ---------------------------------------------------------------------------
# pulling


@dataclass(frozen=True)
class PullResult:
    state: SimState
    overstretched: bool
    handles: tuple[GraspHandle, ...]


def _follow(nodes, fixed, direction, stop, seg):
    """Follow-the-leader pass from ``fixed`` toward ``stop`` (exclusive of ``fixed``)."""
    j = fixed + direction
    while j != stop:
        d = nodes[j] - nodes[j - direction]
        n = np.linalg.norm(d)
        if n > 1e-12:
            nodes[j] = nodes[j - direction] + d * (seg / n)
        j += direction


def _span_between(nodes, a, b, pa, pb, seg, iters=30):
    """Fit nodes a..b between fixed end positions (FABRIK)."""
    chord = pb - pa
    L = (b - a) * seg
    c = np.linalg.norm(chord)
    if c > 1e-9 and c < L and b - a >= 2:
        normal = np.array([-chord[1], chord[0]]) / c
        dev = (nodes[a:b + 1] - pa) @ normal
        if np.abs(dev).max() < 1.0:
            # a straight chain under compression: seed a bow so it buckles sideways
            t = np.linspace(0.0, 1.0, b - a + 1)
            amp = 0.5 * np.sqrt(L * L - c * c)
            nodes[a:b + 1] = pa + t[:, None] * chord + (amp * np.sin(np.pi * t))[:, None] * normal
    for _ in range(iters):
        nodes[a] = pa
        _follow(nodes, a, 1, b + 1, seg)
        nodes[b] = pb
        _follow(nodes, b, -1, a - 1, seg)
        nodes[a] = pa
        if abs(np.linalg.norm(nodes[a + 1] - nodes[a]) - seg) < 1e-3:
            break


def _stoppers(state: SimState) -> np.ndarray:
    """Nodes a sliding cage cannot pass: knot bodies."""
    stop = np.zeros(state.centerline.n_nodes, bool)
    for k in knots_of(state):
        a, b = k.node_range
        stop[max(a - 1, 0): b + 2] = True
    return stop


def pull(state: SimState, handles, targets, step_mm: float = 5.0) -> PullResult:
    """Drag grasped nodes along straight lines to ``targets``.

    Pinch handles hold their node. A cage handle lets the cable slide through
    it away from the other handle until a knot body or the endpoint reaches
    the jaw. Pinch-to-pinch separation beyond the available arclength is
    truncated at 99% of it.
    """
    handles = list(handles)
    if not 1 <= len(handles) <= 2:
        raise ValueError("pull takes one or two handles")
    if len({h.arm for h in handles}) != len(handles):
        raise ValueError("at most one handle per arm")
    if len(handles) == 2 and handles[0].node_index == handles[1].node_index:
        raise ValueError("two handles on the same node")
    seg = state.centerline.seg_len
    nodes = state.nodes.copy()
    n = len(nodes)
    targets = [np.asarray(t, float) for t in targets]
    starts = [nodes[h.node_index].copy() for h in handles]
    idx = [h.node_index for h in handles]
    over = False
    if len(handles) == 2:
        stop = _stoppers(state)
        if idx[0] > idx[1]:
            handles, targets, starts, idx = handles[::-1], targets[::-1], starts[::-1], idx[::-1]
        # the arclength budget between handles, counting what a cage can draw in
        reach = (idx[1] - idx[0]) * seg
        drawable = reach
        if handles[0].mode is GraspMode.CAGE:
            j = idx[0]
            while j > 0 and not stop[j - 1]:
                j -= 1
            drawable += (idx[0] - j) * seg
        if handles[1].mode is GraspMode.CAGE:
            j = idx[1]
            while j < n - 1 and not stop[j + 1]:
                j += 1
            drawable += (j - idx[1]) * seg
        want = np.linalg.norm(targets[1] - targets[0])
        if want > 0.99 * drawable:
            over = True
            mid = 0.5 * (targets[0] + targets[1])
            half = 0.5 * 0.99 * drawable * (targets[1] - targets[0]) / max(want, 1e-9)
            targets = [mid - half, mid + half]
    dist = max(np.linalg.norm(t - s) for t, s in zip(targets, starts))
    steps = max(int(np.ceil(dist / step_mm)), 1)
    for k in range(1, steps + 1):
        f = k / steps
        pos = [s + f * (t - s) for s, t in zip(starts, targets)]
        if len(handles) == 1:
            i = idx[0]
            nodes[i] = pos[0]
            _follow(nodes, i, 1, n, seg)
            _follow(nodes, i, -1, -1, seg)
            continue
        a, b = idx
        sep = np.linalg.norm(pos[1] - pos[0])
        # slide cable through cage jaws while the span between is taut
        while sep > 0.995 * (b - a) * seg:
            moved = False
            if handles[1].mode is GraspMode.CAGE and b < n - 1 and not stop[b + 1]:
                b += 1
                moved = True
            elif handles[0].mode is GraspMode.CAGE and a > 0 and not stop[a - 1]:
                a -= 1
                moved = True
            if not moved:
                break
        nodes[a] = pos[0]
        nodes[b] = pos[1]
        _span_between(nodes, a, b, pos[0], pos[1], seg)
        _follow(nodes, a, -1, -1, seg)
        _follow(nodes, b, 1, n, seg)
        idx = [a, b]
    moving = np.linalg.norm(nodes - state.nodes, axis=1) > 1.0
    new = state.moved_to(nodes, moving=moving)
    new_handles = tuple(replace(h, node_index=int(i)) for h, i in zip(handles, idx))
    return PullResult(new, over, new_handles)


# ---------------------------------------------------------------------------
# settling


@dataclass(frozen=True)
class RelaxResult:
    """Best iterate of a settle; ``converged`` is False when ``max_iter`` ran out."""

    state: SimState
    converged: bool
    iterations: int
    residual: float


MAX_TURN = np.deg2rad(120.0)


def _project(nodes, seg, fixed):
    out = nodes.copy()
    for i in range(len(out) - 1):
        d = out[i + 1] - out[i]
        L = np.linalg.norm(d)
        if L < 1e-12:
            continue
        corr = (L - seg) / L * d
        wa = 0.0 if fixed[i] else 1.0
        wb = 0.0 if fixed[i + 1] else 1.0
        if wa + wb == 0:
            continue
        out[i] += corr * wa / (wa + wb)
        out[i + 1] -= corr * wb / (wa + wb)
    ang = turning_angles(out)
    for k in np.flatnonzero(ang > MAX_TURN) + 1:
        if not fixed[k]:
            out[k] += 0.25 * (0.5 * (out[k - 1] + out[k + 1]) - out[k])
    return out


def _residual(nodes, seg):
    lens = segment_lengths(nodes)
    r = float(np.abs(lens - seg).max()) if len(lens) else 0.0
    ang = turning_angles(nodes)
    if len(ang) and ang.max() > MAX_TURN + 1e-6:
        r = max(r, float((ang.max() - MAX_TURN) * seg))
    return r


def relax_ex(state: SimState, fixed=None, max_iter: int = 200, tol: float = 0.1) -> RelaxResult:
    seg = state.centerline.seg_len
    nodes = state.nodes.copy()
    fixed = np.zeros(len(nodes), bool) if fixed is None else np.asarray(fixed, bool)
    res = _residual(nodes, seg)
    if res < tol:
        return RelaxResult(state, True, 0, res)
    code = gauss_code(state).word()
    best = (res, nodes)
    it = 0
    for it in range(1, max_iter + 1):
        cand = _project(nodes, seg, fixed)
        trial = state.moved_to(cand)
        if gauss_code(trial).word() != code or len(trial.crossings) != len(state.crossings):
            # topology would change: take the largest safe fraction of the step
            lo, hi = 0.0, 1.0
            for _ in range(8):
                mid = 0.5 * (lo + hi)
                t2 = state.moved_to(nodes + mid * (cand - nodes))
                if gauss_code(t2).word() == code:
                    lo = mid
                else:
                    hi = mid
            if lo == 0.0:
                break
            cand = nodes + lo * (cand - nodes)
        nodes = cand
        res = _residual(nodes, seg)
        if res < best[0]:
            best = (res, nodes)
        if res < tol:
            break
    out = state.moved_to(best[1])
    if gauss_code(out).word() != code:
        out = state
    return RelaxResult(out, best[0] < tol, it, best[0])


def relax(state: SimState) -> SimState:
    """Restore segment lengths and the bend limit without changing the Gauss code."""
    r = relax_ex(state)
    if not r.converged:
        log.debug("relax stopped with residual %.3f mm", r.residual)
    return r.state


# ---------------------------------------------------------------------------
# laying the cable down


FORWARD = "forward"
WIDE_U = "wide_U"


def _reachable_clip(state: SimState) -> SimState:
    ws = workspace_of(state)
    r = ws.reachable
    nodes = state.nodes
    lo = np.array([r.x0, r.y0]) - nodes.min(axis=0)
    hi = np.array([r.x1, r.y1]) - nodes.max(axis=0)
    shift = np.where(lo > 0, lo, np.where(hi < 0, hi, 0.0))
    if np.allclose(shift, 0):
        return state
    # a rigid shift keeps the diagram identical
    return replace(state, centerline=replace(state.centerline, nodes=nodes + shift),
                   crossings=tuple(replace(c, point=c.point + shift) for c in state.crossings))


def lane_plan_forward(blocks, ws: Workspace = WORKSPACE, dir_x: int = 1) -> layout.LanePlan:
    gap = max([b.extent for b in blocks] + [60.0]) + 45.0
    x0 = ws.reachable.x0 + 60.0 if dir_x > 0 else ws.reachable.x1 - 60.0
    return layout.LanePlan(start=(x0, ws.observable.y1 - 25.0), dir_x=dir_x, prog=-1, gap=gap,
                           x_min=ws.reachable.x0 + 60.0, x_max=ws.reachable.x1 - 60.0)


def lay_blocks(state: SimState, blocks, pattern: str, side: int = 0, rng=None,
               strict: bool = False, u_plans=None) -> SimState:
    """Re-lay ``state`` around rigid ``blocks``.

    Falls back to ``state`` if no layout fits, or raises LayoutError when ``strict``.
    """
    n = state.centerline.n_nodes
    ws = workspace_of(state)
    attempts = []
    if pattern == WIDE_U:
        plans = u_plans if u_plans is not None else [layout.UPlan(gap=g) for g in (160.0, 200.0, 240.0)]
        attempts += [("u", p) for p in plans]
    for extra in (0.0, 30.0, 60.0):
        for dir_x in (1, -1):
            p = lane_plan_forward(blocks, ws, dir_x)
            attempts.append(("lanes", replace(p, gap=p.gap + extra)))
    for kind, plan in attempts:
        try:
            if kind == "u":
                new = layout.lay_u(n, blocks, plan, template=state)
            else:
                new = layout.lay_lanes(n, blocks, plan, rng, template=state, from_end=side == 1)
            return new
        except (layout.LayoutError, ValueError) as exc:
            log.debug("layout attempt %s failed: %s", kind, exc)
    if strict:
        raise layout.LayoutError("no layout fits the blocks")
    log.info("no layout fits; cable left in place")
    return state


def settle(state: SimState) -> SimState:
    """Clip a freshly laid cable into reach and relax it."""
    return relax(_reachable_clip(state))


def lay_out(state: SimState, handles=(), pattern: str = FORWARD) -> SimState:
    """Place the cable per ``pattern`` and settle it; handles are released.

    ``forward`` lays the grasped end along the far edge of the observable area;
    ``wide_U`` puts the endpoints at opposite x extremes with the middle sagging.
    """
    if pattern not in (FORWARD, WIDE_U):
        raise ValueError(f"unknown pattern {pattern!r}")
    n = state.centerline.n_nodes
    side = 0
    if handles:
        # lay out from the end whose handle sits closest to it
        d0 = min(h.node_index for h in handles)
        d1 = min(n - 1 - h.node_index for h in handles)
        side = 0 if d0 <= d1 else 1
    blocks = layout.extract_blocks(state)
    new = lay_blocks(state, blocks, pattern, side)
    return settle(new)


# ---------------------------------------------------------------------------
# slack falling off the table


@dataclass(frozen=True)
class SpillResult:
    state: SimState
    spilled: bool
    off_image: np.ndarray  # boolean per node


def off_workspace(state: SimState) -> np.ndarray:
    return ~workspace_of(state).image.contains(state.nodes)


def rigid_shift(state: SimState, shift) -> SimState:
    shift = np.asarray(shift, float)
    return replace(state, centerline=replace(state.centerline, nodes=state.nodes + shift),
                   crossings=tuple(replace(c, point=c.point + shift) for c in state.crossings))


def slack_spill(state: SimState, rng: np.random.Generator, p_spill: float = 0.05,
                edge_band: float = 50.0, edge_fraction: float = 0.25,
                lost_fraction: float = 0.6) -> SpillResult:
    """Let edge-hanging slack drag the cable off the table.

    When more than ``edge_fraction`` of the nodes sit within ``edge_band`` of
    the image boundary (or beyond it), with probability ``p_spill`` the whole
    cable slides toward that edge. More than ``lost_fraction`` of the nodes off
    the reachable area latches ``lost``.
    """
    ws = workspace_of(state)
    nodes = state.nodes
    near = (ws.image.boundary_distance(nodes) <= edge_band) | ~ws.image.contains(nodes)
    spilled = False
    draw = rng.random()
    if near.mean() > edge_fraction and draw < p_spill:
        c = ws.image.center
        hanging = nodes[near]
        direction = hanging.mean(axis=0) - c
        # slide along the dominant axis toward the hanging mass
        axis = np.argmax(np.abs(direction) / np.array([ws.image.x1 - ws.image.x0, ws.image.y1 - ws.image.y0]))
        shift = np.zeros(2)
        shift[axis] = np.sign(direction[axis]) * rng.uniform(250.0, 700.0)
        state = rigid_shift(state, shift)
        spilled = True
    off_reach = ~ws.reachable.contains(state.nodes)
    if off_reach.mean() > lost_fraction and not state.lost:
        state = replace(state, lost=True)
    return SpillResult(state, spilled, off_workspace(state))
