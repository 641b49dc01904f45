"""Crossing-free cable layouts with knots carried as rigid blocks.

A layout is a dense guide path (lanes with U-turns, or a wide "U") that the
cable is walked along at exact segment length. Knot and kink blocks keep
their internal geometry and crossing flags; everything between them is slack
that follows the guide. Every layout is validated: the only crossings allowed
are the ones inside blocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .cable import SEG_LEN_MM, KnotKind, SimState, classify_knots, gauss_code, kink_ranges

log = logging.getLogger(__name__)

X_MIN, X_MAX = 60.0, 1140.0
OBS_Y = (75.0, 825.0)


class LayoutError(RuntimeError):
    pass


@dataclass
class Block:
    start: int
    local: np.ndarray
    label: str  # knot kind value or "kink"
    flags: dict = field(default_factory=dict)  # (seg_a, seg_b) relative to start -> "a"/"b"

    @property
    def n_nodes(self) -> int:
        return len(self.local)

    @property
    def end(self) -> int:
        return self.start + len(self.local) - 1

    @property
    def chord(self) -> float:
        return float(np.linalg.norm(self.local[-1] - self.local[0]))

    @property
    def extent(self) -> float:
        return float(np.abs(self.local[:, 1]).max())

    @property
    def ahead(self) -> float:
        return float(self.local[:, 0].max())

    @property
    def behind(self) -> float:
        return float(-min(self.local[:, 0].min(), 0.0))

    def reversed(self, n_nodes: int) -> "Block":
        local = _to_local(self.local[::-1].copy())
        m = self.n_nodes
        flags = {}
        for (a, b), o in self.flags.items():
            # segment k of the block becomes m-2-k once reversed
            na, nb = m - 2 - b, m - 2 - a
            flags[(na, nb)] = "b" if o == "a" else "a"
        return Block(n_nodes - 1 - self.end, local, self.label, flags)


def _to_local(nodes: np.ndarray) -> np.ndarray:
    nodes = nodes - nodes[0]
    chord = nodes[-1]
    ang = np.arctan2(chord[1], chord[0])
    c, s = np.cos(-ang), np.sin(-ang)
    nodes = nodes @ np.array([[c, -s], [s, c]]).T
    if nodes[:, 1].max() < -nodes[:, 1].min():
        nodes[:, 1] *= -1
    return nodes


def alternating_flags(local: np.ndarray, first_over: bool = True) -> dict:
    """Over/under flags that alternate along the strand."""
    st = SimState.from_nodes(local)
    code = gauss_code(st)
    flags = {}
    for i, e in enumerate(code.entries):
        c = st.crossings[e.crossing]
        key = (c.seg_a, c.seg_b)
        if key in flags:
            continue
        over_here = (i % 2 == 0) == first_over
        is_a = abs(e.u - c.u_a) < 1e-9
        flags[key] = ("a" if is_a else "b") if over_here else ("b" if is_a else "a")
    return flags


def template_block(template, start: int, first_over: bool = True) -> Block:
    label = template.kind.value if template.kind is not None else "kink"
    return Block(start, template.local.copy(), label, alternating_flags(template.local, first_over))


def extract_blocks(state: SimState) -> list[Block]:
    """Rigid blocks for every knot span and lone kink of ``state``."""
    nodes = state.nodes
    n = len(nodes)
    ranges = []
    for span in classify_knots(gauss_code(state), state):
        pts = np.array([state.crossings[c].point for c in span.crossings])
        ranges.append((span.node_range, pts, span.kind.value))
    for a, b in kink_ranges(state):
        inside = any(r[0][0] <= a and b <= r[0][1] for r in ranges)
        if not inside:
            c = next(c for c in state.crossings if c.seg_a + 1 <= b and c.seg_a >= a)
            ranges.append(((a, b), np.array([c.point]), "kink"))
    ranges.sort(key=lambda r: r[0][0])
    blocks = []
    for (a, b), pts, label in ranges:
        centre = pts.mean(axis=0)
        r_body = np.linalg.norm(nodes[a:b + 1] - centre, axis=1).max() + 3.0
        while a > 1 and np.linalg.norm(nodes[a - 1] - centre) <= r_body:
            a -= 1
        while b < n - 2 and np.linalg.norm(nodes[b + 1] - centre) <= r_body:
            b += 1
        a, b = max(a - 1, 1), min(b + 1, n - 2)
        if blocks and a <= blocks[-1].end + 1:
            prev = blocks.pop()
            a = prev.start
            label = prev.label if prev.label == label else KnotKind.UNKNOWN.value
        flags = {(c.seg_a - a, c.seg_b - a): c.over for c in state.crossings
                 if a <= c.seg_a and c.seg_b <= b - 1}
        blocks.append(Block(a, _to_local(nodes[a:b + 1].copy()), label, flags))
    return blocks


# ---------------------------------------------------------------------------
# guide paths


def _arc(center, radius, a0, a1, step=2.0):
    n = max(int(abs(a1 - a0) * radius / step), 2)
    t = np.linspace(a0, a1, n)
    return np.stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)], axis=1)


def _cum(path):
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(path, axis=0), axis=1))])


def _line(a, b, step=2.0):
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(int(np.linalg.norm(b - a) / step), 1) + 1
    t = np.linspace(0, 1, n)[:, None]
    return a + t * (b - a)


@dataclass
class LanePlan:
    """Boustrophedon lanes starting at ``start`` heading ``dir_x``, stepping ``prog`` in y."""

    start: tuple[float, float]
    dir_x: int = 1
    prog: int = 1
    gap: float = 220.0
    x_min: float = X_MIN
    x_max: float = X_MAX
    wiggle: float = 0.0
    wiggle_len: float = 300.0
    phase: float = 0.0
    tail_off: bool = False
    squeeze: tuple = ()  # lane indices (>= 1) that dip to touch the previous lane


def _schedule(blocks, n_nodes, seg):
    """Guide arclength at which each block's first node sits."""
    out = []
    removed = 0
    chords = 0.0
    for b in blocks:
        s = (b.start - removed) * seg + chords
        out.append(s)
        removed += b.n_nodes - 1
        chords += b.chord
    total = (n_nodes - 1 - removed) * seg + chords
    return out, total


def lanes_guide(plan: LanePlan, blocks, n_nodes, seg=SEG_LEN_MM, rng=None, clear=25.0):
    sched, total = _schedule(blocks, n_nodes, seg)
    r = plan.gap / 2.0
    pieces = []
    s0 = 0.0
    x, y = plan.start
    sx = plan.dir_x
    lane = 0
    prev_lane_pts = None
    bi = 0
    while s0 < total + 50.0:
        x_end = plan.x_max - r if sx > 0 else plan.x_min + r
        xs = np.arange(x, x_end, 2.0 * sx) if (x_end - x) * sx > 0 else np.array([x])
        y_lane = y + np.zeros_like(xs)
        if plan.wiggle > 0 and len(xs) > 1:
            ramp = np.clip(np.abs(xs - xs[0]) / 80.0, 0, 1)
            y_lane = y_lane + plan.wiggle * ramp * np.sin(2 * np.pi * xs / plan.wiggle_len + plan.phase + lane)
        if lane in plan.squeeze and prev_lane_pts is not None and len(xs) > 200:
            y_lane = _squeeze(xs, y_lane, prev_lane_pts, plan.prog, rng)
        pts = np.stack([xs, y_lane], axis=1)
        cum = _cum(pts) + s0
        avail = cum[-1]
        cut = avail
        # end the lane early if a block would straddle the turn
        while bi < len(sched) and sched[bi] < avail + np.pi * r:
            sb, b = sched[bi], blocks[bi]
            if sb + b.ahead + clear <= avail:
                bi += 1
                continue
            cut = sb - np.pi * r - clear
            break
        if plan.tail_off and bi == len(sched) and total - avail < 400.0 and total > avail:
            # hang the remainder straight off the edge
            far = pts[-1][0] + sx * (total - avail + 400.0)
            ext = _line(pts[-1], (far, pts[-1][1]))
            pieces.append(np.vstack([pts, ext[1:]]))
            break
        if cut < s0 + 2.0:
            raise LayoutError("block too close to a turn")
        k = int(np.searchsorted(cum, cut, side="right"))
        pts = pts[:max(k, 1)]
        pieces.append(pts)
        s0 += _cum(pts)[-1]
        if s0 >= total + 50.0:
            break
        end = pts[-1]
        cy = end[1] + plan.prog * r
        a0 = -plan.prog * np.pi / 2
        a1 = a0 + plan.prog * np.pi * (1 if sx > 0 else -1)
        arc = _arc((end[0], cy), r, a0, a1)
        pieces.append(arc[1:])
        s0 += _cum(arc)[-1]
        prev_lane_pts = pts
        x, y = arc[-1]
        sx = -sx
        lane += 1
        if lane > 40:
            raise LayoutError("ran out of lanes")
        if bi < len(sched) and sched[bi] < s0:
            raise LayoutError("block landed in a turn")
    guide = np.vstack(pieces)
    keep = np.concatenate([[True], np.linalg.norm(np.diff(guide, axis=0), axis=1) > 1e-9])
    return guide[keep]


def _squeeze(xs, y_lane, prev_pts, prog, rng, touch=5.5, width=120.0, ramp=170.0):
    px, py = prev_pts[:, 0], prev_pts[:, 1]
    order = np.argsort(px)
    px, py = px[order], py[order]
    lo, hi = max(xs.min(), px.min()) + ramp + 80, min(xs.max(), px.max()) - ramp - width - 80
    if hi <= lo:
        return y_lane
    xc = lo + (hi - lo) * (0.5 if rng is None else rng.uniform(0.1, 0.9))
    target = np.interp(xs, px, py) + prog * touch
    d = np.abs(xs - xc)
    w = np.clip((width / 2 + ramp - d) / ramp, 0, 1)
    w = w * w * (3 - 2 * w)
    return (1 - w) * y_lane + w * target


@dataclass
class UPlan:
    """Endpoints at opposite x extremes near the top, middle sagging forward."""

    x_left: float = 110.0
    x_right: float = 1090.0
    y_top: float = 110.0
    y_bottom: float = 790.0
    corner: float = 60.0
    gap: float = 160.0


def u_guide(plan: UPlan, blocks, n_nodes, seg=SEG_LEN_MM):
    _, total = _schedule(blocks, n_nodes, seg)
    rc = plan.corner
    inner = plan.x_right - plan.x_left - 2 * rc

    def build(arm, rows, width):
        y_b = plan.y_bottom
        left = _line((plan.x_left, y_b - rc - arm), (plan.x_left, y_b - rc))
        c1 = _arc((plan.x_left + rc, y_b - rc), rc, np.pi, np.pi / 2)
        path = [left, c1[1:]]
        x, y = plan.x_left + rc, y_b
        sx = 1
        for k in range(rows):
            last = k == rows - 1
            x_to = plan.x_left + rc + inner if last else (plan.x_left + rc + width if sx > 0 else plan.x_left + rc + plan.gap)
            path.append(_line((x, y), (x_to, y))[1:])
            x = x_to
            if not last:
                r = plan.gap / 2
                if sx > 0:
                    arc = _arc((x, y - r), r, np.pi / 2, -np.pi / 2)
                else:
                    arc = _arc((x, y - r), r, np.pi / 2, 3 * np.pi / 2)
                path.append(arc[1:])
                y -= plan.gap
                sx = -sx
        c2 = _arc((plan.x_right - rc, y - rc), rc, np.pi / 2, 0.0)
        path.append(c2[1:])
        right_top = plan.y_top - 600.0
        path.append(_line((plan.x_right, y - rc), (plan.x_right, right_top))[1:])
        g = np.vstack(path)
        return g

    def right_arm_len(arm, rows, width):
        g = build(arm, rows, width)
        cum = _cum(g)
        # arclength left for the right arm once the walk reaches it
        y_rows_top = plan.y_bottom - (rows - 1) * plan.gap
        s_corner = cum[np.argmin(np.abs(g[:, 0] - plan.x_right) + np.abs(g[:, 1] - (y_rows_top - rc)))]
        return total - s_corner, y_rows_top - rc - plan.y_top

    # symmetric-ish arms with a single belly row when the cable is short enough
    arm_max = plan.y_bottom - rc - plan.y_top
    base = inner + 2 * (np.pi / 2 * rc)
    arm = (total - base) / 2
    if arm <= arm_max:
        arm = max(arm, 20.0)
        return build(arm, 1, inner)
    for rows in (3, 5, 7):
        lo, hi = plan.gap + 40.0, inner
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            need, room = right_arm_len(arm_max, rows, mid)
            if need > room:
                lo = mid
            else:
                hi = mid
        need, room = right_arm_len(arm_max, rows, hi)
        if need <= room + 1.0 and need > 0:
            return build(arm_max, rows, hi)
    raise LayoutError("cable too long for the U template")


# ---------------------------------------------------------------------------
# walking the cable along a guide


class _Guide:
    def __init__(self, pts):
        self.pts = pts
        self.cum = _cum(pts)

    def at(self, s):
        s = min(max(s, 0.0), self.cum[-1])
        k = int(np.searchsorted(self.cum, s, side="right") - 1)
        k = min(k, len(self.pts) - 2)
        seg = self.cum[k + 1] - self.cum[k]
        t = 0.0 if seg <= 0 else (s - self.cum[k]) / seg
        p = self.pts[k] + t * (self.pts[k + 1] - self.pts[k])
        d = self.pts[k + 1] - self.pts[k]
        n = np.linalg.norm(d)
        return p, (d / n if n > 0 else np.array([1.0, 0.0]))

    def next_point(self, centre, s_from, radius):
        """First guide point ahead of ``s_from`` at distance ``radius`` from ``centre``."""
        p, _ = self.at(s_from)
        if np.linalg.norm(p - centre) >= radius:
            # off the guide: head for a point one radius ahead
            q, _ = self.at(s_from + radius)
            d = q - centre
            n = np.linalg.norm(d)
            return centre + radius * d / max(n, 1e-9), s_from + radius
        k0 = int(np.searchsorted(self.cum, s_from, side="right"))
        pts, cum = self.pts, self.cum
        while k0 < len(pts):
            k1 = min(k0 + 64, len(pts))
            d = np.linalg.norm(pts[k0:k1] - centre, axis=1)
            hit = np.flatnonzero(d >= radius)
            if hit.size:
                j = k0 + int(hit[0])
                a = p if j == k0 else pts[j - 1]
                b = pts[j]
                s_a = s_from if j == k0 else cum[j - 1]
                seg = b - a
                f = a - centre
                A = seg @ seg
                B = 2 * (f @ seg)
                C = f @ f - radius * radius
                t = (-B + np.sqrt(max(B * B - 4 * A * C, 0.0))) / (2 * A) if A > 1e-12 else 1.0
                t = min(max(t, 0.0), 1.0)
                return a + t * seg, s_a + t * np.sqrt(A)
            k0 = k1
        _, t = self.at(cum[-1])
        return centre + radius * t, cum[-1] + radius


def walk(guide_pts, blocks, n_nodes, seg=SEG_LEN_MM, bulge=None):
    """Node positions along ``guide_pts`` with ``blocks`` placed rigidly.

    ``bulge(point)`` gives the preferred side (unit vector) for a block body.
    """
    g = _Guide(guide_pts)
    nodes = np.zeros((n_nodes, 2))
    nodes[0], _ = g.at(0.0)
    s = 0.0
    starts = {b.start: b for b in blocks}
    i = 1
    while i < n_nodes:
        p, s = g.next_point(nodes[i - 1], s, seg)
        b = starts.get(i)
        if b is None:
            nodes[i] = p
            i += 1
            continue
        _, t = g.at(s + 0.5 * b.chord)
        local = b.local.copy()
        normal = np.array([-t[1], t[0]])
        want = bulge(p) if bulge is not None else normal
        if normal @ want < 0:
            local[:, 1] *= -1
        R = np.array([[t[0], -t[1]], [t[1], t[0]]])
        placed = p + local @ R.T
        nodes[i:i + b.n_nodes] = placed
        s = s + b.chord
        i += b.n_nodes
    return nodes


def build_state(nodes, blocks, template: SimState | None = None) -> SimState:
    flags = {}
    for b in blocks:
        for (a, c), o in b.flags.items():
            flags[(a + b.start, c + b.start)] = o
    st = SimState.from_nodes(nodes)
    st = st.with_flags(flags)
    if template is not None:
        st = replace(st, sim_clock=template.sim_clock, occlusion=template.occlusion,
                     lost=template.lost, workspace=template.workspace)
    return st


def valid_layout(state: SimState, blocks) -> bool:
    expected = set()
    for b in blocks:
        for (a, c) in b.flags:
            expected.add((a + b.start, c + b.start))
    got = {(c.seg_a, c.seg_b) for c in state.crossings}
    return got == expected


def realize(n_nodes, blocks, make_guide, bulge=None, template=None, seg=SEG_LEN_MM):
    guide = make_guide()
    nodes = walk(guide, blocks, n_nodes, seg, bulge)
    st = build_state(nodes, blocks, template)
    if not valid_layout(st, blocks):
        raise LayoutError("layout produced unexpected crossings")
    return st


def reverse_blocks(blocks, n_nodes):
    return sorted((b.reversed(n_nodes) for b in blocks), key=lambda b: b.start)


def lay_lanes(n_nodes, blocks, plan: LanePlan, rng=None, template=None, from_end=False):
    if from_end:
        rb = reverse_blocks(blocks, n_nodes)
        st = lay_lanes(n_nodes, rb, plan, rng, None, False)
        return reverse_state(st, template)
    bulge = lambda p: np.array([0.0, float(plan.prog)])
    return realize(n_nodes, blocks, lambda: lanes_guide(plan, blocks, n_nodes, rng=rng), bulge, template)


def lay_u(n_nodes, blocks, plan: UPlan | None = None, template=None):
    plan = plan or UPlan()
    mid = 0.5 * (plan.x_left + plan.x_right)
    bulge = lambda p: np.array([1.0 if p[0] < mid - 200 else (-1.0 if p[0] > mid + 200 else 0.0),
                                0.0 if abs(p[0] - mid) > 200 else -1.0])
    return realize(n_nodes, blocks, lambda: u_guide(plan, blocks, n_nodes), bulge, template)


def reverse_state(state: SimState, template=None) -> SimState:
    n = len(state.nodes)
    nodes = state.nodes[::-1].copy()
    flags = {}
    for c in state.crossings:
        a, b = n - 2 - c.seg_b, n - 2 - c.seg_a
        flags[(a, b)] = "b" if c.over == "a" else "a"
    st = SimState.from_nodes(nodes).with_flags(flags)
    src = template or state
    return replace(st, sim_clock=src.sim_clock, occlusion=src.occlusion, lost=src.lost,
                   workspace=src.workspace)
