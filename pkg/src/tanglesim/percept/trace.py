"""Multi-hypothesis cable tracing over a binary mask.

A beam of splines grows from a start pixel. At each tip, candidate successors
are mask runs on arcs of a few radii ahead of the tip; candidates whose
angular deviation is within a margin of the best are all kept, which is how
ambiguity at crossings and touching strands turns into several splines. The
spread of the surviving splines' endpoints is the uncertainty signal.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

KNOT_THRESHOLD_PX = 24
ENDPOINT_THRESHOLD_PX = 12


class TraceStatus(str, enum.Enum):
    CERTAIN = "TRACE_CERTAIN"
    UNCERTAIN = "TRACE_UNCERTAIN"


class TraceDeadEnd(RuntimeError):
    pass


@dataclass(frozen=True)
class KnotBBoxes:
    boxes: tuple  # (x0, y0, x1, y1) per detected knot


@dataclass(frozen=True)
class FixedDistance:
    d_px: float


@dataclass(frozen=True)
class TraceConfig:
    step_px: float = 10.0
    radii: tuple = (10.0, 14.0, 18.0)
    margin_deg: float = 30.0
    max_dev_deg: float = 75.0
    beam_cap: int = 64
    max_len_px: float = 4000.0
    knot_threshold_px: float = KNOT_THRESHOLD_PX
    endpoint_threshold_px: float = ENDPOINT_THRESHOLD_PX


@dataclass
class Spline:
    points: list
    score: float = 0.0  # cumulative absolute deviation, radians
    length: float = 0.0
    done: bool = False
    box: int = -1  # index of the knot bbox it stopped on

    @property
    def tip(self):
        return self.points[-1]


@dataclass(frozen=True)
class TraceResult:
    splines: tuple  # tuple of (k, 2) arrays, finished splines first
    terminal_bbox: tuple  # x0, y0, x1, y1
    status: TraceStatus
    trace_len_px: float
    best: int = 0  # index of the representative spline
    dead_end: bool = False
    stop_box: int = -1  # knot bbox index reached by the representative spline
    scores: tuple = field(default=())

    @property
    def representative(self) -> np.ndarray:
        return self.splines[self.best]

    @property
    def tail(self) -> np.ndarray:
        """Last few points of the representative spline."""
        return self.representative[-4:]


def bbox_of(points) -> tuple:
    pts = np.asarray(points, float).reshape(-1, 2)
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return (float(x0), float(y0), float(x1), float(y1))


def status_for(bbox, mode: str, config: TraceConfig = TraceConfig()) -> TraceStatus:
    """UNCERTAIN iff the larger bbox side exceeds the mode's threshold."""
    x0, y0, x1, y1 = bbox
    limit = config.knot_threshold_px if mode == "knot" else config.endpoint_threshold_px
    return TraceStatus.UNCERTAIN if max(x1 - x0, y1 - y0) > limit else TraceStatus.CERTAIN


def _runs(hits: np.ndarray):
    """Contiguous True runs as (start, end) index pairs."""
    if not hits.any():
        return []
    d = np.diff(np.concatenate([[0], hits.astype(int), [0]]))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1) - 1
    return list(zip(starts, ends))


def _on_mask(mask, pts):
    h, w = mask.shape
    x = np.floor(pts[..., 0]).astype(int)
    y = np.floor(pts[..., 1]).astype(int)
    ok = (x >= 0) & (x < w) & (y >= 0) & (y < h)
    out = np.zeros(x.shape, bool)
    out[ok] = mask[y[ok], x[ok]]
    return out


_STEP = np.deg2rad(2.0)
_ANG = np.deg2rad(np.arange(-180.0, 180.0, 2.0))


def _candidates(mask, tip, heading, cfg: TraceConfig):
    """(point, deviation) successors of a tip; ``heading`` None means any direction."""
    out = []
    if heading is None:
        angles = _ANG
    else:
        lim = np.deg2rad(cfg.max_dev_deg)
        angles = heading + _ANG[np.abs(_ANG) <= lim]
    for r in cfg.radii:
        pts = tip + r * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        hits = _on_mask(mask, pts)
        if heading is None and hits.all():
            continue
        runs = _runs(hits)
        if heading is None and len(runs) > 1 and hits[0] and hits[-1]:
            # join the run that wraps around +-180 degrees
            (_, e0), (s1, _) = runs[0], runs[-1]
            runs = runs[1:-1] + [(s1, e0 + len(hits))]
        for s, e in runs:
            # angles are evenly spaced, so a wrapped run index still maps linearly
            a = float(angles[0] + 0.5 * (s + e) * _STEP)
            dev = 0.0 if heading is None else float(np.angle(np.exp(1j * (a - heading))))
            p = tip + r * np.array([np.cos(a), np.sin(a)])
            if any(abs(np.angle(np.exp(1j * (a - b)))) < np.deg2rad(15.0) for _, _, b in out):
                continue
            out.append((p, dev, a))
        if heading is not None and out:
            # the nearest radius that finds cable settles this direction set,
            # farther radii only bridge gaps straight ahead
            if min(abs(d) for _, d, _ in out) <= np.deg2rad(cfg.margin_deg):
                break
    return [(p, d) for p, d, _ in out]


def _candidates_batch(mask, tips: np.ndarray, headings: np.ndarray, cfg: TraceConfig):
    """``_candidates`` for many tips at once, all with a known heading."""
    lim = np.deg2rad(cfg.max_dev_deg)
    offs = _ANG[np.abs(_ANG) <= lim]
    radii = np.asarray(cfg.radii, float)
    ang = headings[:, None] + offs[None, :]  # (L, A)
    cs, sn = np.cos(ang), np.sin(ang)
    pts = tips[:, None, None, :] + radii[None, :, None, None] * np.stack([cs, sn], -1)[:, None, :, :]
    hits = _on_mask(mask, pts)  # (L, R, A)
    pad = np.zeros(hits.shape[:2] + (1,), bool)
    d = np.diff(np.concatenate([pad, hits, pad], axis=2).astype(np.int8), axis=2)
    ls, rs, ss = np.nonzero(d == 1)
    _, _, es = np.nonzero(d == -1)
    margin = np.deg2rad(cfg.margin_deg)
    near = np.deg2rad(15.0)
    dev_all = offs[0] + 0.5 * (ss + es - 1) * _STEP
    out = [[] for _ in range(len(tips))]
    settled = np.zeros(len(tips), bool)
    # nonzero walks row-major, so runs come grouped by tip and then radius
    cur_r = -np.ones(len(tips), int)
    for l, r, dev in zip(ls, rs, dev_all):
        if settled[l]:
            continue
        if r != cur_r[l]:
            if out[l] and min(abs(x[1]) for x in out[l]) <= margin:
                settled[l] = True
                continue
            cur_r[l] = r
        if any(abs(dev - x[1]) < near for x in out[l]):
            continue
        a = headings[l] + dev
        out[l].append((tips[l] + radii[r] * np.array([np.cos(a), np.sin(a)]), float(dev)))
    return out


def _in_box(p, box):
    x0, y0, x1, y1 = box
    return x0 <= p[0] <= x1 and y0 <= p[1] <= y1


def trace(mask: np.ndarray, start_px, stop, config: TraceConfig = TraceConfig()) -> TraceResult:
    """Beam-search trace from ``start_px`` until ``stop`` (knot bboxes or a fixed distance)."""
    cfg = config
    mode = "knot" if isinstance(stop, KnotBBoxes) else "endpoint"
    start = np.asarray(start_px, float) + 0.5
    boxes = list(stop.boxes) if mode == "knot" else []
    limit = cfg.max_len_px if mode == "knot" else float(stop.d_px)
    margin = np.deg2rad(cfg.margin_deg)

    live = []
    for p, _ in _candidates(mask, start, None, cfg):
        live.append(Spline([start, p], 0.0, float(np.linalg.norm(p - start))))
    finished: list[Spline] = []
    dead: list[Spline] = []
    guard = 0
    while live and guard < 2000:
        guard += 1
        nxt = []
        active = []
        for sp in live:
            if mode == "knot":
                hit = next((i for i, b in enumerate(boxes) if _in_box(sp.tip, b)), -1)
                if hit >= 0:
                    sp.done, sp.box = True, hit
                    finished.append(sp)
                    continue
            if sp.length >= limit:
                if mode == "endpoint":
                    sp.done = True
                    finished.append(sp)
                else:
                    dead.append(sp)
                continue
            active.append(sp)
        if active:
            tips = np.array([sp.points[-1] for sp in active])
            prevs = np.array([sp.points[-2] for sp in active])
            headings = np.arctan2(tips[:, 1] - prevs[:, 1], tips[:, 0] - prevs[:, 0])
            for sp, tip, cands in zip(active, tips, _candidates_batch(mask, tips, headings, cfg)):
                if not cands:
                    dead.append(sp)
                    continue
                best = min(abs(d) for _, d in cands)
                for p, d in cands:
                    if abs(d) <= best + margin:
                        nxt.append(Spline(sp.points + [p], sp.score + abs(d),
                                          sp.length + float(np.hypot(*(p - tip)))))
        # dedupe splines that have merged onto the same path
        nxt.sort(key=lambda s: s.score)
        kept = []
        seen = set()
        for s in nxt:
            # last three points on a 2 px grid: merged paths collide
            key = tuple(np.floor(np.asarray(s.points[-3:]) / 2.0).astype(int).ravel())
            if key in seen:
                continue
            seen.add(key)
            kept.append(s)
        live = kept[:cfg.beam_cap]

    dead_end = not finished
    pool = finished if finished else dead
    if not pool:
        pts = np.array([start])
        return TraceResult((pts,), bbox_of(pts), TraceStatus.UNCERTAIN, 0.0, 0, True, -1, (0.0,))
    # finished splines first; representative = best cumulative score
    pool = sorted(pool, key=lambda s: s.score)
    ends = np.array([s.tip for s in pool])
    box = bbox_of(ends)
    status = TraceStatus.UNCERTAIN if dead_end else status_for(box, mode, cfg)
    splines = tuple(np.array(s.points) for s in pool)
    return TraceResult(splines, box, status, float(pool[0].length), 0, dead_end, pool[0].box,
                       tuple(s.score for s in pool))
