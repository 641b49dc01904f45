"""Overhead observations: a rasterised cable diagram with over/under occlusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cable import KnotSpan, SimState, kink_ranges, knots_of
from .quasistatics import workspace_of

IMAGE_SHAPE = (900, 1200)  # rows (y) x cols (x), 1 px = 1 mm
CABLE_PX = 3.0  # capsule radius
GAP_PX = 5.0  # under-strand erased within this distance of the over-strand centreline
KNOT_PAD_PX = 20
INTENSITY = 220
THRESHOLD = 128


@dataclass(frozen=True)
class KnotTruth:
    span: KnotSpan
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive pixel bounds
    visible: bool


@dataclass
class Truth:
    """Ground truth kept beside an observation for noise models and scoring only."""

    state: SimState
    seg_map: np.ndarray  # int16 segment label per pixel, -1 off-cable
    endpoints: dict  # node index -> (x, y) pixel of every visible endpoint
    knots: list  # KnotTruth per knot span
    kinks: list  # bbox per lone R1 loop
    node_px: np.ndarray  # (n, 2) integer pixel (x, y) of each node

    def node_of_pixel(self, px) -> int:
        """Nearest node to a pixel, preferring the strand drawn there."""
        x, y = int(round(px[0])), int(round(px[1]))
        nodes = self.state.nodes
        if 0 <= y < self.seg_map.shape[0] and 0 <= x < self.seg_map.shape[1]:
            s = int(self.seg_map[y, x])
            if s >= 0:
                p = np.array([x + 0.5, y + 0.5])
                return s if np.linalg.norm(nodes[s] - p) <= np.linalg.norm(nodes[s + 1] - p) else s + 1
        d = np.linalg.norm(nodes - np.array([x + 0.5, y + 0.5]), axis=1)
        return int(np.argmin(d))

    def pixels_of_node(self, i: int) -> np.ndarray:
        segs = [s for s in (i - 1, i) if 0 <= s < len(self.state.nodes) - 1]
        ys, xs = np.nonzero(np.isin(self.seg_map, segs))
        return np.stack([xs, ys], axis=1)


@dataclass
class Observation:
    image: np.ndarray
    mask: np.ndarray
    truth: Truth = field(repr=False)
    step_index: int = 0
    # loop-filter verdicts per bbox; the mask never changes after rendering
    loop_cache: dict = field(default_factory=dict, repr=False, compare=False)


def _capsule(seg_map, dist_map, a, b, label, radius, window=None):
    """Stamp a capsule; pixels take ``label`` (last writer wins)."""
    h, w = seg_map.shape
    lo = np.floor(np.minimum(a, b) - radius - 1).astype(int)
    hi = np.ceil(np.maximum(a, b) + radius + 1).astype(int)
    x0, y0 = max(lo[0], 0), max(lo[1], 0)
    x1, y1 = min(hi[0], w - 1), min(hi[1], h - 1)
    if x0 > x1 or y0 > y1:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    px = xs + 0.5
    py = ys + 0.5
    d = b - a
    dd = d @ d
    t = np.zeros_like(px) if dd < 1e-12 else np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / dd, 0, 1)
    dist = np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))
    hit = dist <= radius
    if window is not None:
        c, r = window
        hit &= np.hypot(px - c[0], py - c[1]) <= r
    seg_map[y0:y1 + 1, x0:x1 + 1][hit] = label
    if dist_map is not None:
        dist_map[y0:y1 + 1, x0:x1 + 1][hit] = dist[hit]


def _erase_near(seg_map, a, b, labels, radius, centre, win):
    h, w = seg_map.shape
    x0, y0 = max(int(centre[0] - win), 0), max(int(centre[1] - win), 0)
    x1, y1 = min(int(centre[0] + win), w - 1), min(int(centre[1] + win), h - 1)
    if x0 > x1 or y0 > y1:
        return
    ys, xs = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    px, py = xs + 0.5, ys + 0.5
    d = b - a
    dd = d @ d
    t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / max(dd, 1e-12), 0, 1)
    dist = np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))
    sub = seg_map[y0:y1 + 1, x0:x1 + 1]
    kill = (dist <= radius) & np.isin(sub, labels)
    sub[kill] = -1


_OFF = np.stack(np.meshgrid(np.arange(-3, 4), np.arange(-3, 4)), -1).reshape(-1, 2)


def _stamp_polyline(seg_map, nodes, radius=CABLE_PX, step=1.0):
    """Label every pixel within ``radius`` of the polyline; later segments win."""
    h, w = seg_map.shape
    d = np.diff(nodes, axis=0)
    lens = np.linalg.norm(d, axis=1)
    k = np.maximum(np.ceil(lens / step).astype(int), 1)
    seg = np.repeat(np.arange(len(d)), k)
    start = np.concatenate([[0], np.cumsum(k)[:-1]])
    t = (np.arange(k.sum()) - np.repeat(start, k)) / np.repeat(k, k)
    pts = nodes[seg] + t[:, None] * d[seg]
    pts = np.vstack([pts, nodes[-1:]])
    seg = np.concatenate([seg, [len(d) - 1]])
    inside = (pts[:, 0] > -radius - 1) & (pts[:, 0] < w + radius + 1) & \
             (pts[:, 1] > -radius - 1) & (pts[:, 1] < h + radius + 1)
    pts, seg = pts[inside], seg[inside]
    if not len(pts):
        return
    base = np.floor(pts).astype(int)
    cand = base[:, None, :] + _OFF[None, :, :]
    dist = np.hypot(cand[..., 0] + 0.5 - pts[:, None, 0], cand[..., 1] + 0.5 - pts[:, None, 1])
    ok = (dist <= radius) & (cand[..., 0] >= 0) & (cand[..., 0] < w) & (cand[..., 1] >= 0) & (cand[..., 1] < h)
    lab = np.broadcast_to(seg[:, None], ok.shape)[ok]
    xs, ys = cand[..., 0][ok], cand[..., 1][ok]
    # samples run in segment order, so the highest segment index lands last
    seg_map.reshape(-1)[ys * w + xs] = lab


def rasterize(nodes: np.ndarray, crossings, shape=IMAGE_SHAPE) -> np.ndarray:
    """Segment label map of the cable with every under-strand broken at its crossings."""
    seg_map = np.full(shape, -1, np.int16)
    n = len(nodes)
    _stamp_polyline(seg_map, np.asarray(nodes, float))
    for c in crossings:
        o, u = c.over_seg, c.under_seg
        win = GAP_PX + 2 * CABLE_PX + 2
        over_neigh = [s for s in (o - 1, o, o + 1) if 0 <= s < n - 1]
        under_neigh = [s for s in range(u - 2, u + 3) if 0 <= s < n - 1]
        for s in over_neigh:
            _erase_near(seg_map, nodes[s], nodes[s + 1], under_neigh, GAP_PX, c.point, win)
        for s in over_neigh:
            _capsule(seg_map, None, nodes[s], nodes[s + 1], s, CABLE_PX, window=(c.point, win))
    return seg_map


def _bbox(points, pad, shape=IMAGE_SHAPE):
    pts = np.asarray(points, float)
    x0, y0 = np.floor(pts.min(axis=0) - pad).astype(int)
    x1, y1 = np.ceil(pts.max(axis=0) + pad).astype(int)
    h, w = shape
    return (int(max(x0, 0)), int(max(y0, 0)), int(min(x1, w - 1)), int(min(y1, h - 1)))


def render(state: SimState, step_index: int = 0) -> Observation:
    nodes = state.nodes
    seg_map = rasterize(nodes, state.crossings)
    mask = seg_map >= 0
    image = np.where(mask, np.uint8(INTENSITY), np.uint8(0)).astype(np.uint8)
    ws = workspace_of(state)
    n = len(nodes)
    endpoints = {}
    for i, s in ((0, 0), (n - 1, n - 2)):
        p = nodes[i]
        if not ws.image.contains(p):
            continue
        x = min(int(np.floor(p[0])), IMAGE_SHAPE[1] - 1)
        y = min(int(np.floor(p[1])), IMAGE_SHAPE[0] - 1)
        # visible only where the endpoint's own strand is what the camera sees
        own = {s, s - 1 if i else s + 1}
        if int(seg_map[y, x]) in own:
            endpoints[i] = (x, y)
    knots = []
    for span in knots_of(state):
        pts = np.array([state.crossings[c].point for c in span.crossings])
        vis = bool(ws.image.contains(pts).any())
        knots.append(KnotTruth(span, _bbox(pts, KNOT_PAD_PX), vis))
    kinks = []
    for a, b in kink_ranges(state):
        pts = nodes[a:b + 1]
        if ws.image.contains(pts).any():
            kinks.append(_bbox(pts, 10))
    node_px = np.floor(nodes).astype(int)
    truth = Truth(state, seg_map, endpoints, knots, kinks, node_px)
    return Observation(image, image > THRESHOLD, truth, step_index)


def visible_truth(obs: Observation):
    """Visible endpoint pixels and the bboxes of knots that appear in the image."""
    eps = [obs.truth.endpoints[k] for k in sorted(obs.truth.endpoints)]
    boxes = [k.bbox for k in obs.truth.knots if k.visible]
    return eps, boxes


def save_png(obs: Observation, path) -> None:
    import matplotlib.pyplot as plt

    plt.imsave(str(path), obs.image, cmap="gray", vmin=0, vmax=255)
