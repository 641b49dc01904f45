"""Polyline templates for overhand knots, figure-8 knots and R1 kinks.

Knots are built as open cuts of closed-braid shadows: the trefoil from the
2-strand word (1, 1, 1) and the figure-eight from the 3-strand word
(1, 2, 1, 2). With alternating over/under flags both shadows are reduced,
so the resulting diagrams are the genuine knots.

Every template is expressed in a local frame: node 0 at the origin, the last
node on the +x axis, and the knot body bulging toward +y.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .cable import KnotKind, SEG_LEN_MM
from .geometry import chord_resample, segment_intersections

BRAIDS = {
    KnotKind.OVERHAND: (2, (0, 0, 0)),
    KnotKind.FIGURE8: (3, (0, 1, 0, 1)),
}
N_CROSSINGS = {KnotKind.OVERHAND: 3, KnotKind.FIGURE8: 4}


@dataclass(frozen=True)
class Template:
    kind: KnotKind | None  # None for an R1 kink
    local: np.ndarray  # (m, 2) node coordinates in the local frame
    n_crossings: int

    @property
    def n_nodes(self) -> int:
        return len(self.local)

    @property
    def chord(self) -> float:
        return float(np.linalg.norm(self.local[-1] - self.local[0]))

    @property
    def extent(self) -> float:
        """Bulge height above the local axis, mm."""
        return float(self.local[:, 1].max())


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3 - 2 * x)


def _closed_braid(n_strands, word, radius, spacing, samples_per_rev=720, window=0.42):
    """Dense closed curve for the closure of a braid word drawn around a circle.

    Returns ``(points, radial_level)``; the level says which strand position
    (0 innermost) the curve occupies at each sample.
    """
    L = len(word)
    slot = 2 * np.pi / L
    centers = slot * (np.arange(L) + 0.5)
    pos = 0
    pts = []
    levels = []
    for rev in range(n_strands):
        phi = np.linspace(0, 2 * np.pi, samples_per_rev, endpoint=False)
        r = np.empty_like(phi)
        lev = np.empty_like(phi)
        cur = pos
        # level before/after each crossing for this revolution
        schedule = []
        for k, g in enumerate(word):
            nxt = cur
            if cur == g:
                nxt = g + 1
            elif cur == g + 1:
                nxt = g
            schedule.append((cur, nxt))
            cur = nxt
        for j, ph in enumerate(phi):
            k = min(int(ph // slot), L - 1)
            a, b = schedule[k]
            # transition centred on the crossing angle
            x = (ph - (centers[k] - window * slot)) / (2 * window * slot)
            level = a + (b - a) * _smoothstep(x)
            r[j] = radius + (level - (n_strands - 1) / 2) * spacing
            lev[j] = level
        pos = cur
        pts.append(np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1))
        levels.append(lev)
    return np.concatenate(pts), np.concatenate(levels)


def _open_knot_guide(kind: KnotKind, radius: float, spacing: float, gap: float, lead: float):
    n_strands, word = BRAIDS[kind]
    pts, lev = _closed_braid(n_strands, word, radius, spacing)
    n = len(pts)
    per_rev = n // n_strands
    L = len(word)
    # cut on the outermost strand, midway between two crossings
    outer = n_strands - 1
    slot_samples = per_rev // L
    candidates = [i for i in range(n) if (i % per_rev) % slot_samples == 0 and abs(lev[i] - outer) < 1e-9]
    cut = candidates[0]
    ring = np.roll(pts, -cut, axis=0)
    phi_cut = np.arctan2(pts[cut, 1], pts[cut, 0])
    r_out = radius + (outer - (n_strands - 1) / 2) * spacing
    # trim a gap either side of the cut
    trim = int(np.ceil(gap / (2 * np.pi * r_out / per_rev)))
    body = ring[trim: n - trim]
    # rotate so the cut sits at -90 degrees (bottom)
    rot = -np.pi / 2 - phi_cut
    c, s = np.cos(rot), np.sin(rot)
    R = np.array([[c, -s], [s, c]])
    body = body @ R.T
    # body runs counter-clockwise from just right of the bottom to just left of it;
    # reverse so we enter on the left and leave on the right
    body = body[::-1]
    start, end = body[0], body[-1]
    y_axis = -(r_out + lead)
    entry = [np.array([start[0] - lead * 2.5, y_axis]), np.array([start[0] - lead * 0.6, y_axis]),
             np.array([start[0] - 0.15 * lead, y_axis + 0.45 * lead])]
    exit_ = [np.array([end[0] + 0.15 * lead, y_axis + 0.45 * lead]),
             np.array([end[0] + lead * 0.6, y_axis]), np.array([end[0] + lead * 2.5, y_axis])]
    guide = np.vstack([_densify(np.array(entry + [start])), body, _densify(np.array([end] + exit_))])
    return guide


def _densify(points, step=0.5):
    out = [points[0]]
    for a, b in zip(points[:-1], points[1:]):
        k = max(int(np.ceil(np.linalg.norm(b - a) / step)), 1)
        for t in np.arange(1, k + 1) / k:
            out.append(a + t * (b - a))
    return np.array(out)


def _to_local(nodes):
    nodes = nodes - nodes[0]
    chord = nodes[-1]
    ang = np.arctan2(chord[1], chord[0])
    c, s = np.cos(-ang), np.sin(-ang)
    nodes = nodes @ np.array([[c, -s], [s, c]]).T
    if nodes[:, 1].max() < -nodes[:, 1].min():
        nodes[:, 1] *= -1
    return nodes


def _crossing_points(nodes):
    _, _, _, _, pts = segment_intersections(nodes)
    return pts


def _spread(pts):
    if len(pts) < 2:
        return 0.0
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    return float(d.max())


@lru_cache(maxsize=512)
def knot_template(kind: KnotKind, diameter_mm: float, seg_len: float = SEG_LEN_MM) -> Template:
    """Template whose crossing-point spread equals ``diameter_mm`` (to within 2%)."""
    kind = KnotKind(kind)
    target = float(diameter_mm)
    n_strands, word = BRAIDS[kind]
    # crossing spread is linear in the radius for fixed ratios; solve by secant
    ratio = 0.45 if kind is KnotKind.OVERHAND else 0.36
    def build(radius):
        spacing = max(ratio * radius, 9.0)
        guide = _open_knot_guide(kind, radius, spacing, gap=max(9.0, 0.25 * radius), lead=14.0)
        nodes = chord_resample(guide, seg_len)
        return nodes
    scale = 0.58 if kind is KnotKind.OVERHAND else 0.5
    radius = target * scale
    best = None
    for _ in range(12):
        nodes = build(radius)
        pts = _crossing_points(nodes)
        sp = _spread(pts)
        if len(pts) == N_CROSSINGS[kind]:
            err = sp - target
            if best is None or abs(err) < abs(best[0]):
                best = (err, nodes)
            if abs(err) <= 0.01 * target:
                break
            radius *= target / sp if sp > 0 else 1.1
        else:
            radius *= 1.03
    if best is None:
        raise ValueError(f"cannot build a {kind.value} template of diameter {diameter_mm} mm")
    return Template(kind, _to_local(best[1]), N_CROSSINGS[kind])


@lru_cache(maxsize=64)
def kink_template(loop_radius: float = 25.0, seg_len: float = SEG_LEN_MM) -> Template:
    """A single R1 loop: one crossing, bulging toward +y."""
    r = loop_radius
    # path: along the axis, loop up and around, crossing itself once
    t = np.linspace(-0.5 * np.pi, 1.5 * np.pi + 0.9, 400)
    loop = np.stack([r * np.cos(t) * 0.9 + 0.0, r * np.sin(t) + r], axis=1)
    # shear so the exit continues to the right of the entry and the strands cross
    loop[:, 0] += np.linspace(-0.9 * r, 0.9 * r, len(t))
    entry = _densify(np.array([[-3.5 * r, 0.0], [loop[0, 0] - 0.5 * r, 0.0], loop[0]]))
    last_dir = loop[-1] - loop[-2]
    last_dir /= np.linalg.norm(last_dir)
    exit_ = _densify(np.array([loop[-1], loop[-1] + 0.8 * r * last_dir,
                               [loop[-1, 0] + 2.0 * r, 0.0], [loop[-1, 0] + 3.5 * r, 0.0]]))
    guide = np.vstack([entry, loop, exit_])
    nodes = chord_resample(guide, seg_len)
    n = len(_crossing_points(nodes))
    if n != 1:
        raise ValueError(f"kink template has {n} crossings")
    return Template(None, _to_local(nodes), 1)
