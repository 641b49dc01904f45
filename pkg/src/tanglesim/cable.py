"""Ground-truth cable: polyline centerline, crossings, Gauss codes and knot spans.

The cable is a planar knot diagram. Node coordinates are millimetres in the
image frame (x right, y down, origin at the image corner). Each crossing
records which strand passes over; everything topological is derived from the
Gauss code of the open curve.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np

from .geometry import DegenerateGeometry, segment_intersections

log = logging.getLogger(__name__)

CABLE_LENGTH_MM = 2700.0
SEG_LEN_MM = 10.0
CABLE_RADIUS_MM = 3.0
STATE_SCHEMA = "tanglesim.state/1"

__all__ = [
    "CABLE_LENGTH_MM",
    "SEG_LEN_MM",
    "Centerline",
    "Crossing",
    "DegenerateGeometry",
    "GaussCode",
    "GaussEntry",
    "KnotKind",
    "KnotSpan",
    "SimState",
    "UnknownTangle",
    "classify_knots",
    "compute_crossings",
    "gauss_code",
    "is_untangled",
    "reduce_word",
]


class UnknownTangle(RuntimeError):
    """A crossing cluster reduced to neither a known knot nor nothing."""


class KnotKind(str, enum.Enum):
    OVERHAND = "overhand"
    FIGURE8 = "figure8"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Centerline:
    nodes: np.ndarray
    seg_len: float = SEG_LEN_MM
    radius: float = CABLE_RADIUS_MM

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 2 or len(nodes) < 2:
            raise ValueError("centerline needs an (n, 2) node array with n >= 2")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_segments(self) -> int:
        return len(self.nodes) - 1

    def node_at(self, u: float) -> int:
        """Nearest node index for arclength fraction ``u``."""
        u = min(max(float(u), 0.0), 1.0)
        return int(np.floor(u * self.n_segments + 0.5))

    def u_of(self, index: float) -> float:
        return float(index) / self.n_segments

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.nodes, axis=0), axis=1).sum())

    @classmethod
    def straight(cls, n_nodes: int = 271, start=(100.0, 450.0), heading: float = 0.0,
                 seg_len: float = SEG_LEN_MM) -> "Centerline":
        steps = np.arange(n_nodes)[:, None] * seg_len
        direction = np.array([np.cos(heading), np.sin(heading)])
        return cls(np.asarray(start, float) + steps * direction, seg_len)


@dataclass(frozen=True)
class Crossing:
    seg_a: int
    seg_b: int
    point: tuple[float, float]
    t_a: float
    t_b: float
    over: str = "b"  # "a" or "b"

    @property
    def u_a(self) -> float:
        return self.seg_a + self.t_a

    @property
    def u_b(self) -> float:
        return self.seg_b + self.t_b

    @property
    def over_seg(self) -> int:
        return self.seg_a if self.over == "a" else self.seg_b

    @property
    def under_seg(self) -> int:
        return self.seg_b if self.over == "a" else self.seg_a

    def with_over(self, over: str) -> "Crossing":
        return replace(self, over=over)


def compute_crossings(centerline: Centerline, previous=None, moving=None) -> tuple[Crossing, ...]:
    """Every transversal self-intersection of the centerline, sorted by segment pair.

    Over/under flags are carried from ``previous`` crossings on the same (or
    nearly the same) segment pair. A crossing with no ancestor goes to the
    moving strand when ``moving`` (boolean per node) singles one out, otherwise
    the strand with lower ``u`` goes under.
    """
    nodes = centerline.nodes
    ia, ib, ta, tb, pts = segment_intersections(nodes)
    moving_seg = None
    if moving is not None:
        moving = np.asarray(moving, dtype=bool)
        moving_seg = moving[:-1] | moving[1:]

    prev_exact = {}
    prev_list = list(previous or ())
    for c in prev_list:
        prev_exact[(c.seg_a, c.seg_b)] = c.over

    out = []
    used_prev = set()
    for a, b, t_a, t_b, p in zip(ia.tolist(), ib.tolist(), ta.tolist(), tb.tolist(), pts):
        over = prev_exact.get((a, b))
        if over is not None:
            used_prev.add((a, b))
        else:
            over = _nearest_previous(prev_list, used_prev, a, b, p)
        if over is None:
            if moving_seg is not None and moving_seg[a] != moving_seg[b]:
                over = "a" if moving_seg[a] else "b"
            else:
                over = "b"
        out.append(Crossing(a, b, (float(p[0]), float(p[1])), float(t_a), float(t_b), over))
    return tuple(out)


def _nearest_previous(prev, used, a, b, p, seg_window=2, dist_mm=15.0):
    best = None
    best_d = dist_mm
    for c in prev:
        key = (c.seg_a, c.seg_b)
        if key in used:
            continue
        if abs(c.seg_a - a) <= seg_window and abs(c.seg_b - b) <= seg_window:
            d = float(np.hypot(c.point[0] - p[0], c.point[1] - p[1]))
            if d <= best_d:
                best, best_d = c, d
    if best is None:
        return None
    used.add((best.seg_a, best.seg_b))
    return best.over


@dataclass(frozen=True)
class SimState:
    """Ground-truth cable state.

    ``occlusion`` maps a knot's first node index to the fraction of its
    strands hidden under other strands; it feeds the perception noise models.
    ``lost`` latches once the cable has irrecoverably fallen off the workspace.
    """

    centerline: Centerline
    crossings: tuple[Crossing, ...] = ()
    sim_clock: float = 0.0
    occlusion: tuple[tuple[int, float], ...] = ()
    lost: bool = False
    workspace: object = None

    @classmethod
    def from_nodes(cls, nodes, previous: "SimState | None" = None, moving=None, **kw) -> "SimState":
        cl = Centerline(nodes)
        prev = previous.crossings if previous is not None else None
        crossings = compute_crossings(cl, prev, moving)
        if previous is not None:
            base = dict(sim_clock=previous.sim_clock, occlusion=previous.occlusion,
                        lost=previous.lost, workspace=previous.workspace)
            base.update(kw)
            kw = base
        return cls(cl, crossings, **kw)

    @property
    def nodes(self) -> np.ndarray:
        return self.centerline.nodes

    def moved_to(self, nodes, moving=None, **kw) -> "SimState":
        """New state with ``nodes``; crossing flags carried, new crossings per ``moving``."""
        return SimState.from_nodes(nodes, previous=self, moving=moving, **kw)

    def advance(self, seconds: float) -> "SimState":
        if seconds < 0:
            raise ValueError("sim_clock never decreases")
        return replace(self, sim_clock=self.sim_clock + float(seconds))

    def occlusion_of(self, start_node: int, default: float = 0.0) -> float:
        best = None
        for k, v in self.occlusion:
            if best is None or abs(k - start_node) < abs(best[0] - start_node):
                best = (k, v)
        if best is None or abs(best[0] - start_node) > 8:
            return default
        return best[1]

    def with_flags(self, flags: dict) -> "SimState":
        """Override over/under flags for crossings keyed by ``(seg_a, seg_b)``."""
        crossings = tuple(c.with_over(flags.get((c.seg_a, c.seg_b), c.over)) for c in self.crossings)
        return replace(self, crossings=crossings)

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": STATE_SCHEMA,
            "seg_len": self.centerline.seg_len,
            "radius": self.centerline.radius,
            "nodes": [[round(float(x), 6), round(float(y), 6)] for x, y in self.nodes],
            "crossings": [[c.seg_a, c.seg_b, c.over] for c in self.crossings],
            "sim_clock": self.sim_clock,
            "occlusion": [[int(k), float(v)] for k, v in self.occlusion],
            "lost": self.lost,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "SimState":
        if doc.get("schema") != STATE_SCHEMA:
            raise ValueError(f"unsupported state schema {doc.get('schema')!r}")
        cl = Centerline(np.array(doc["nodes"], float), doc["seg_len"], doc["radius"])
        flags = {(a, b): o for a, b, o in doc["crossings"]}
        crossings = tuple(c.with_over(flags.get((c.seg_a, c.seg_b), c.over))
                          for c in compute_crossings(cl))
        return cls(cl, crossings, float(doc["sim_clock"]),
                   tuple((int(k), float(v)) for k, v in doc.get("occlusion", [])),
                   bool(doc.get("lost", False)))

    @classmethod
    def from_json(cls, text: str) -> "SimState":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# Gauss codes


@dataclass(frozen=True)
class GaussEntry:
    crossing: int
    over: bool
    sign: int
    u: float  # along the cable, in segment units


@dataclass(frozen=True)
class GaussCode:
    entries: tuple[GaussEntry, ...] = ()

    def __len__(self):
        return len(self.entries)

    def word(self) -> list[tuple[int, bool]]:
        return [(e.crossing, e.over) for e in self.entries]

    def __str__(self):
        return ",".join(f"{e.crossing}{'O' if e.over else 'U'}{'+' if e.sign > 0 else '-'}"
                        for e in self.entries)


def crossing_sign(nodes: np.ndarray, c: Crossing) -> int:
    """+1 when the under strand points to the left of the over strand."""
    d_over = nodes[c.over_seg + 1] - nodes[c.over_seg]
    d_under = nodes[c.under_seg + 1] - nodes[c.under_seg]
    det = d_over[0] * d_under[1] - d_over[1] * d_under[0]
    return 1 if det > 0 else -1


def gauss_code(state: SimState) -> GaussCode:
    nodes = state.nodes
    entries = []
    for cid, c in enumerate(state.crossings):
        sign = crossing_sign(nodes, c)
        entries.append(GaussEntry(cid, c.over == "a", sign, c.u_a))
        entries.append(GaussEntry(cid, c.over == "b", sign, c.u_b))
    entries.sort(key=lambda e: e.u)
    return GaussCode(tuple(entries))


def reduce_word(word: list[tuple[int, bool]]) -> list[tuple[int, bool]]:
    """Exhaustive R1 (kink) and R2 (poke) removal on an open-curve Gauss word."""
    word = list(word)
    changed = True
    while changed:
        changed = False
        # R1: both passages through a crossing are consecutive
        for i in range(len(word) - 1):
            if word[i][0] == word[i + 1][0]:
                del word[i:i + 2]
                changed = True
                break
        if changed:
            continue
        # R2: two crossings met consecutively on both strands, one strand over both
        pairs = {}
        for i in range(len(word) - 1):
            (x, ox), (y, oy) = word[i], word[i + 1]
            if x != y and ox == oy:
                pairs.setdefault(frozenset((x, y)), []).append((i, ox))
        for key, hits in pairs.items():
            over_hits = [i for i, o in hits if o]
            under_hits = [i for i, o in hits if not o]
            if over_hits and under_hits:
                drop = set(key)
                word = [e for e in word if e[0] not in drop]
                changed = True
                break
    return word


# ---------------------------------------------------------------------------
# Knot classification


def _canonical(labels) -> tuple[int, ...]:
    seen = {}
    out = []
    for x in labels:
        if x not in seen:
            seen[x] = len(seen)
        out.append(seen[x])
    return tuple(out)


def _long_patterns(closed: list[int]) -> set[tuple[int, ...]]:
    pats = set()
    for w in (closed, closed[::-1]):
        for k in range(len(w)):
            pats.add(_canonical(w[k:] + w[:k]))
    return pats


TREFOIL_CLOSED = [1, 2, 3, 1, 2, 3]
FIGURE8_CLOSED = [1, 2, 3, 1, 4, 3, 2, 4]
PATTERNS = {
    KnotKind.OVERHAND: _long_patterns(TREFOIL_CLOSED),
    KnotKind.FIGURE8: _long_patterns(FIGURE8_CLOSED),
}


def match_pattern(block: list[tuple[int, bool]]) -> KnotKind:
    labels = [c for c, _ in block]
    overs = [o for _, o in block]
    alternating = all(overs[i] != overs[i + 1] for i in range(len(overs) - 1))
    canon = _canonical(labels)
    if alternating:
        for kind, pats in PATTERNS.items():
            if canon in pats:
                return kind
    return KnotKind.UNKNOWN


@dataclass(frozen=True)
class KnotSpan:
    kind: KnotKind
    u_interval: tuple[float, float]
    diameter: float  # cm
    crossings: frozenset
    node_range: tuple[int, int] = (0, 0)  # first and last node touching the span

    @property
    def start_node(self) -> int:
        return self.node_range[0]


def _blocks(word):
    """Split a reduced word into closed consecutive blocks (connected-sum factors)."""
    partner = {}
    first = {}
    for i, (c, _) in enumerate(word):
        if c in first:
            partner[i] = first[c]
            partner[first[c]] = i
        else:
            first[c] = i
    blocks = []
    i = 0
    while i < len(word):
        end = partner[i]
        j = i
        while j <= end:
            end = max(end, partner[j])
            j += 1
        blocks.append((i, end))
        i = end + 1
    return blocks


def classify_knots(code: GaussCode, state: SimState, strict: bool = False) -> list[KnotSpan]:
    """Knot spans along the cable, ordered by ``u``.

    Clusters that reduce to neither an overhand nor a figure-8 come back as
    ``KnotKind.UNKNOWN`` spans (or raise :class:`UnknownTangle` when ``strict``).
    """
    if not code.entries:
        return []
    entries = list(code.entries)
    reduced = reduce_word([(e.crossing, e.over) for e in entries])
    if not reduced:
        return []
    keep = {c for c, _ in reduced}
    kept_entries = [e for e in entries if e.crossing in keep]
    n_seg = state.centerline.n_segments
    spans = []
    for i0, i1 in _blocks(reduced):
        block = reduced[i0:i1 + 1]
        kind = match_pattern(block)
        ids = frozenset(c for c, _ in block)
        if kind is KnotKind.UNKNOWN:
            msg = f"crossing cluster {sorted(ids)} reduces to no known knot"
            if strict:
                raise UnknownTangle(msg)
            log.debug(msg)
        us = [e.u for e in kept_entries[i0:i1 + 1]]
        pts = [state.crossings[c].point for c in ids]
        diam = max((float(np.hypot(p[0] - q[0], p[1] - q[1])) for p, q in combinations(pts, 2)),
                   default=0.0) / 10.0
        segs = [s for c in ids for s in (state.crossings[c].seg_a, state.crossings[c].seg_b)]
        spans.append(KnotSpan(kind, (min(us) / n_seg, max(us) / n_seg), diam, ids,
                              (min(segs), max(segs) + 1)))
    return spans


def knots_of(state: SimState) -> list[KnotSpan]:
    return classify_knots(gauss_code(state), state)


def is_untangled(state: SimState) -> bool:
    """True iff the diagram reduces to no crossings under R1/R2 moves."""
    return not reduce_word(gauss_code(state).word())


def kink_ranges(state: SimState) -> list[tuple[int, int]]:
    """Node ranges of lone R1 loops (both passages adjacent in the full word)."""
    word = gauss_code(state).word()
    out = []
    for i in range(len(word) - 1):
        if word[i][0] == word[i + 1][0]:
            c = state.crossings[word[i][0]]
            out.append((c.seg_a, c.seg_b + 1))
    return out


def grasp_points(state: SimState, span: KnotSpan, side: int) -> tuple[int, int]:
    """Ground-truth (cage, pinch) nodes for untying ``span`` approached from ``side``.

    ``side`` 0 walks in increasing node order, 1 in decreasing order. The cage
    sits two nodes beyond the first crossing the walking strand passes under;
    the pinch is the over-strand node nearest that crossing.
    """
    n = state.centerline.n_nodes
    entries = [e for e in gauss_code(state).entries if e.crossing in span.crossings]
    if side == 1:
        entries = entries[::-1]
    under = next((e for e in entries if not e.over), entries[-1])
    c = state.crossings[under.crossing]
    seg = int(np.floor(under.u))
    cage = seg + 3 if side == 0 else seg - 2
    cage = int(np.clip(cage, 0, n - 1))
    o = c.over_seg
    p = np.asarray(c.point, float)
    nodes = state.nodes
    pinch = o if np.linalg.norm(nodes[o] - p) <= np.linalg.norm(nodes[o + 1] - p) else o + 1
    return cage, int(pinch)


def adjacent_knots(state: SimState) -> list[tuple[KnotSpan, int]]:
    """The first knot met from each end as ``(span, side)``; empty when unknotted."""
    spans = [s for s in knots_of(state) if s.kind is not KnotKind.UNKNOWN] or knots_of(state)
    if not spans:
        return []
    out = [(spans[0], 0)]
    out.append((spans[-1], 1))
    return out
