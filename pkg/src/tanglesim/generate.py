"""Seeded tiered initial states: 1-3 knots laid on a 2.7 m cable, endpoints dropped."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import layout
from .cable import CABLE_LENGTH_MM, SEG_LEN_MM, KnotKind, SimState, knots_of
from .templates import kink_template, knot_template

DENSE = "dense"
LOOSE = "loose"
NEAR_END = "near-end"
MID = "mid"

DIAMETER_MM = {DENSE: (62.0, 78.0), LOOSE: (122.0, 138.0)}
U_WINDOWS = {NEAR_END: ((0.12, 0.25), (0.75, 0.88)), MID: ((0.40, 0.60),)}
OCCLUSION = {DENSE: (0.3, 0.5), LOOSE: (0.1, 0.3)}
N_NODES = int(round(CABLE_LENGTH_MM / SEG_LEN_MM)) + 1
MIN_GAP_NODES = 4
END_NODES = 8


class PlacementInfeasible(ValueError):
    pass


def _knot_centre_offset(template) -> float:
    """Node offset of the crossing region's middle from the template's first node."""
    st = SimState.from_nodes(template.local)
    segs = [s for c in st.crossings for s in (c.seg_a, c.seg_b)]
    return 0.5 * (min(segs) + max(segs) + 1)


def _gap_nodes(prev, nxt, clear=30.0):
    """Slack nodes needed so two consecutive knot bodies do not overlap when laid in a lane."""
    if prev is None:
        return MIN_GAP_NODES
    ahead = float(prev.local[:, 0].max()) - prev.chord
    behind = max(-float(nxt.local[:, 0].min()), 0.0)
    return max(MIN_GAP_NODES, int(np.ceil((ahead + behind + clear) / SEG_LEN_MM)))


def _default_variants(tier, rng):
    while True:
        v = [str(rng.choice([DENSE, LOOSE])) for _ in range(tier)]
        if tier < 3 or v.count(LOOSE) <= 1:
            return v


def _default_placements(tier, rng):
    if tier == 1:
        return [str(rng.choice([NEAR_END, MID]))]
    if tier == 2:
        return [NEAR_END, NEAR_END] if rng.random() < 0.5 else [NEAR_END, MID]
    return [NEAR_END, MID, NEAR_END]


def _place(templates, placements, rng, tries=400):
    """Start node for each template so its middle lands in the placement window."""
    n = N_NODES
    offsets = [_knot_centre_offset(t) for t in templates]
    for _ in range(tries):
        centres = []
        used_ends = []
        for t, p in zip(templates, placements):
            wins = list(U_WINDOWS[p])
            if p == NEAR_END and len(wins) == 2:
                order = rng.permutation(2)
                wins = [wins[i] for i in order if i not in used_ends] or wins
                used_ends.append(U_WINDOWS[p].index(wins[0]))
            lo, hi = wins[0]
            centres.append(rng.uniform(lo, hi) * (n - 1))
        order = np.argsort(centres)
        starts = [0] * len(templates)
        ok = True
        prev_end = END_NODES
        prev_t = None
        for i in order:
            t = templates[i]
            # large knots sit as close to their window as the cable allows
            s = max(int(round(centres[i] - offsets[i])), prev_end + _gap_nodes(prev_t, t))
            starts[i] = s
            prev_end = s + t.n_nodes - 1
            prev_t = t
        if ok and prev_end <= n - 1 - END_NODES:
            return starts
    raise PlacementInfeasible("requested knots do not fit on the cable at the requested positions")


def generate_initial_state(tier: int, variants=None, placements=None, rng_seed: int = 0,
                           kinds=None, kink_prob: float = 0.3, max_attempts: int = 60) -> SimState:
    """A seeded tier-``tier`` state with the requested knots.

    ``variants`` and ``placements`` give one entry per knot (``dense``/``loose``,
    ``near-end``/``mid``); ``kinds`` optionally fixes overhand/figure-8 per knot.
    Missing lists are drawn from the seed.
    """
    if tier not in (1, 2, 3):
        raise ValueError(f"tier must be 1, 2 or 3, got {tier!r}")
    rng = np.random.default_rng([int(rng_seed), 0x7A11])
    variants = list(variants) if variants is not None else _default_variants(tier, rng)
    placements = list(placements) if placements is not None else _default_placements(tier, rng)
    kinds = [KnotKind(k) for k in kinds] if kinds is not None else \
        [(KnotKind.OVERHAND, KnotKind.FIGURE8)[int(rng.integers(2))] for _ in range(tier)]
    if not (len(variants) == len(placements) == len(kinds) == tier):
        raise ValueError("need one variant, placement and kind per knot")
    for v in variants:
        if v not in DIAMETER_MM:
            raise ValueError(f"unknown variant {v!r}")

    for draw in range(50):
        templates = []
        for kind, v in zip(kinds, variants):
            lo, hi = DIAMETER_MM[v]
            d = float(np.round(rng.uniform(lo, hi)))
            templates.append(knot_template(kind, d))
        need = sum(t.n_nodes for t in templates) + 2 * END_NODES + MIN_GAP_NODES * (tier - 1)
        try:
            if need > N_NODES:
                raise PlacementInfeasible(f"knots need {need} nodes, cable has {N_NODES}")
            starts = _place(templates, placements, rng)
            break
        except PlacementInfeasible:
            # diameters are redrawn within the requested ranges before giving up
            if draw == 49:
                raise
    blocks = [layout.template_block(t, s, bool(rng.random() < 0.5)) for t, s in zip(templates, starts)]
    occ = {}
    for (t, s, v) in zip(templates, starts, variants):
        occ[s] = float(rng.uniform(*OCCLUSION[v]))

    for attempt in range(max_attempts):
        sub = np.random.default_rng([int(rng_seed), 0x7A11, attempt])
        all_blocks = list(blocks)
        if sub.random() < kink_prob:
            kt = kink_template(float(sub.uniform(20.0, 30.0)))
            free = _free_starts(all_blocks, kt.n_nodes)
            if free:
                all_blocks.append(layout.template_block(kt, int(sub.choice(free)), bool(sub.random() < 0.5)))
        all_blocks.sort(key=lambda b: b.start)
        plan = _initial_plan(all_blocks, sub)
        try:
            state = layout.lay_lanes(N_NODES, all_blocks, plan, sub)
        except (layout.LayoutError, ValueError):
            continue
        spans = knots_of(state)
        if len(spans) != tier or [s.kind for s in spans] != [kinds[i] for i in np.argsort(starts)]:
            continue
        occlusion = tuple(sorted((sp.start_node, occ[s]) for sp, s in zip(spans, sorted(starts))))
        return replace(state, occlusion=occlusion)
    raise PlacementInfeasible(f"no crossing-free layout found for seed {rng_seed}")


def _free_starts(blocks, m):
    taken = np.zeros(N_NODES, bool)
    taken[:END_NODES] = True
    taken[N_NODES - END_NODES:] = True
    for b in blocks:
        taken[max(b.start - MIN_GAP_NODES, 0): b.end + MIN_GAP_NODES + 1] = True
    return [s for s in range(N_NODES - m) if not taken[s:s + m].any()]


def _initial_plan(blocks, rng) -> layout.LanePlan:
    extent = max([b.extent for b in blocks] + [60.0])
    gap = extent + rng.uniform(40.0, 80.0)
    prog = 1 if rng.random() < 0.5 else -1
    dir_x = 1 if rng.random() < 0.5 else -1
    y0 = rng.uniform(110.0, 170.0) if prog > 0 else rng.uniform(730.0, 790.0)
    # endpoint 0 may start beyond the image edge
    tail = rng.uniform(-250.0, 0.0) if rng.random() < 0.3 else rng.uniform(60.0, 250.0)
    x0 = tail if dir_x > 0 else 1200.0 - tail
    squeeze = tuple(j for j in range(1, 6) if rng.random() < 0.35)
    return layout.LanePlan(start=(x0, y0), dir_x=dir_x, prog=prog, gap=gap,
                           wiggle=float(rng.uniform(0.0, 10.0)), wiggle_len=float(rng.uniform(200.0, 400.0)),
                           phase=float(rng.uniform(0, 2 * np.pi)), tail_off=bool(rng.random() < 0.25),
                           squeeze=squeeze)
