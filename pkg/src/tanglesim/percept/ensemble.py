"""Ensemble cage-pinch scoring with pixelwise-min aggregation and the kappa gate.

Each member stands in for a trained score network: an analytic field peaked at
the true cage and pinch pixels of the knot the trace tail enters, corrupted by
member-seeded noise (a displaced peak plus a smooth clutter field). Noise grows
with occlusion and tightness, so on hard knots members disagree about where
the peak is and the aggregated maxima drop.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..cable import grasp_points, knots_of
from ..observe import Observation

KAPPA = 0.35
CROP_PX = 200


class NetworkStatus(str, enum.Enum):
    CERTAIN = "NETWORK_CERTAIN"
    UNCERTAIN = "NETWORK_UNCERTAIN"


@dataclass(frozen=True)
class ScoreField:
    cage: np.ndarray
    pinch: np.ndarray

    def __post_init__(self):
        if self.cage.shape != self.pinch.shape:
            raise ValueError("cage and pinch fields must share a shape")
        for f in (self.cage, self.pinch):
            if f.size and (f.min() < 0.0 or f.max() > 1.0):
                raise ValueError("scores must lie in [0, 1]")

    def scaled(self, alpha: float) -> "ScoreField":
        return ScoreField(self.cage * alpha, self.pinch * alpha)


@dataclass(frozen=True)
class GraspProposal:
    cage_px: tuple[int, int]  # image x, y
    pinch_px: tuple[int, int]
    confidence: float
    status: NetworkStatus

    @property
    def certain(self) -> bool:
        return self.status is NetworkStatus.CERTAIN


def aggregate(members) -> ScoreField:
    """Pixelwise minimum over the members' fields."""
    members = list(members)
    if not members:
        raise ValueError("an ensemble needs at least one member")
    cage = np.minimum.reduce([m.cage for m in members])
    pinch = np.minimum.reduce([m.pinch for m in members])
    return ScoreField(cage, pinch)


def gate(confidence: float, kappa: float = KAPPA) -> NetworkStatus:
    return NetworkStatus.UNCERTAIN if confidence < kappa else NetworkStatus.CERTAIN


def propose(field: ScoreField, origin=(0, 0), kappa: float = KAPPA) -> GraspProposal:
    """Argmax pixels of the aggregated fields and the max-times-max confidence."""
    ci = np.unravel_index(int(np.argmax(field.cage)), field.cage.shape)
    pi = np.unravel_index(int(np.argmax(field.pinch)), field.pinch.shape)
    conf = float(field.cage[ci]) * float(field.pinch[pi])
    ox, oy = origin
    return GraspProposal((int(ci[1] + ox), int(ci[0] + oy)), (int(pi[1] + ox), int(pi[0] + oy)),
                         conf, gate(conf, kappa))


# ---------------------------------------------------------------------------
# knot crops and the truth-anchored members


@dataclass(frozen=True)
class KnotCrop:
    origin: tuple[int, int]  # image x, y of the crop's top-left pixel
    shape: tuple[int, int]  # rows, cols
    cage_px: tuple[float, float] | None  # true cage point, crop coordinates
    pinch_px: tuple[float, float] | None
    occlusion: float
    diameter_cm: float


def _crop_window(bbox, image_shape, size=CROP_PX):
    h, w = image_shape
    cx = 0.5 * (bbox[0] + bbox[2])
    cy = 0.5 * (bbox[1] + bbox[3])
    sw, sh = min(size, w), min(size, h)
    x0 = int(np.clip(round(cx - sw / 2), 0, w - sw))
    y0 = int(np.clip(round(cy - sh / 2), 0, h - sh))
    return x0, y0, sw, sh


def _walk_direction(truth, tail) -> tuple[int, int]:
    """Node the trace tail ends on and the node-order direction it was walking."""
    j = truth.node_of_pixel(tail[-1])
    prev = [truth.node_of_pixel(p) for p in tail[:-1]]
    back = [k for k in prev if k != j]
    if back:
        return j, 1 if j > back[-1] else -1
    n = len(truth.state.nodes)
    return j, 1 if j < n // 2 else -1


def knot_crop(obs: Observation, knot_bbox, trace_tail, size: int = CROP_PX,
              default_occlusion: float = 0.3) -> KnotCrop:
    """Crop around a detected knot, with truth for the strand the trace tail enters."""
    truth = obs.truth
    state = truth.state
    x0, y0, sw, sh = _crop_window(knot_bbox, obs.mask.shape, size)
    spans = knots_of(state)
    if not spans:
        return KnotCrop((x0, y0), (sh, sw), None, None, 0.0, 0.0)
    j, direction = _walk_direction(truth, np.asarray(trace_tail, float))
    if direction > 0:
        ahead = [s for s in spans if s.node_range[1] >= j]
        span = ahead[0] if ahead else spans[-1]
    else:
        ahead = [s for s in spans if s.node_range[0] <= j]
        span = ahead[-1] if ahead else spans[0]
    cage, pinch = grasp_points(state, span, 0 if direction > 0 else 1)
    nodes = state.nodes
    c = (float(nodes[cage][0] - x0), float(nodes[cage][1] - y0))
    p = (float(nodes[pinch][0] - x0), float(nodes[pinch][1] - y0))
    occ = state.occlusion_of(span.start_node, default_occlusion)
    return KnotCrop((x0, y0), (sh, sw), c, p, float(occ), float(span.diameter))


def _peak(shape, centre, height, sigma):
    out = np.zeros(shape)
    if centre is None:
        return out
    gx = np.exp(-(np.arange(shape[1]) + 0.5 - centre[0]) ** 2 / (2 * sigma ** 2))
    gy = np.exp(-(np.arange(shape[0]) + 0.5 - centre[1]) ** 2 / (2 * sigma ** 2))
    return height * np.outer(gy, gx)


def ideal_field(crop: KnotCrop, height: float = 1.0, sigma: float = 20.0) -> ScoreField:
    return ScoreField(_peak(crop.shape, crop.cage_px, height, sigma),
                      _peak(crop.shape, crop.pinch_px, height, sigma))


def smooth_noise(shape, rng: np.random.Generator, corr_px: float = 20.0) -> np.ndarray:
    """Zero-mean, unit-variance Gaussian random field with the given correlation length."""
    white = rng.standard_normal(shape)
    sigma = corr_px / 2.0
    f = ndimage.gaussian_filter(white, sigma, mode="wrap")
    # variance of Gaussian-filtered unit white noise in 2-D
    return f * (2.0 * np.sqrt(np.pi) * sigma)


@dataclass(frozen=True)
class MemberConfig:
    a_base: float = 0.15
    occlusion_gain: float = 0.5
    tight_gain: float = 0.3
    tight_ref_cm: float = 6.0
    corr_px: float = 20.0
    peak_height: float = 1.0
    peak_sigma: float = 20.0
    shift_px: float = 40.0  # per-axis std of a member's peak displacement, per unit amplitude
    additive: float = 0.25  # std of the additive smooth field, per unit amplitude

    def amplitude(self, crop: KnotCrop) -> float:
        tight = 0.0 if crop.diameter_cm <= 0 else max(0.0, 1.0 - crop.diameter_cm / self.tight_ref_cm)
        return self.a_base + self.occlusion_gain * crop.occlusion + self.tight_gain * tight


@dataclass(frozen=True)
class NoisyMember:
    """One ensemble member: a displaced ideal peak plus its own smooth clutter."""

    config: MemberConfig = MemberConfig()

    def __call__(self, crop: KnotCrop, rng: np.random.Generator) -> ScoreField:
        cfg = self.config
        a = cfg.amplitude(crop)
        out = []
        for centre in (crop.cage_px, crop.pinch_px):
            # a member mislocates its peak by a smooth displacement, plus low-level clutter
            shift = rng.normal(0.0, cfg.shift_px * a, 2)
            c = None if centre is None else (centre[0] + shift[0], centre[1] + shift[1])
            f = _peak(crop.shape, c, cfg.peak_height, cfg.peak_sigma)
            f = f + cfg.additive * a * smooth_noise(crop.shape, rng, cfg.corr_px)
            out.append(np.clip(f, 0.0, 1.0))
        return ScoreField(*out)


def make_ensemble(size: int = 3, config: MemberConfig = MemberConfig()):
    return tuple(NoisyMember(config) for _ in range(size))


def score_cage_pinch(crop: KnotCrop, members, rng: np.random.Generator, kappa: float = KAPPA):
    """Run every member on the crop, min-aggregate, and gate; returns (proposal, member fields)."""
    seeds = rng.integers(0, 2**63 - 1, size=len(members))
    fields = [m(crop, np.random.default_rng(int(s))) for m, s in zip(members, seeds)]
    return propose(aggregate(fields), crop.origin, kappa), fields
