"""Calibrated noisy endpoint and knot detectors plus the analytic loop filter."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import disk, skeletonize

from ..observe import Observation

ENDPOINT_BOX = 10  # half-size of an endpoint bbox, px


class DetectionKind(str, enum.Enum):
    ENDPOINT = "endpoint"
    KNOT = "knot"


@dataclass(frozen=True)
class Detection:
    kind: DetectionKind
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive
    confidence: float

    def __post_init__(self):
        if not 0.99 <= self.confidence <= 1.0:
            raise ValueError("emitted detections clear the 0.99 threshold")

    @property
    def center(self) -> tuple[int, int]:
        x0, y0, x1, y1 = self.bbox
        return ((x0 + x1) // 2, (y0 + y1) // 2)


@dataclass(frozen=True)
class DetectorConfig:
    noise: bool = True
    endpoint_precision: float = 0.867
    knot_recall: float = 0.955
    tight_knot_recall: float = 0.5
    tight_diameter_cm: float = 3.0
    kink_false_positive: float = 0.55
    slack_false_positive: float = 0.02
    enabled: bool = True

    @property
    def endpoint_fp_rate(self) -> float:
        # expected false positives per true positive for the target precision
        return (1.0 - self.endpoint_precision) / self.endpoint_precision


def _confidence(rng) -> float:
    return float(rng.uniform(0.99, 1.0))


def _box(center, half, shape):
    h, w = shape
    x, y = int(center[0]), int(center[1])
    return (max(x - half, 0), max(y - half, 0), min(x + half, w - 1), min(y + half, h - 1))


def _slack_pixel(obs: Observation, rng, avoid=(), min_dist=60.0):
    """A random on-mask pixel of plain cable away from ``avoid`` points."""
    truth = obs.truth
    nodes = truth.state.nodes
    h, w = obs.mask.shape
    cand = [i for i in range(len(nodes))
            if 0 <= nodes[i][0] < w and 0 <= nodes[i][1] < h
            and obs.mask[int(nodes[i][1]), int(nodes[i][0])]]
    for k in truth.knots:
        x0, y0, x1, y1 = k.bbox
        cand = [i for i in cand if not (x0 <= nodes[i][0] <= x1 and y0 <= nodes[i][1] <= y1)]
    if avoid:
        av = np.asarray(avoid, float)
        cand = [i for i in cand if np.min(np.linalg.norm(av - nodes[i], axis=1)) > min_dist]
    if not cand:
        return None
    i = cand[int(rng.integers(len(cand)))]
    return (int(nodes[i][0]), int(nodes[i][1]))


def detect_endpoints(obs: Observation, rng: np.random.Generator, config: DetectorConfig = DetectorConfig()):
    """Every visible endpoint, plus seeded false positives on plain cable."""
    if not config.enabled:
        return []
    shape = obs.mask.shape
    truth = obs.truth
    out = []
    for i in sorted(truth.endpoints):
        out.append(Detection(DetectionKind.ENDPOINT, _box(truth.endpoints[i], ENDPOINT_BOX, shape),
                             _confidence(rng) if config.noise else 1.0))
    if config.noise:
        rate = config.endpoint_fp_rate
        avoid = [truth.endpoints[i] for i in truth.endpoints]
        for _ in range(len(truth.endpoints)):
            if rng.random() < rate:
                p = _slack_pixel(obs, rng, avoid)
                if p is not None:
                    out.append(Detection(DetectionKind.ENDPOINT, _box(p, ENDPOINT_BOX, shape), _confidence(rng)))
                    avoid.append(p)
    # detector output order carries no truth
    order = sorted(range(len(out)), key=lambda k: (-out[k].confidence, out[k].bbox))
    return [out[k] for k in order]


def raw_knot_detections(obs: Observation, rng: np.random.Generator, config: DetectorConfig = DetectorConfig()):
    """Knot detector output before the loop filter."""
    if not config.enabled:
        return []
    truth = obs.truth
    out = []
    for k in truth.knots:
        if not k.visible:
            continue
        if not config.noise:
            out.append(Detection(DetectionKind.KNOT, k.bbox, 1.0))
            continue
        p = config.tight_knot_recall if k.span.diameter <= config.tight_diameter_cm else config.knot_recall
        if rng.random() < p:
            out.append(Detection(DetectionKind.KNOT, k.bbox, _confidence(rng)))
    if config.noise:
        for box in truth.kinks:
            if rng.random() < config.kink_false_positive:
                out.append(Detection(DetectionKind.KNOT, box, _confidence(rng)))
        if rng.random() < config.slack_false_positive:
            p = _slack_pixel(obs, rng, [t for t in truth.endpoints.values()])
            if p is not None:
                out.append(Detection(DetectionKind.KNOT, _box(p, 45, obs.mask.shape), _confidence(rng)))
    order = sorted(range(len(out)), key=lambda k: (-out[k].confidence, out[k].bbox))
    return [out[k] for k in order]


def detect_knots(obs: Observation, rng: np.random.Generator, config: DetectorConfig = DetectorConfig()):
    return loop_filter(raw_knot_detections(obs, rng, config), obs.mask, obs.loop_cache)


# ---------------------------------------------------------------------------
# loop filter

_CLOSE = disk(6)


def crop_topology(mask_crop: np.ndarray) -> tuple[int, int]:
    """(enclosed holes, crossing clusters) of a binary cable crop.

    Under-strand gaps are bridged by a morphological closing first, so a
    crossing shows up as a junction in the skeleton.
    """
    if not mask_crop.any():
        return 0, 0
    pad = np.pad(mask_crop, 8)
    closed = ndimage.binary_closing(pad, structure=_CLOSE)[8:-8, 8:-8]
    bg, n_bg = ndimage.label(~closed)
    border = set(np.unique(np.concatenate([bg[0], bg[-1], bg[:, 0], bg[:, -1]]))) - {0}
    holes = sum(1 for lab in range(1, n_bg + 1)
                if lab not in border and (bg == lab).sum() >= 12)
    sk = skeletonize(closed)
    nb = ndimage.convolve(sk.astype(int), np.ones((3, 3), int), mode="constant") - 1
    junction = sk & (nb >= 3)
    if not junction.any():
        return holes, 0
    grown = ndimage.binary_dilation(junction, iterations=4)
    _, n_junc = ndimage.label(grown)
    return holes, n_junc


def is_simple_loop(mask_crop: np.ndarray) -> bool:
    holes, crossings = crop_topology(mask_crop)
    return holes == 1 and crossings <= 1


def loop_filter(detections, mask: np.ndarray, cache: dict | None = None):
    """Drop knot detections whose bbox holds just a single closed loop."""
    out = []
    for d in detections:
        if d.kind is DetectionKind.KNOT:
            x0, y0, x1, y1 = d.bbox
            if cache is None:
                simple = is_simple_loop(mask[y0:y1 + 1, x0:x1 + 1])
            else:
                if d.bbox not in cache:
                    cache[d.bbox] = is_simple_loop(mask[y0:y1 + 1, x0:x1 + 1])
                simple = cache[d.bbox]
            if simple:
                continue
        out.append(d)
    return out
