"""Planar polyline primitives shared by the cable model, renderer and tracer."""

from __future__ import annotations

import numpy as np


class DegenerateGeometry(ValueError):
    """Two non-adjacent segments are collinear and overlap."""


def segment_intersections(nodes: np.ndarray, eps: float = 1e-9):
    """All transversal intersections between non-adjacent segments of a polyline.

    Returns ``(seg_a, seg_b, t_a, t_b, points)`` arrays with ``seg_a < seg_b``.
    ``t_a``/``t_b`` are half-open segment parameters in ``[0, 1)`` so a hit on a
    shared vertex is counted once.
    """
    nodes = np.asarray(nodes, dtype=float)
    n_seg = len(nodes) - 1
    empty = (np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(0), np.zeros((0, 2)))
    if n_seg < 3:
        return empty
    p = nodes[:-1]
    d = nodes[1:] - nodes[:-1]
    lo = np.minimum(nodes[:-1], nodes[1:])
    hi = np.maximum(nodes[:-1], nodes[1:])

    ia, ib = np.triu_indices(n_seg, k=2)
    # bbox prefilter keeps the exact test cheap on long cables
    keep = (
        (lo[ia, 0] <= hi[ib, 0] + eps)
        & (lo[ib, 0] <= hi[ia, 0] + eps)
        & (lo[ia, 1] <= hi[ib, 1] + eps)
        & (lo[ib, 1] <= hi[ia, 1] + eps)
    )
    ia, ib = ia[keep], ib[keep]
    if ia.size == 0:
        return empty

    r = d[ia]
    s = d[ib]
    qp = p[ib] - p[ia]
    denom = r[:, 0] * s[:, 1] - r[:, 1] * s[:, 0]
    num_t = qp[:, 0] * s[:, 1] - qp[:, 1] * s[:, 0]
    num_u = qp[:, 0] * r[:, 1] - qp[:, 1] * r[:, 0]

    parallel = np.abs(denom) < eps
    if parallel.any():
        colinear = parallel & (np.abs(num_t) < eps * 1e3)
        for k in np.flatnonzero(colinear):
            a, b = ia[k], ib[k]
            rr = r[k] @ r[k]
            if rr < eps:
                continue
            t0 = (qp[k] @ r[k]) / rr
            t1 = t0 + (s[k] @ r[k]) / rr
            if max(min(t0, t1), 0.0) < min(max(t0, t1), 1.0) - 1e-9:
                raise DegenerateGeometry(f"segments {a} and {b} are collinear and overlap")

    with np.errstate(divide="ignore", invalid="ignore"):
        t = num_t / denom
        u = num_u / denom
    hit = (~parallel) & (t >= 0.0) & (t < 1.0) & (u >= 0.0) & (u < 1.0)
    ia, ib, t, u = ia[hit], ib[hit], t[hit], u[hit]
    pts = p[ia] + t[:, None] * d[ia]
    return ia, ib, t, u, pts


def arclength(nodes: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(nodes, axis=0), axis=1).sum())


def segment_lengths(nodes: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.diff(nodes, axis=0), axis=1)


def chord_resample(guide: np.ndarray, step: float, n_points: int | None = None) -> np.ndarray:
    """Walk a dense guide polyline emitting points exactly ``step`` apart (Euclidean).

    When ``n_points`` exceeds what the guide can supply, the path is extended
    straight along the final direction.
    """
    guide = np.asarray(guide, dtype=float)
    out = [guide[0].copy()]
    seg = 0
    cur = guide[0].copy()
    while n_points is None or len(out) < n_points:
        found = False
        while seg < len(guide) - 1:
            a, b = guide[seg], guide[seg + 1]
            # furthest point on [a, b] at distance step from cur, beyond the current position
            d = b - a
            f = a - cur
            A = d @ d
            if A < 1e-12:
                seg += 1
                continue
            B = 2 * (f @ d)
            C = f @ f - step * step
            disc = B * B - 4 * A * C
            if disc >= 0:
                sq = np.sqrt(disc)
                t2 = (-B + sq) / (2 * A)
                if 0.0 <= t2 <= 1.0:
                    nxt = a + t2 * d
                    guide = guide.copy()
                    guide[seg] = nxt
                    out.append(nxt)
                    cur = nxt
                    found = True
                    break
            seg += 1
        if not found:
            if n_points is None:
                break
            direction = out[-1] - out[-2] if len(out) > 1 else np.array([1.0, 0.0])
            direction = direction / np.linalg.norm(direction)
            while len(out) < n_points:
                out.append(out[-1] + step * direction)
            break
    return np.array(out)


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def point_segment_distance(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point in ``pts`` (..., 2) to the segment ``a``-``b``."""
    d = b - a
    dd = d @ d
    if dd < 1e-12:
        return np.linalg.norm(pts - a, axis=-1)
    t = np.clip(((pts - a) @ d) / dd, 0.0, 1.0)
    proj = a + t[..., None] * d
    return np.linalg.norm(pts - proj, axis=-1)


def turning_angles(nodes: np.ndarray) -> np.ndarray:
    """Absolute heading change at each interior node, radians."""
    d = np.diff(nodes, axis=0)
    ang = np.arctan2(d[:, 1], d[:, 0])
    return np.abs((np.diff(ang) + np.pi) % (2 * np.pi) - np.pi)
