"""Shipped polyline fixtures (``x_mm,y_mm`` per line) and a loader."""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..cable import SimState
from ..layout import alternating_flags

NAMES = ("straight", "crossing", "kinked", "overhand", "figure8", "series")


def load_polyline(name: str) -> np.ndarray:
    if name not in NAMES:
        raise KeyError(f"unknown fixture {name!r}; choose from {NAMES}")
    with resources.files(__package__).joinpath(f"{name}.csv").open() as fh:
        return np.loadtxt(fh, delimiter=",", ndmin=2)


def load_state(name: str, first_over: bool = True) -> SimState:
    """Fixture as a state whose over/under flags alternate along the cable."""
    nodes = load_polyline(name)
    return SimState.from_nodes(nodes).with_flags(alternating_flags(nodes, first_over))
