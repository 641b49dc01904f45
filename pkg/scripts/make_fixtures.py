"""Regenerate the polyline fixtures shipped in ``tanglesim/fixtures``."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from tanglesim import layout
from tanglesim.cable import Centerline
from tanglesim.generate import LOOSE, MID, NEAR_END, N_NODES, _initial_plan, generate_initial_state
from tanglesim.templates import kink_template

OUT = Path(__file__).resolve().parents[1] / "src" / "tanglesim" / "fixtures"


def write(name: str, nodes) -> None:
    np.savetxt(OUT / f"{name}.csv", np.asarray(nodes, float), fmt="%.4f", delimiter=",")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    write("straight", Centerline.straight(N_NODES, start=(-750.0, 450.0)).nodes)
    write("crossing", [(0, 0), (10, 0), (10, -5), (5, -5), (5, 5)])
    rng = np.random.default_rng(5)
    blocks = [layout.template_block(kink_template(25.0), 120, True)]
    write("kinked", layout.lay_lanes(N_NODES, blocks, _initial_plan(blocks, rng), rng).nodes)
    one = dict(rng_seed=1, kink_prob=0.0)
    write("overhand", generate_initial_state(1, [LOOSE], [MID], kinds=["overhand"], **one).nodes)
    write("figure8", generate_initial_state(1, [LOOSE], [MID], kinds=["figure8"], **one).nodes)
    write("series", generate_initial_state(2, [LOOSE, LOOSE], [NEAR_END, MID],
                                           kinds=["overhand", "figure8"], **one).nodes)


if __name__ == "__main__":
    main()
