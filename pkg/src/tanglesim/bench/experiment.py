"""Manifest-driven experiments: balanced tier cells, paired arms, persisted records.

A manifest is JSON::

    {"tiers": [2], "seeds": [0, 1, 2], "arms": ["default", "ablated"],
     "noise_off": false, "balanced": true, "config": {...}}

``seeds`` may also be ``{"start": 0, "count": 50}``. ``config`` is an optional
nested run-config document (or a path to one). With ``balanced`` on, seed
index ``i`` within a tier gets the ``i``-th loose/dense and placement cell in
rotation so every cell is covered equally.
"""

from __future__ import annotations

import csv
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from ..config import ConfigInvalid, RunConfig
from ..generate import DENSE, LOOSE, MID, NEAR_END
from .metrics import compute_metrics
from .report import render_report
from .rollout import Outcome, RolloutRecord, TierConfig, run_rollout

ARMS = ("default", "ablated")

# (variants, placements) cells rotated through by seed index
CELLS = {
    1: [((LOOSE,), (NEAR_END,)), ((DENSE,), (NEAR_END,)), ((LOOSE,), (MID,)), ((DENSE,), (MID,))],
    2: [((LOOSE, LOOSE), (NEAR_END, NEAR_END)), ((DENSE, DENSE), (NEAR_END, NEAR_END)),
        ((LOOSE, LOOSE), (NEAR_END, MID)), ((DENSE, DENSE), (NEAR_END, MID))],
    3: [((LOOSE, DENSE, DENSE), (NEAR_END, MID, NEAR_END)), ((DENSE, DENSE, DENSE), (NEAR_END, MID, NEAR_END)),
        ((DENSE, LOOSE, DENSE), (NEAR_END, MID, NEAR_END)), ((DENSE, DENSE, LOOSE), (NEAR_END, MID, NEAR_END))],
}


@dataclass(frozen=True)
class Manifest:
    tiers: tuple
    seeds: tuple
    arms: tuple = ("default",)
    noise_off: bool = False
    balanced: bool = True
    config: RunConfig = field(default_factory=RunConfig)
    dump_frames: bool = False

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "Manifest":
        if not isinstance(doc, dict) or not doc:
            raise ConfigInvalid("manifest is empty")
        known = {"tiers", "seeds", "arms", "noise_off", "balanced", "config", "dump_frames"}
        extra = set(doc) - known
        if extra:
            raise ConfigInvalid(f"unknown manifest keys: {sorted(extra)}")
        seeds = doc.get("seeds", ())
        if isinstance(seeds, dict):
            seeds = range(int(seeds.get("start", 0)), int(seeds.get("start", 0)) + int(seeds["count"]))
        tiers = tuple(int(t) for t in doc.get("tiers", ()))
        seeds = tuple(int(s) for s in seeds)
        arms = tuple(doc.get("arms", ("default",)))
        if not tiers or not seeds or not arms:
            raise ConfigInvalid("manifest needs at least one tier, seed and arm")
        for a in arms:
            if a not in ARMS:
                raise ConfigInvalid(f"unknown arm {a!r}; expected one of {ARMS}")
        for t in tiers:
            TierConfig(t).validate()
        cfg = doc.get("config")
        if isinstance(cfg, str):
            path = Path(cfg) if base_dir is None else base_dir / cfg
            run = RunConfig.load(path)
        elif isinstance(cfg, dict):
            run = RunConfig.from_dict(cfg)
        else:
            run = RunConfig()
        return cls(tiers, seeds, arms, bool(doc.get("noise_off", False)), bool(doc.get("balanced", True)),
                   run, bool(doc.get("dump_frames", False)))

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        text = path.read_text()
        if not text.strip():
            raise ConfigInvalid("manifest is empty")
        return cls.from_dict(json.loads(text), path.parent)

    def run_config(self, arm: str) -> RunConfig:
        run = self.config.noise_off() if self.noise_off else self.config
        return run.ablated() if arm == "ablated" else run

    def jobs(self) -> list[tuple[str, TierConfig, int]]:
        """``(arm, tier config, seed)`` in a fixed order; arms share seeds and cells."""
        out = []
        for arm in self.arms:
            for tier in self.tiers:
                for i, seed in enumerate(self.seeds):
                    if self.balanced:
                        v, p = CELLS[tier][i % len(CELLS[tier])]
                        tc = TierConfig(tier, v, p)
                    else:
                        tc = TierConfig(tier)
                    out.append((arm, tc, seed))
        return out


@dataclass
class ExperimentResult:
    records: list
    reports: dict  # (arm, tier) -> MetricsReport
    out_dir: Path | None = None


def _job(args) -> RolloutRecord:
    arm, tc, seed, run, frame_root = args
    frame_dir = None if frame_root is None else Path(frame_root) / f"{arm}_tier{tc.tier}" / f"rollout_{seed}"
    try:
        return run_rollout(tc, run, seed, arm, frame_dir)
    except Exception as exc:  # a failed rollout is recorded, not fatal
        return RolloutRecord(int(seed), tc.tier, run.hash(), [], tc.tier, None, Outcome.FAILURE_A, 0.0, arm,
                             tuple(tc.variants or ()), tuple(tc.placements or ()), False,
                             f"{type(exc).__name__}: {exc}", {"traceback": traceback.format_exc(limit=3)})


def run_experiment(manifest: Manifest, out_dir=None, workers: int = 1, figures: bool = True) -> ExperimentResult:
    """Run every job, write ``records.jsonl``, ``summary.csv`` and ``metrics.json``."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    frame_root = str(out / "frames") if (out is not None and manifest.dump_frames) else None
    args = [(arm, tc, seed, manifest.run_config(arm), frame_root) for arm, tc, seed in manifest.jobs()]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_job, args))
    else:
        records = [_job(a) for a in args]
    reports = summarise(records)
    if out is not None:
        write_records(records, out / "records.jsonl")
        write_summary(reports, out / "summary.csv")
        (out / "metrics.json").write_text(json.dumps(
            {f"{a}/tier{t}": r.to_dict() for (a, t), r in reports.items()}, indent=2, sort_keys=True))
        if figures:
            render_report(records, reports, out)
    return ExperimentResult(records, reports, out)


def summarise(records) -> dict:
    cells: dict = {}
    for r in records:
        cells.setdefault((r.arm, r.tier), []).append(r)
    return {k: compute_metrics(v) for k, v in sorted(cells.items(), key=lambda kv: (kv[0][1], kv[0][0]))}


def write_records(records, path, wall_clock: bool = True) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(wall_clock=wall_clock), sort_keys=True) + "\n")


def read_records(path) -> list[RolloutRecord]:
    with open(path) as fh:
        return [RolloutRecord.from_dict(json.loads(line)) for line in fh if line.strip()]


def write_summary(reports: dict, path) -> None:
    """One column per (arm, tier) cell, rows in the results-table layout."""
    keys = list(reports)
    k_max = max(r.k_max for r in reports.values())
    labels = []
    for r in reports.values():
        if r.k_max == k_max:
            labels = [lab for lab, _ in r.rows()]
            break
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + [f"tier {t} {a}" for a, t in keys])
        vals = [dict(reports[k].rows()) for k in keys]
        for lab in labels:
            w.writerow([lab] + [v.get(lab, "-") for v in vals])
