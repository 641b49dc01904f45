"""One seeded end-to-end untangling rollout and its outcome classification."""

from __future__ import annotations

import enum
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..cable import knots_of
from ..config import ConfigInvalid, RunConfig
from ..generate import generate_initial_state
from ..policy import TIMED_OUT, Done, StepRecord, step

MAX_STEPS = 400


class Outcome(str, enum.Enum):
    SUCCESS = "Success"
    FAILURE_A = "FailureA"  # timed out
    FAILURE_B = "FailureB"  # cable left the workspace
    FAILURE_C = "FailureC"  # declared done with a knot left


@dataclass(frozen=True)
class TierConfig:
    tier: int
    variants: tuple | None = None
    placements: tuple | None = None
    kinds: tuple | None = None

    def validate(self) -> "TierConfig":
        if self.tier not in (1, 2, 3):
            raise ConfigInvalid(f"tier must be 1, 2 or 3, got {self.tier!r}")
        for lst in (self.variants, self.placements, self.kinds):
            if lst is not None and len(lst) != self.tier:
                raise ConfigInvalid("variants, placements and kinds need one entry per knot")
        return self


@dataclass
class RolloutRecord:
    seed: int
    tier: int
    config_hash: str
    steps: list
    k0: int
    done_time: float | None
    outcome: Outcome
    wall_clock: float = 0.0
    arm: str = ""
    variants: tuple = ()
    placements: tuple = ()
    lost: bool = False
    error: str | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self, wall_clock: bool = True) -> dict:
        d = {"seed": self.seed, "tier": self.tier, "arm": self.arm, "config_hash": self.config_hash,
             "variants": list(self.variants), "placements": list(self.placements), "k0": self.k0,
             "done_time": self.done_time, "outcome": self.outcome.value, "lost": self.lost,
             "error": self.error, "meta": self.meta, "steps": [s.to_dict() for s in self.steps]}
        if wall_clock:
            d["wall_clock"] = self.wall_clock
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RolloutRecord":
        return cls(d["seed"], d["tier"], d["config_hash"], [StepRecord.from_dict(s) for s in d["steps"]],
                   d["k0"], d["done_time"], Outcome(d["outcome"]), d.get("wall_clock", 0.0),
                   d.get("arm", ""), tuple(d.get("variants", ())), tuple(d.get("placements", ())),
                   d.get("lost", False), d.get("error"), dict(d.get("meta", {})))

    def digest(self) -> str:
        text = json.dumps(self.to_dict(wall_clock=False), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def n_actions(self) -> int:
        return sum(1 for s in self.steps if s.action not in (Done.name, TIMED_OUT))


def classify_outcome(steps, lost: bool) -> tuple[Outcome, float | None]:
    """Outcome and the Done time, if any, from a rollout's step log."""
    for s in steps:
        if s.action == Done.name:
            return (Outcome.FAILURE_C if s.k_t > 0 else Outcome.SUCCESS), s.sim_clock
    if lost:
        return Outcome.FAILURE_B, None
    return Outcome.FAILURE_A, None


def rollout_rng(seed: int, tier: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(tier), 0x5EED])


def run_rollout(tier_config: TierConfig, run: RunConfig, seed: int, arm: str = "",
                frame_dir=None) -> RolloutRecord:
    """Generate the seeded tier state and step the policy until Done, timeout or loss."""
    tier_config.validate()
    run.validate()
    t0 = time.perf_counter()
    state = generate_initial_state(tier_config.tier, tier_config.variants, tier_config.placements,
                                   rng_seed=seed, kinds=tier_config.kinds, kink_prob=run.kink_prob)
    k0 = len(knots_of(state))
    rng = rollout_rng(seed, tier_config.tier)
    if frame_dir is not None:
        frame_dir = Path(frame_dir)
        frame_dir.mkdir(parents=True, exist_ok=True)
    steps: list[StepRecord] = []
    prev = None
    for i in range(MAX_STEPS):
        state, rec = step(state, run, rng, prev, i, frame_dir)
        steps.append(rec)
        prev = rec
        if rec.action in (Done.name, TIMED_OUT) or state.lost:
            break
    outcome, done_time = classify_outcome(steps, state.lost)
    return RolloutRecord(int(seed), tier_config.tier, run.hash(), steps, k0, done_time, outcome,
                         time.perf_counter() - t0, arm, tuple(tier_config.variants or ()),
                         tuple(tier_config.placements or ()), bool(state.lost))
