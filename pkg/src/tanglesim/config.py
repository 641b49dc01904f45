"""Run configuration: every tunable constant, serialised as human-readable JSON."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, replace

from .acts import ActsConfig, Durations
from .percept.detect import DetectorConfig
from .percept.ensemble import MemberConfig
from .percept.trace import TraceConfig
from .policy import PolicyConfig

SEED_ENV = "TANGLESIM_SEED"


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    detector: DetectorConfig = DetectorConfig()
    trace: TraceConfig = TraceConfig()
    member: MemberConfig = MemberConfig()
    acts: ActsConfig = ActsConfig()
    policy: PolicyConfig = PolicyConfig()
    t_max_s: float = 900.0
    kink_prob: float = 0.3

    def validate(self) -> "RunConfig":
        if self.t_max_s <= 0:
            raise ConfigInvalid("t_max_s must be positive")
        if not 0.0 <= self.policy.kappa <= 1.0:
            raise ConfigInvalid("kappa must lie in [0, 1]")
        if self.policy.ensemble_size < 1 or self.policy.waypoint_views < 1:
            raise ConfigInvalid("ensemble size and waypoint views must be at least 1")
        if self.acts.waypoints < self.policy.waypoint_views:
            raise ConfigInvalid("waypoint views cannot exceed the number of waypoints")
        for name in ("endpoint_precision", "knot_recall", "tight_knot_recall",
                     "kink_false_positive", "slack_false_positive"):
            v = getattr(self.detector, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigInvalid(f"detector.{name} must lie in [0, 1]")
        if self.detector.endpoint_precision <= 0:
            raise ConfigInvalid("endpoint precision must be positive")
        return self

    # variants -----------------------------------------------------------
    def ablated(self) -> "RunConfig":
        """All uncertainty mechanisms off together."""
        return replace(self, policy=replace(self.policy, uncertainty_enabled=False))

    def noise_off(self) -> "RunConfig":
        """Perfect detectors, noise-free score fields, no random mishaps."""
        return replace(
            self,
            detector=replace(self.detector, noise=False),
            member=replace(self.member, a_base=0.0, occlusion_gain=0.0, tight_gain=0.0),
            acts=replace(self.acts, grasp_miss=0.0, grasp_miss_false_endpoint=0.0,
                         exposure_slip=0.0, spill=0.0),
        )

    def with_kappa(self, kappa: float) -> "RunConfig":
        return replace(self, policy=replace(self.policy, kappa=float(kappa)))

    # serialisation --------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        try:
            return _build(cls, doc).validate()
        except (TypeError, KeyError) as exc:
            raise ConfigInvalid(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_json(fh.read())


_NESTED = {"detector": DetectorConfig, "trace": TraceConfig, "member": MemberConfig,
           "acts": ActsConfig, "policy": PolicyConfig, "durations": Durations}


def _build(cls, doc: dict):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigInvalid(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = {}
    for k, v in doc.items():
        if k in _NESTED and isinstance(v, dict):
            kw[k] = _build(_NESTED[k], v)
        elif isinstance(v, list):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    return cls(**kw)


def default_seed(fallback: int = 0) -> int:
    """The default rollout seed, overridable through the environment."""
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return fallback
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"{SEED_ENV} must be an integer, got {raw!r}") from exc
