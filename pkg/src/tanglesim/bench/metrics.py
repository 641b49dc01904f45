"""Success, verification and timing metrics over a set of rollout records."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..policy import Done
from .rollout import Outcome, RolloutRecord

T_MAX_S = 900.0


class EmptyInput(ValueError):
    pass


@dataclass(frozen=True)
class MeanSd:
    n: int
    mean: float | None
    sd: float | None  # sample sd, None below two values

    @classmethod
    def of(cls, values) -> "MeanSd":
        v = np.asarray(list(values), float)
        if v.size == 0:
            return cls(0, None, None)
        sd = float(np.std(v, ddof=1)) if v.size > 1 else None
        return cls(int(v.size), float(v.mean()), sd)

    def fmt(self, digits: int = 1) -> str:
        if self.mean is None:
            return "N/A"
        if self.sd is None:
            return f"{self.mean:.{digits}f}"
        return f"{self.mean:.{digits}f}±{self.sd:.{digits}f}"


@dataclass(frozen=True)
class MetricsReport:
    n: int
    k_max: int
    success_counts: dict  # K -> rollouts that removed at least K knots in time
    verification_count: int
    knot_times: dict  # K -> MeanSd of the first time K knots were gone
    verification_time: MeanSd
    failures: dict  # outcome name -> count
    actions: MeanSd  # over verified rollouts

    @property
    def success_rates(self) -> dict:
        return {k: c / self.n for k, c in self.success_counts.items()}

    @property
    def verification_rate(self) -> float:
        return self.verification_count / self.n

    def rows(self) -> list[tuple[str, str]]:
        """Table rows as ``(label, value)`` pairs."""
        out = []
        for k in range(1, self.k_max + 1):
            out.append((f"Knot {k} Success Rate", f"{self.success_counts[k]}/{self.n}"))
        out.append(("Verification Rate", f"{self.verification_count}/{self.n}"))
        out.append(("Avg. # of Actions", self.actions.fmt()))
        for k in range(1, self.k_max + 1):
            out.append((f"Avg. Knot {k} Time (s)", self.knot_times[k].fmt()))
        out.append(("Avg. Verif. Time (s)", self.verification_time.fmt()))
        f = self.failures
        out.append(("Failures", ", ".join(f"({o.value[-1]}) {f[o.value]}" for o in Outcome
                                          if o is not Outcome.SUCCESS)))
        return out

    def to_dict(self) -> dict:
        def ms(m: MeanSd):
            return {"n": m.n, "mean": m.mean, "sd": m.sd}
        return {"n": self.n, "k_max": self.k_max,
                "success_counts": {str(k): v for k, v in self.success_counts.items()},
                "verification_count": self.verification_count,
                "knot_times": {str(k): ms(v) for k, v in self.knot_times.items()},
                "verification_time": ms(self.verification_time),
                "failures": dict(self.failures), "actions": ms(self.actions)}


def first_time_removed(record: RolloutRecord, k: int, t_max: float = T_MAX_S) -> float | None:
    """Earliest sim time with ``k_t <= k0 - k``, before ``t_max``."""
    target = record.k0 - k
    if target < 0:
        return None
    for s in record.steps:
        if s.sim_clock < t_max and s.k_t <= target:
            return float(s.sim_clock)
    return None


def verification_time(record: RolloutRecord, t_max: float = T_MAX_S) -> float | None:
    for s in record.steps:
        if s.action == Done.name:
            return float(s.sim_clock) if s.k_t == 0 and s.sim_clock < t_max else None
    return None


def compute_metrics(records, t_max: float = T_MAX_S) -> MetricsReport:
    records = list(records)
    if not records:
        raise EmptyInput("compute_metrics needs at least one record")
    n = len(records)
    k_max = max(r.k0 for r in records)
    counts, times = {}, {}
    for k in range(1, k_max + 1):
        ts = [t for t in (first_time_removed(r, k, t_max) for r in records) if t is not None]
        counts[k] = len(ts)
        times[k] = MeanSd.of(ts)
    verified = [(r, t) for r, t in ((r, verification_time(r, t_max)) for r in records) if t is not None]
    failures = {o.value: 0 for o in Outcome}
    for r in records:
        failures[r.outcome.value] += 1
    return MetricsReport(n, k_max, counts, len(verified), times,
                         MeanSd.of(t for _, t in verified), failures,
                         MeanSd.of(r.n_actions for r, _ in verified))
