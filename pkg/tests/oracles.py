"""Independent reference computations shared by the bench and acceptance tests."""

from __future__ import annotations

import json
import statistics

import numpy as np

from tanglesim.bench.rollout import Outcome, RolloutRecord, classify_outcome
from tanglesim.policy import StepRecord

ACTION_POOL = ["CagePinchDilation", "PartialCagePinchDilation", "Reidemeister", "Exposure",
               "IncrementalReidemeister"]


def synthetic_records(n: int, seed: int) -> list[RolloutRecord]:
    """Random but well-formed step logs: clocks rise, knots mostly fall, Done ends a log."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k0 = int(rng.integers(1, 4))
        k, clock, steps = k0, 0.0, []
        for j in range(int(rng.integers(1, 25))):
            clock += float(rng.choice([10.0, 30.0, 45.0, 55.0, 90.0]))
            action = str(rng.choice(ACTION_POOL))
            events = []
            u = rng.random()
            if k > 0 and u < 0.3:
                k -= 1
                events.append("KnotRemoved(0.4)")
            elif u > 0.95:
                k += 1
                events.append("KnotTightened(0.4:3.10)")
            steps.append(StepRecord(j, action, 0.0, events, k, {}, clock))
            if clock >= 900.0:
                break
            if rng.random() < 0.12:
                steps.append(StepRecord(j + 1, "Done", 0.0, [], k, {}, clock))
                break
        lost = bool(rng.random() < 0.1)
        outcome, done = classify_outcome(steps, lost)
        out.append(RolloutRecord(i, int(rng.integers(1, 4)), "synthetic", steps, k0, done, outcome,
                                 lost=lost, arm="default"))
    return out


def brute_metrics(records, t_max: float = 900.0) -> dict:
    """Metrics recomputed from the raw JSON step logs with plain Python."""
    logs = [json.loads(json.dumps(r.to_dict())) for r in records]
    n = len(logs)
    k_max = max(d["k0"] for d in logs)
    out = {"n": n, "success": {}, "times": {}}
    for K in range(1, k_max + 1):
        hits = []
        for d in logs:
            ts = [s["sim_clock"] for s in d["steps"] if s["sim_clock"] < t_max and s["k_t"] <= d["k0"] - K]
            if d["k0"] >= K and ts:
                hits.append(min(ts))
        out["success"][K] = len(hits)
        out["times"][K] = (statistics.fmean(hits) if hits else None,
                           statistics.stdev(hits) if len(hits) > 1 else None)
    vt, acts = [], []
    for d in logs:
        dones = [s for s in d["steps"] if s["action"] == "Done"]
        if dones and dones[0]["k_t"] == 0 and dones[0]["sim_clock"] < t_max:
            vt.append(dones[0]["sim_clock"])
            acts.append(sum(1 for s in d["steps"] if s["action"] not in ("Done", "TimedOut")))
    out["verified"] = len(vt)
    out["vtime"] = (statistics.fmean(vt) if vt else None, statistics.stdev(vt) if len(vt) > 1 else None)
    out["actions"] = (statistics.fmean(acts) if acts else None,
                      statistics.stdev(acts) if len(acts) > 1 else None)
    out["failures"] = {o.value: sum(1 for d in logs if d["outcome"] == o.value) for o in Outcome}
    return out


def report_matches(rep, ref) -> bool:
    """Counts and means must agree exactly; sample sds to float rounding (summation order differs)."""
    def same(ms, pair):
        mean, sd = pair
        if ms.mean != mean:
            return False
        if ms.sd is None or sd is None:
            return ms.sd is sd
        return abs(ms.sd - sd) <= 1e-12 * max(abs(sd), 1.0)
    return (rep.n == ref["n"] and rep.success_counts == ref["success"]
            and rep.verification_count == ref["verified"] and rep.failures == ref["failures"]
            and all(same(rep.knot_times[k], ref["times"][k]) for k in ref["times"])
            and same(rep.verification_time, ref["vtime"]) and same(rep.actions, ref["actions"]))
