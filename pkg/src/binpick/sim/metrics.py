"""Batch execution and SR / TT / CR aggregation."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from binpick.kinematics import KinematicChain
from binpick.mlp import MlpModel
from binpick.sim.scenario import Scenario
from binpick.sim.trial import StackConfig, TrialResult, run_trial


@dataclass(frozen=True)
class Summary:
    """Percentages for SR and CR; TT statistics over successful trials only."""

    trials: int
    successes: int
    collisions: int
    tt_mean: float
    tt_std: float

    @property
    def sr(self) -> float:
        return 100.0 * self.successes / self.trials if self.trials else float("nan")

    @property
    def cr(self) -> float:
        return 100.0 * self.collisions / self.trials if self.trials else float("nan")


def summarize(results: list[TrialResult]) -> Summary:
    times = np.array([r.total_time for r in results if r.success])
    return Summary(
        trials=len(results),
        successes=int(sum(r.success for r in results)),
        collisions=int(sum(r.collision for r in results)),
        tt_mean=float(times.mean()) if len(times) else float("nan"),
        tt_std=float(times.std()) if len(times) else float("nan"),
    )


def _run_one(args) -> TrialResult:
    scenario, stack, seed, idx, chain, model = args
    return run_trial(scenario, stack, seed, idx, chain=chain, model=model)


def run_batch(scenario: Scenario, stack: StackConfig, trials: int, seed: int = 0,
              workers: int = 1, *, chain: KinematicChain | None = None,
              model: MlpModel | None = None) -> list[TrialResult]:
    """Trials ``0 .. trials-1``; each derives its own streams from ``(seed, index)``.

    Results come back ordered by trial index whatever the worker count.
    """
    if trials < 1:
        raise ValueError("trial count must be at least 1")
    jobs = [(scenario, stack, seed, i, chain, model) for i in range(trials)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def result_from_trace(text: str) -> tuple[bool, bool, float]:
    """Recover ``(success, collision, total_time)`` from an exported trace."""
    for line in reversed(text.splitlines()):
        parts = line.split()
        if len(parts) >= 2 and parts[1] == "result":
            kv = dict(p.split("=", 1) for p in parts[2:])
            return kv["success"] == "1", kv["collision"] == "1", float(kv["tt"])
    raise ValueError("trace has no result record")


def write_traces(results: list[TrialResult], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for r in results:
        p = out / f"{r.scenario}_{r.variant}_s{r.seed}_t{r.trial_index:03d}.trace"
        p.write_text(r.trace_text())
        paths.append(p)
    return paths
