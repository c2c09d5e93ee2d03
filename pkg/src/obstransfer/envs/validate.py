"""Pointwise check that a target face commutes with its source face under f.

For deterministic environments Assumption-1 style equalities reduce to:
decode the target observation with ``f``, step both faces with the same
action, and demand identical decoded next observations, rewards and done
flags. ``f`` is an oracle available to tests only, never to agents.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from obstransfer.envs.core import Env


@dataclass
class CommutationReport:
    name: str
    pairs: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.pairs > 0 and not self.failures


def check_commutation(name: str, source: Env, target: Env, f: Callable[[np.ndarray], np.ndarray],
                      n_pairs: int = 1000, seed: int = 0, min_history: int = 0,
                      max_warmup: int = 30) -> CommutationReport:
    """Sample reachable target states, then compare one step in both faces.

    ``min_history`` warm-up steps are forced so stacked faces have real
    frames behind the decoded one. The hidden episode clock is copied
    across; it is not part of either observation.
    """
    rng = np.random.default_rng(seed)
    report = CommutationReport(name)
    while report.pairs < n_pairs:
        obs = target.reset(int(rng.integers(2**31)))
        warm = int(rng.integers(min_history, max_warmup + 1))
        alive = True
        for _ in range(warm):
            tr = target.step(int(rng.integers(target.num_actions)))
            obs = tr.next_obs
            if tr.done:
                alive = False
                break
        if not alive:
            continue
        src_obs = f(obs)
        try:
            source.set_from_vector(src_obs, steps_taken=target.steps_taken)
        except ValueError as exc:
            report.failures.append(f"pair {report.pairs}: f gives no valid source state ({exc})")
            report.pairs += 1
            continue
        if not np.array_equal(source.observe(), src_obs):
            report.failures.append(f"pair {report.pairs}: decoded state does not round-trip")
        a = int(rng.integers(target.num_actions))
        tt = target.step(a)
        ts = source.step(a)
        if not np.array_equal(f(tt.next_obs), ts.next_obs):
            report.failures.append(f"pair {report.pairs}: next observation mismatch")
        if tt.reward != ts.reward:
            report.failures.append(f"pair {report.pairs}: reward {tt.reward} != {ts.reward}")
        if tt.done != ts.done:
            report.failures.append(f"pair {report.pairs}: done {tt.done} != {ts.done}")
        report.pairs += 1
    return report


def validate_builtin(n_pairs: int = 1000, seed: int = 0) -> list[CommutationReport]:
    """Run the commutation check on every dual-face built-in pairing."""
    from obstransfer.envs import make_env

    reports = []
    src = make_env("gridmaze", "vector")
    tgt = make_env("gridmaze", "pixel")
    reports.append(check_commutation("gridmaze vector/pixel", src, tgt, tgt.observation_map_f,
                                     n_pairs, seed))
    src = make_env("gridmaze", "vector")
    tgt = make_env("gridmaze", "stacked")
    reports.append(check_commutation("gridmaze vector/stacked", src, tgt, tgt.observation_map_f,
                                     n_pairs, seed, min_history=0))
    src = make_env("cartpole", "vector")
    tgt = make_env("cartpole", "stacked")
    reports.append(check_commutation("cartpole vector/broken-sensor", src, tgt,
                                     tgt.observation_map_f, n_pairs, seed,
                                     min_history=tgt.stack_depth - 1))
    return reports
