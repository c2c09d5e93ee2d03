"""Multi-seed experiment runs and their aggregate learning-curve table."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from obstransfer.harness.config import ExperimentConfig
from obstransfer.transfer import (METRICS_FILE, learning_curve_auc, read_metrics, run,
                                  run_source)

AGGREGATE_FILE = "aggregate.csv"
THREADS_ENV = "OBSTRANSFER_THREADS"
SOURCE = "source"


class SuiteError(RuntimeError):
    """One or more seeds failed; ``status`` maps seed -> 'ok' or the error."""

    def __init__(self, status: dict[int, str]):
        self.status = status
        lines = [f"  seed {s}: {msg}" for s, msg in sorted(status.items())]
        super().__init__("suite aborted:\n" + "\n".join(lines))


@dataclass
class SuiteResult:
    out_dir: Path
    seed_rows: dict[int, list[dict]]
    aggregate_path: Path
    status: dict[int, str] = field(default_factory=dict)

    @property
    def aucs(self) -> dict[int, float]:
        return {s: learning_curve_auc(rows) for s, rows in self.seed_rows.items()}


def seed_dir(out_dir: str | Path, seed: int) -> Path:
    return Path(out_dir) / f"seed_{seed}"


def seed_ckpt(in_ckpt: str | None, seed: int) -> str | None:
    """Pair target seed s with source seed s when the checkpoint root holds
    per-seed directories; otherwise every seed shares ``in_ckpt``."""
    if in_ckpt is None:
        return None
    paired = seed_dir(in_ckpt, seed)
    return str(paired) if paired.is_dir() else in_ckpt


def thread_count(default: int = 1) -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def _run_one(cfg: ExperimentConfig, mode: str, seed: int, out_dir: str) -> list[dict]:
    target = str(seed_dir(out_dir, seed))
    if mode == SOURCE:
        spec = cfg.run_spec(seed, baseline="single", out_dir=target)
        return run_source(spec).rows
    spec = cfg.run_spec(seed, baseline=mode, out_dir=target,
                        in_ckpt=seed_ckpt(cfg.in_ckpt, seed))
    return run(spec).rows


def aggregate_rows(seed_rows: dict[int, list[dict]]) -> list[list[str]]:
    """Header ``step,mean,std,seed_<s>...`` then one row per eval step and a
    final ``auc`` row (sum of each curve; mean/std across seeds)."""
    seeds = sorted(seed_rows)
    steps = [r["step"] for r in seed_rows[seeds[0]]]
    for s in seeds:
        if [r["step"] for r in seed_rows[s]] != steps:
            raise ValueError(f"seed {s} evaluated at different steps")
    table = [["step", "mean", "std"] + [f"seed_{s}" for s in seeds]]
    for i, step in enumerate(steps):
        vals = np.array([seed_rows[s][i]["eval_return_mean"] for s in seeds])
        table.append([str(step), repr(float(vals.mean())), repr(float(vals.std()))]
                     + [repr(float(v)) for v in vals])
    aucs = np.array([learning_curve_auc(seed_rows[s]) for s in seeds])
    table.append(["auc", repr(float(aucs.mean())), repr(float(aucs.std()))]
                 + [repr(float(a)) for a in aucs])
    return table


def write_aggregate(path: Path, seed_rows: dict[int, list[dict]]) -> Path:
    text = "\n".join(",".join(r) for r in aggregate_rows(seed_rows)) + "\n"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def read_aggregate(path: str | Path) -> list[list[str]]:
    return [ln.split(",") for ln in Path(path).read_text(encoding="utf-8").splitlines()]


def run_suite(cfg: ExperimentConfig, mode: str | None = None, out_dir: str | Path | None = None,
              threads: int | None = None) -> SuiteResult:
    """Run every seed of ``cfg``; ``mode`` is 'source' or a baseline name
    (default: the configured baseline)."""
    mode = mode or cfg.baseline
    out = out_dir or cfg.out_dir
    if out is None:
        raise ValueError("run_suite needs an output directory (io.out_dir or --out)")
    out = Path(out)
    threads = thread_count() if threads is None else threads
    status: dict[int, str] = {}
    seed_rows: dict[int, list[dict]] = {}
    if threads > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(cfg.seeds))) as pool:
            futures = {s: pool.submit(_run_one, cfg, mode, s, str(out)) for s in cfg.seeds}
            for s, fut in futures.items():
                try:
                    seed_rows[s] = fut.result()
                    status[s] = "ok"
                except Exception as exc:  # noqa: BLE001 - reported per seed
                    status[s] = f"{type(exc).__name__}: {exc}"
    else:
        for s in cfg.seeds:
            try:
                seed_rows[s] = _run_one(cfg, mode, s, str(out))
                status[s] = "ok"
            except Exception as exc:  # noqa: BLE001
                status[s] = f"{type(exc).__name__}: {exc}"
                break
        for s in cfg.seeds:
            status.setdefault(s, "not run")
    if any(v != "ok" for v in status.values()):
        raise SuiteError(status)
    # reread from disk so the aggregate reflects exactly what was written
    seed_rows = {s: read_metrics(seed_dir(out, s) / METRICS_FILE) for s in cfg.seeds}
    agg = write_aggregate(out / AGGREGATE_FILE, seed_rows)
    return SuiteResult(out, seed_rows, agg, status)
