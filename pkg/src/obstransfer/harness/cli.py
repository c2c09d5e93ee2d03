"""``obstransfer`` command line entry point.

Exit codes: 0 success, 1 configuration, usage or input-file error, 2 runtime failure,
3 a theory, gradient or environment check failed.
"""
from __future__ import annotations

import argparse
import sys
import time
from typing import Sequence

import numpy as np

from obstransfer.harness.config import ConfigError, ExperimentConfig, parse_config
from obstransfer.harness.suite import SOURCE, SuiteError, run_suite
from obstransfer.theory.mdp import MDPFormatError
from obstransfer.transfer import BASELINES, NEEDS_CKPT

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit 2, which we reserve for runtime failures
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value experiment file")
    common.add_argument("--seed", type=int, help="run only this seed")
    common.add_argument("--out", help="output directory (overrides io.out_dir)")

    p = _Parser(prog="obstransfer",
                description="Transfer across observation spaces with latent dynamics models.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.add_parser("train-source", parents=[common],
                   help="source task: agent plus latent model, writes checkpoints")
    sub.add_parser("train-target", parents=[common],
                   help="target task regularized by a frozen source latent model")
    b = sub.add_parser("baseline", parents=[common], help="run a baseline or ablation")
    b.add_argument("--name", choices=BASELINES, help="overrides run.baseline")
    t = sub.add_parser("theory-check", parents=[common],
                       help="verify bounds on random or file-given tabular instances")
    t.add_argument("--random", type=int, metavar="N", help="N random instances per check")
    t.add_argument("--mdp", help="MDP file (header 'S A gamma')")
    t.add_argument("--phi", help="representation file (S rows of d floats)")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    v = sub.add_parser("validate-env", parents=[common],
                       help="check target faces commute with the source face under f")
    v.add_argument("--pairs", type=int, default=1000)
    return p


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise UsageError("--config is required for this command")
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seeds([args.seed])
    return cfg


def _train(args, mode: str | None) -> int:
    cfg = _load(args)
    if mode is None:
        mode = args.name or cfg.baseline
    if mode in NEEDS_CKPT and not cfg.in_ckpt:
        raise ConfigError(f"io.in_ckpt: required by {mode}")
    t0 = time.perf_counter()
    result = run_suite(cfg, mode, out_dir=args.out)
    for s, auc in sorted(result.aucs.items()):
        final = result.seed_rows[s][-1]["eval_return_mean"] if result.seed_rows[s] else float("nan")
        print(f"seed {s}: auc {auc:.4f}  final return {final:.4f}")
    print(f"{mode}: {len(result.seed_rows)} seed(s) in {time.perf_counter() - t0:.1f}s; "
          f"aggregate at {result.aggregate_path}")
    return EXIT_OK


def _cmd_train_target(args) -> int:
    cfg = _load(args)
    if "run.baseline" in cfg.source_lines and cfg.baseline != "transfer":
        raise ConfigError(f"run.baseline (line {cfg.source_lines['run.baseline']}): "
                          f"train-target runs 'transfer', config says {cfg.baseline!r}; "
                          "use the baseline command instead")
    return _train(args, "transfer")


def _print_table(rows: list[list[str]]) -> None:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    for r in rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())


def _cmd_theory(args) -> int:
    from obstransfer.theory import checks
    from obstransfer.theory.latent import fit_latent
    from obstransfer.theory.mdp import load_mdp, load_repmap

    if args.mdp or args.phi:
        if not (args.mdp and args.phi):
            raise UsageError("--mdp and --phi go together")
        if args.random is not None:
            raise UsageError("use either --random or --mdp/--phi")
        M = load_mdp(args.mdp)
        Phi = load_repmap(args.phi, M.num_states)
        latent = fit_latent(M, Phi)
        rows = [["check", "holds", "detail"]]
        ok = True
        lem = checks.check_lemma1(M, Phi)
        rows.append(["lemma1", str(lem.holds),
                     f"gap {lem.observed_gap:.6g} <= {lem.bound:.6g} (eps {lem.eps:.6g})"])
        ok &= lem.holds
        th = checks.check_thm1(M, Phi, latent)
        judged = th.holds if th.deterministic else "n/a"
        rows.append(["thm1", str(judged),
                     f"gap {th.observed_gap:.6g}, bound {th.bound:.6g}, K {th.K_phi_V:.6g}"
                     + ("" if th.deterministic else " (stochastic: reported only)")])
        ok &= th.holds or not th.deterministic
        if (M.R >= 0).all():
            av = checks.check_avi(M, Phi, latent)
            rows.append(["avi", str(av.holds),
                         f"gap {av.final_gap:.6g} <= {av.bound:.6g}, "
                         f"max step {max(av.step_errors):.6g} <= {av.step_bound:.6g}"])
            ok &= av.holds
        if np.linalg.matrix_rank(Phi) == Phi.shape[1]:
            p2 = checks.check_prop2(M, Phi)
            rows.append(["prop2", str(p2.holds),
                         f"{sum(p.constraints_hold for p in p2.policies)}/{len(p2.policies)} "
                         "policies meet the constraints"])
            ok &= p2.holds
        _print_table(rows)
        return EXIT_OK if ok else EXIT_CHECK

    n = 100 if args.random is None else args.random
    if n < 1:
        raise UsageError("--random must be positive")
    seed = 0 if args.seed is None else args.seed
    t0 = time.perf_counter()
    results = checks.run_batteries(n, seed)
    rows = [["check", "passed", "total", "failures"]]
    for r in results:
        rows.append([r.name, str(r.passed), str(r.total), ",".join(map(str, r.failures)) or "-"])
    _print_table(rows)
    print(f"seed {seed}, {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if all(r.ok for r in results) else EXIT_CHECK


def _cmd_gradcheck(args) -> int:
    from obstransfer.harness.gradsuite import TOLERANCE, run_gradcheck, stopgrad_zero_path

    cases = run_gradcheck(0 if args.seed is None else args.seed)
    rows = [["case", "max_rel_error", "ok"]]
    rows += [[c.name, f"{c.max_rel_error:.3e}", str(c.passed)] for c in cases]
    leak = stopgrad_zero_path()
    rows.append(["stopgrad_zero_path", f"{leak:.3e}", str(leak == 0.0)])
    _print_table(rows)
    print(f"tolerance {TOLERANCE:g}")
    return EXIT_OK if all(c.passed for c in cases) and leak == 0.0 else EXIT_CHECK


def _cmd_validate(args) -> int:
    from obstransfer.envs.validate import validate_builtin

    reports = validate_builtin(args.pairs, 0 if args.seed is None else args.seed)
    for r in reports:
        print(f"{r.name}: {r.pairs} pairs, {len(r.failures)} failures")
        for msg in r.failures[:5]:
            print(f"  {msg}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


COMMANDS = {
    "train-source": lambda a: _train(a, SOURCE),
    "train-target": _cmd_train_target,
    "baseline": lambda a: _train(a, None),
    "theory-check": _cmd_theory,
    "gradcheck": _cmd_gradcheck,
    "validate-env": _cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().rstrip() + "\nobstransfer: error: no command given")
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, MDPFormatError) as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SuiteError as exc:
        print(exc, file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
