"""Command-line entry point (``proposa``).

Every command prints a human-readable table or summary and then, as its last
line on stdout, one JSON object for scripts. Exit codes: 0 ok, 2 bad
configuration or input, 3 information-barrier violation, 4 evaluator or
proposer infrastructure failure (1 for a replay mismatch).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from statistics import mean
from typing import Optional

import yaml

from . import report
from .acceptance import calibrate_t0, sa_accept_probability
from .core import LEDGER_SUFFIX, format_hash, hash_artifact, json_canonical, read_ledger, write_ledger
from .errors import ConfigError, ProposaError
from .loop import LoopConfig, Run, replay
from .proposers import build_proposer
from .rng import derive_seed
from .tasks import build_task

log = logging.getLogger("proposa")

OUT_ENV = "PROPOSA_OUT_DIR"
DEFAULT_OUT = "runs"
LOOP_KEYS = ("strategy", "round_budget", "attempt_limit", "skip_limit", "schedule", "t0", "gamma",
             "investigators", "directives", "rng_seed", "comparison_precision")
BUILTIN_VARIANTS = ("greedy", "sa", "parallel")
DEFAULT_INVESTIGATORS = 3


def emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def out_root(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)


# -- config ------------------------------------------------------------------


def load_config(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        config = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid JSON/YAML: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return config, path.resolve().parent


def _resolve_task(desc, base_dir: Path) -> dict:
    """Absolute data paths, so the ledger snapshot can be replayed from anywhere."""
    if not isinstance(desc, dict):
        raise ConfigError("task: missing or not an object")
    desc = dict(desc)
    if desc.get("kind") == "rules" and "csv" in desc:
        p = Path(desc["csv"])
        desc["csv"] = str(p if p.is_absolute() else (base_dir / p).resolve())
    return desc


def _seed_text(config: dict, base_dir: Path) -> str:
    seed = config.get("seed_artifact")
    if isinstance(seed, str):
        seed = {"path": seed}
    if not isinstance(seed, dict) or not ("path" in seed or "body" in seed):
        raise ConfigError("seed_artifact: expected {path: ...} or {body: ...}")
    if "body" in seed:
        return seed["body"]
    p = Path(seed["path"])
    p = p if p.is_absolute() else base_dir / p
    try:
        return p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"seed_artifact.path: cannot read {p}: {exc.strerror}") from None


def _build_proposers(desc, investigators: int):
    if isinstance(desc, list):
        return [build_proposer(d) for d in desc], desc
    if not isinstance(desc, dict):
        raise ConfigError("proposer: missing or not an object")
    p = build_proposer(desc)
    return [p] * investigators, desc


def run_id_for(config: dict) -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    return f"{stamp}-{format_hash(hash_artifact(json_canonical(config)))[:8]}"


def execute(config: dict, base_dir: Path, ledger_path: Path):
    """Run one config to termination and write its ledger (also on abort).

    Returns the ledger; re-raises run-ending errors after the partial ledger
    has been written.
    """
    loop_config = LoopConfig.from_dict({k: config[k] for k in LOOP_KEYS if k in config})
    task_desc = _resolve_task(config.get("task"), base_dir)
    task = build_task(task_desc, base_dir)
    proposers, proposer_desc = _build_proposers(config.get("proposer"), loop_config.investigators)
    seed = task.parse(_seed_text(config, base_dir))
    run = Run(task, proposers, loop_config, seed, task_desc=task.describe(), proposer_desc=proposer_desc)
    try:
        run.run()
    except ProposaError:
        write_ledger(ledger_path, run.ledger)
        raise
    write_ledger(ledger_path, run.ledger)
    return run.ledger


# -- commands ----------------------------------------------------------------


def cmd_run(args) -> int:
    config, base_dir = load_config(args.config)
    if args.seed is not None:
        config["rng_seed"] = args.seed
    out = out_root(args.out or config.get("out"))
    run_id = run_id_for(config)
    path = out / f"{run_id}{LEDGER_SUFFIX}"
    ledger = execute(config, base_dir, path)
    summary = report.run_summary(ledger, run_id)
    print(report.markdown_table([summary], report.SUMMARY_COLUMNS))
    final = ledger.final_report
    print(f"validation {ledger.final_score.name}: {ledger.final_score.value:.6f}")
    print(f"test {final.primary.name}: {final.primary.value:.6f}")
    emit({
        "ok": True,
        "run_id": run_id,
        "ledger": str(path),
        "rounds": len(ledger.rounds),
        "evaluations": ledger.evaluations,
        "validation": {m.name: m.value for m in (ledger.final_score,)},
        "test": {m.name: m.value for m in final.metrics},
    })
    return 0


def variant_config(base: dict, variant: str) -> dict:
    """Base config with the strategy fields of ``variant`` swapped in.

    ``base["variants"][name]`` may override or define variants; the built-ins
    are ``greedy``, ``sa`` (needs a schedule in the base config) and
    ``parallel`` (``investigators`` defaults to 3, with generic directives).
    """
    cfg = {k: v for k, v in base.items() if k != "variants"}
    overrides = dict((base.get("variants") or {}).get(variant, {}))
    if variant == "greedy":
        cfg.update(strategy="greedy", investigators=1, directives=None)
    elif variant in ("sa", "simulated_annealing"):
        cfg.update(strategy="simulated_annealing", investigators=1, directives=None)
    elif variant == "parallel":
        k = base.get("investigators") if (base.get("investigators") or 1) > 1 else DEFAULT_INVESTIGATORS
        directives = base.get("directives")
        if not directives or len(directives) != k:
            directives = [f"investigator {i + 1}" for i in range(k)]
        cfg.update(strategy="parallel", investigators=k, directives=directives)
    elif not overrides:
        raise ConfigError(f"variants: unknown variant {variant!r}")
    cfg.update(overrides)
    return cfg


def _ablate_one(job):
    variant, index, config, base_dir, path = job
    try:
        ledger = execute(config, Path(base_dir), Path(path))
    except ProposaError as exc:
        return {"variant": variant, "index": index, "ledger": str(path), "ok": False, "error": str(exc)}
    return {
        "variant": variant,
        "index": index,
        "ledger": str(path),
        "ok": True,
        "best_score": ledger.best_score.value,
        "final_score": ledger.final_score.value,
        "evaluations": ledger.evaluations,
        "rounds": len(ledger.rounds),
    }


ABLATE_COLUMNS = ["variant", "runs", "failed", "mean_best", "best", "mean_final", "mean_evaluations",
                  "mean_rounds", "evals_per_round"]


def ablation_rows(results) -> list[dict]:
    rows = []
    for variant in dict.fromkeys(r["variant"] for r in results):
        rs = [r for r in results if r["variant"] == variant]
        ok = [r for r in rs if r["ok"]]
        row = {"variant": variant, "runs": len(rs), "failed": len(rs) - len(ok)}
        if ok:
            rounds = sum(r["rounds"] for r in ok)
            row.update(
                mean_best=mean(r["best_score"] for r in ok),
                best=max(r["best_score"] for r in ok),
                mean_final=mean(r["final_score"] for r in ok),
                mean_evaluations=mean(r["evaluations"] for r in ok),
                mean_rounds=mean(r["rounds"] for r in ok),
                evals_per_round=sum(r["evaluations"] for r in ok) / rounds if rounds else None,
            )
        rows.append(row)
    return rows


def cmd_ablate(args) -> int:
    base, base_dir = load_config(args.config)
    if args.seed is not None:
        base["rng_seed"] = args.seed
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise ConfigError("--variants: empty")
    if args.n_runs < 1:
        raise ConfigError("--n-runs: must be >= 1")
    master = int(base.get("rng_seed", 0))
    out = out_root(args.out or base.get("out"))
    jobs = []
    for variant in variants:
        vcfg = variant_config(base, variant)
        LoopConfig.from_dict({k: vcfg[k] for k in LOOP_KEYS if k in vcfg})  # fail fast on bad variants
        for j in range(args.n_runs):
            cfg = dict(vcfg, rng_seed=derive_seed(master, j))  # same seeds across variants
            jobs.append((variant, j, cfg, str(base_dir), str(out / f"{variant}-{j + 1}{LEDGER_SUFFIX}")))
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_ablate_one, jobs))
    else:
        results = [_ablate_one(job) for job in jobs]
    for r in results:
        if not r["ok"]:
            log.warning("%s run %d failed: %s", r["variant"], r["index"] + 1, r["error"])
    rows = ablation_rows(results)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(report.to_csv(rows, ABLATE_COLUMNS), encoding="utf-8")
    table = report.markdown_table(rows, ABLATE_COLUMNS)
    (out / "ablation.md").write_text(table + "\n", encoding="utf-8")
    print(table)
    emit({"ok": True, "table": rows, "ledgers": [r["ledger"] for r in results],
          "csv": str(out / "ablation.csv")})
    return 0


def cmd_calibrate(args) -> int:
    t0 = calibrate_t0(args.delta, args.target_p)
    print(f"{t0:.4g}")
    emit({"t0": t0, "delta": args.delta, "target_p": args.target_p,
          "check_p": sa_accept_probability(-abs(args.delta), t0)})
    return 0


def _run_name(path: Path) -> str:
    name = path.name
    return name[: -len(LEDGER_SUFFIX)] if name.endswith(LEDGER_SUFFIX) else path.stem


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.ledgers]
    try:
        ledgers = [read_ledger(p) for p in paths]
    except OSError as exc:
        raise ConfigError(f"cannot read ledger: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"malformed ledger: {exc}") from None
    names = [_run_name(p) for p in paths]
    out = out_root(args.out)
    written = report.write_report(ledgers, names, out, figures=not args.no_figures)
    print(report.render_report(ledgers, names))
    emit({"ok": True, **{k: str(v) for k, v in written.items()}})
    return 0


def cmd_replay(args) -> int:
    path = Path(args.ledger)
    try:
        ledger = read_ledger(path)
    except OSError as exc:
        raise ConfigError(f"cannot read ledger: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"malformed ledger: {exc}") from None
    loop_config = LoopConfig.from_dict(ledger.config)
    task = build_task(ledger.config.get("task"), path.resolve().parent)
    proposers, _ = _build_proposers(ledger.config.get("proposer"), loop_config.investigators)
    replayed = replay(ledger, task, proposers)
    if args.out:
        write_ledger(Path(args.out), replayed)
    print(f"replay of {path.name}: byte-identical ({len(ledger.rounds)} rounds)")
    emit({"ok": True, "identical": True, "rounds": len(ledger.rounds)})
    return 0


def cmd_lab(args) -> int:
    from . import landscapes as ls
    from .acceptance import TemperatureSchedule

    out = out_root(args.out)
    out.mkdir(parents=True, exist_ok=True)
    experiments = ls.lab_experiments(args.trials, args.seed)
    rows, rates = [], {}
    for name, exp in experiments.items():
        o = ls.compare_strategies(exp)
        rates[name] = {"greedy": o.greedy_global_rate, "simulated_annealing": o.sa_global_rate}
        rows.append({
            "experiment": name, "support_width": exp.support_width, "trials": o.n_trials,
            "greedy_global": o.greedy_global_rate, "sa_global": o.sa_global_rate,
            "greedy_start": o.greedy_start_rate, "sa_start": o.sa_start_rate,
            "sa_only": o.sa_only, "greedy_only": o.greedy_only, "sign_test_p": o.sign_test_p(),
        })
    cols = list(rows[0])
    (out / "lab_basins.csv").write_text(report.to_csv(rows, cols), encoding="utf-8")
    sweep = [vars(r) for r in ls.degeneracy_sweep(args.epsilon, TemperatureSchedule(**ls.LAB_SCHEDULE),
                                                  samples=100, seed=args.seed)]
    (out / "lab_sweep.csv").write_text(report.to_csv(sweep, ["delta", "temperature", "p", "bound"]),
                                       encoding="utf-8")
    violations = sum(1 for r in sweep if r["p"] < r["bound"])
    table = report.markdown_table(rows, cols)
    (out / "lab.md").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"degeneracy sweep: {len(sweep)} samples, {violations} below exp(-eps/T)")
    result = {"ok": True, "experiments": rows, "sweep_violations": violations}
    if not args.no_figures:
        figs = [report.plot_basin_rates(rates, out / "lab_basins.png"), report.plot_sweep(sweep, out / "lab_sweep.png")]
        result["figures"] = [str(f) for f in figs if f is not None]
    emit(result)
    return 0


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proposa", description="Propose/evaluate/accept optimization loops.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one optimization to termination")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int, help="override the config rng_seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("ablate", help="run strategy variants with derived seeds")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", default=",".join(BUILTIN_VARIANTS))
    p.add_argument("--n-runs", type=int, default=3)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("calibrate", help="initial temperature for a target acceptance probability")
    p.add_argument("delta", type=float, help="magnitude of the reference regression")
    p.add_argument("target_p", type=float, nargs="?", default=0.85)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="markdown/CSV summary of ledgers")
    p.add_argument("ledgers", nargs="+")
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("replay", help="re-execute a ledger and demand identical bytes")
    p.add_argument("ledger")
    p.add_argument("--out", help="also write the replayed ledger here")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("lab", help="Monte-Carlo strategy comparison on synthetic landscapes")
    p.add_argument("--out")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=20260)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_lab)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ProposaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        emit({"ok": False, "error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code})
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
