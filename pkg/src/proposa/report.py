"""Markdown/CSV summaries of ledgers, plus optional matplotlib figures.

Figures are written next to the CSV they plot. matplotlib is imported lazily
(the ``plot`` extra); without it the text outputs are still produced.
"""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path
from statistics import mean
from typing import Optional, Sequence

from .core import RunLedger

log = logging.getLogger(__name__)

ROUND_COLUMNS = ["run", "round", "attempts", "evaluations", "decision", "temperature", "score", "best"]


def round_rows(ledger: RunLedger, run: str) -> list[dict]:
    rows = []
    best = ledger.seed_score.value
    for r in ledger.rounds:
        for a in r.attempts:
            if a.score is not None:
                best = max(best, a.score.value)
        rows.append({
            "run": run,
            "round": r.round_index,
            "attempts": len(r.attempts),
            "evaluations": r.evaluations,
            "decision": r.decision.value,
            "temperature": r.temperature,
            "score": r.incumbent_score.value,
            "best": best,
        })
    return rows


def run_summary(ledger: RunLedger, run: str) -> dict:
    test = ledger.final_report.primary.value if ledger.final_report else None
    return {
        "run": run,
        "strategy": ledger.config.get("strategy"),
        "rounds": len(ledger.rounds),
        "accepted": sum(1 for r in ledger.rounds if r.decision.value == "accepted"),
        "evaluations": ledger.evaluations,
        "seed_score": ledger.seed_score.value,
        "final_score": ledger.final_score.value,
        "best_score": ledger.best_score.value,
        "test_score": test,
        "aborted": None if ledger.abort is None else ledger.abort.get("kind"),
    }


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def markdown_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(row.get(c)) for c in columns) + " |")
    return "\n".join(lines)


def to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: "" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                         for c in columns})
    return buf.getvalue()


SUMMARY_COLUMNS = ["run", "strategy", "rounds", "accepted", "evaluations", "seed_score", "final_score",
                   "best_score", "test_score", "aborted"]
AGGREGATE_COLUMNS = ["strategy", "runs", "mean_rounds", "mean_evaluations", "mean_final_score",
                     "mean_best_score", "mean_test_score"]


def aggregate(summaries: Sequence[dict]) -> list[dict]:
    groups: dict[str, list[dict]] = {}
    for s in summaries:
        groups.setdefault(s["strategy"], []).append(s)
    out = []
    for strategy, rows in groups.items():
        tests = [r["test_score"] for r in rows if r["test_score"] is not None]
        out.append({
            "strategy": strategy,
            "runs": len(rows),
            "mean_rounds": mean(r["rounds"] for r in rows),
            "mean_evaluations": mean(r["evaluations"] for r in rows),
            "mean_final_score": mean(r["final_score"] for r in rows),
            "mean_best_score": mean(r["best_score"] for r in rows),
            "mean_test_score": mean(tests) if tests else None,
        })
    return out


def render_report(ledgers: Sequence[RunLedger], names: Sequence[str]) -> str:
    summaries = [run_summary(l, n) for l, n in zip(ledgers, names)]
    parts = ["# Run report", "", "## Runs", "", markdown_table(summaries, SUMMARY_COLUMNS), ""]
    for ledger, name in zip(ledgers, names):
        parts += [f"## {name}", "", markdown_table(round_rows(ledger, name), ROUND_COLUMNS[1:]), ""]
    parts += ["## Aggregate", "", markdown_table(aggregate(summaries), AGGREGATE_COLUMNS), ""]
    return "\n".join(parts)


def convergence_rows(ledgers: Sequence[RunLedger], names: Sequence[str]) -> list[dict]:
    """Best validation score after each round, with the seed as round 0."""
    rows = []
    for ledger, name in zip(ledgers, names):
        rows.append({"run": name, "strategy": ledger.config.get("strategy"), "round": 0,
                     "best": ledger.seed_score.value, "score": ledger.seed_score.value})
        for r in round_rows(ledger, name):
            rows.append({"run": name, "strategy": ledger.config.get("strategy"), "round": r["round"],
                         "best": r["best"], "score": r["score"]})
    return rows


CONVERGENCE_COLUMNS = ["run", "strategy", "round", "best", "score"]


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping figures")
        return None
    return plt


def plot_convergence(rows: Sequence[dict], path: Path) -> Optional[Path]:
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    colors = {}
    for run in dict.fromkeys(r["run"] for r in rows):
        pts = [r for r in rows if r["run"] == run]
        strategy = pts[0]["strategy"]
        color = colors.setdefault(strategy, f"C{len(colors)}")
        label = strategy if list(colors).count(strategy) and strategy not in ax.get_legend_handles_labels()[1] else None
        ax.plot([p["round"] for p in pts], [p["best"] for p in pts], marker="o", color=color, alpha=0.8, label=label)
    ax.set_xlabel("round")
    ax.set_ylabel("best validation score")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_basin_rates(rates: dict, path: Path) -> Optional[Path]:
    """Grouped bars: global-basin rate per strategy for each experiment."""
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(rates)
    width = 0.35
    for j, strategy in enumerate(("greedy", "simulated_annealing")):
        ax.bar([i + (j - 0.5) * width for i in range(len(names))], [rates[n][strategy] for n in names],
               width, label=strategy)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names)
    ax.set_ylim(0, 1)
    ax.set_ylabel("global-basin rate")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(rows: Sequence[dict], path: Path) -> Optional[Path]:
    plt = _pyplot()
    if plt is None:
        return None
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter([r["delta"] for r in rows], [r["p"] for r in rows], s=6, label="acceptance probability")
    for T in sorted({r["temperature"] for r in rows}):
        bound = next(r["bound"] for r in rows if r["temperature"] == T)
        ax.axhline(bound, color="grey", lw=0.5)
    ax.set_xlabel("delta")
    ax.set_ylabel("P(accept)")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_report(ledgers, names, out: Path, figures: bool = True) -> dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = {"markdown": out / "report.md", "convergence": out / "convergence.csv"}
    paths["markdown"].write_text(render_report(ledgers, names), encoding="utf-8")
    rows = convergence_rows(ledgers, names)
    paths["convergence"].write_text(to_csv(rows, CONVERGENCE_COLUMNS), encoding="utf-8")
    if figures:
        fig = plot_convergence(rows, out / "convergence.png")
        if fig is not None:
            paths["figure"] = fig
    return paths
