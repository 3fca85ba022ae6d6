import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from conftest import CONFIGS, score_body
from proposa import cli
from proposa.core import RoundDecision, read_ledger, write_ledger
from proposa.proposers import Proposer


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out, json.loads(out.strip().splitlines()[-1])


def write_config(tmp_path, cfg, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(cfg))
    return p


def scripted_cfg(**kw):
    cfg = {
        "strategy": "greedy",
        "round_budget": 4,
        "rng_seed": 1,
        "schedule": {"t0": 0.054, "gamma": 0.7},
        "task": {"kind": "score_table"},
        "seed_artifact": {"body": score_body(0.5, 0.45)},
        "proposer": {"kind": "scripted",
                     "script": [[score_body(0.5 + 0.05 * r + 0.01 * i, 0.5) for i in range(3)] for r in range(1, 5)]},
    }
    cfg.update(kw)
    return cfg


def test_run_rules_config(tmp_path, capsys):
    code, out, result = run_cli(capsys, "run", "--config", CONFIGS / "rules_greedy.yaml", "--out", tmp_path)
    assert code == 0 and result["ok"]
    ledger = read_ledger(result["ledger"])
    assert any(r.decision is RoundDecision.ACCEPTED for r in ledger.rounds)
    assert "validation accuracy:" in out and "test accuracy:" in out
    assert Path(result["ledger"]).name.startswith(result["run_id"])


def test_run_id_is_timestamp_plus_config_hash(tmp_path, capsys):
    cfg = write_config(tmp_path, scripted_cfg())
    _, _, a = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path)
    _, _, b = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path, "--seed", 2)
    stamp, digest = a["run_id"].split("-")
    assert stamp.endswith("Z") and len(digest) == 8 and digest != b["run_id"].split("-")[1]
    assert read_ledger(b["ledger"]).config["rng_seed"] == 2


def test_out_dir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PROPOSA_OUT_DIR", str(tmp_path / "env"))
    _, _, result = run_cli(capsys, "run", "--config", write_config(tmp_path, scripted_cfg()))
    assert Path(result["ledger"]).parent == tmp_path / "env"


def test_sa_without_schedule_exits_2(tmp_path, capsys):
    cfg = scripted_cfg(strategy="simulated_annealing")
    del cfg["schedule"]
    code, _, result = run_cli(capsys, "run", "--config", write_config(tmp_path, cfg), "--out", tmp_path)
    assert code == 2 and "schedule" in result["message"]


def test_missing_config_exits_2(tmp_path, capsys):
    code, _, _ = run_cli(capsys, "run", "--config", tmp_path / "nope.yaml")
    assert code == 2


def test_proposer_not_found_exits_4(tmp_path, capsys):
    cfg = scripted_cfg(proposer={"kind": "external", "transport": {"command": ["/no/such/agent"]}})
    code, _, result = run_cli(capsys, "run", "--config", write_config(tmp_path, cfg), "--out", tmp_path)
    assert code == 4 and result["error"] == "ProposerUnavailable"
    (ledger_path,) = tmp_path.glob("*.ledger.json")
    assert read_ledger(ledger_path).abort["kind"] == "proposer_unavailable"


def test_evaluator_failure_exits_4(tmp_path, capsys):
    cfg = scripted_cfg(task={"kind": "external", "command": [sys.executable, "-c", "import sys; sys.exit(1)"]})
    code, _, _ = run_cli(capsys, "run", "--config", write_config(tmp_path, cfg), "--out", tmp_path)
    assert code == 4


class Snoop(Proposer):
    kind = "snoop"

    def generate(self, context, stream):
        from proposa.core import VisibilityTier

        return context.request_diagnostics(VisibilityTier.TEST)


def test_barrier_violation_exits_3(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(cli, "build_proposer", lambda desc: Snoop())
    code, _, result = run_cli(capsys, "run", "--config", write_config(tmp_path, scripted_cfg()), "--out", tmp_path)
    assert code == 3 and result["error"] == "BarrierViolation"


def test_calibrate(capsys):
    code, out, result = run_cli(capsys, "calibrate", 0.0087719, 0.85)
    assert code == 0 and out.splitlines()[0] == "0.05397"
    assert result["check_p"] == pytest.approx(0.85)
    code, _, _ = run_cli(capsys, "calibrate", 0.0087719, 1.0)
    assert code == 2


def test_replay_and_tamper(tmp_path, capsys):
    cfg = write_config(tmp_path, scripted_cfg(strategy="simulated_annealing"))
    _, _, result = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path)
    code, _, rep = run_cli(capsys, "replay", result["ledger"])
    assert code == 0 and rep["identical"]
    ledger = read_ledger(result["ledger"])
    ledger.config["rng_seed"] = 99
    bad = write_ledger(tmp_path / "bad.ledger.json", ledger)
    code, _, rep = run_cli(capsys, "replay", bad)
    assert code == 1 and rep["error"] == "ReplayMismatch"


def test_report_tables_and_determinism(tmp_path, capsys):
    cfg = write_config(tmp_path, scripted_cfg())
    _, _, a = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / "runs")
    _, _, b = run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / "runs", "--seed", 5)
    paths = [a["ledger"], b["ledger"]]
    code, out, result = run_cli(capsys, "report", *paths, "--out", tmp_path / "rep", "--no-figures")
    assert code == 0
    ledger = read_ledger(paths[0])
    name = Path(paths[0]).name.removesuffix(".ledger.json")
    section = out.split(f"## {name}\n\n")[1].split("\n\n")[0]
    assert len(section.splitlines()) - 2 == len(ledger.rounds)
    agg = [l for l in out.split("## Aggregate")[1].splitlines() if l.startswith("| greedy")][0]
    mean_final = sum(read_ledger(p).final_score.value for p in paths) / 2
    assert float(agg.split("|")[5]) == pytest.approx(mean_final, rel=1e-5)
    # replayed ledger renders the same report
    replayed = tmp_path / "replayed" / Path(paths[0]).name
    run_cli(capsys, "replay", paths[0], "--out", replayed)
    _, one, _ = run_cli(capsys, "report", paths[0], "--out", tmp_path / "r1", "--no-figures")
    _, two, _ = run_cli(capsys, "report", replayed, "--out", tmp_path / "r2", "--no-figures")
    assert (tmp_path / "r1" / "report.md").read_bytes() == (tmp_path / "r2" / "report.md").read_bytes()
    assert one.splitlines()[:-1] == two.splitlines()[:-1]


def test_report_writes_figure(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    _, _, a = run_cli(capsys, "run", "--config", write_config(tmp_path, scripted_cfg()), "--out", tmp_path)
    _, _, result = run_cli(capsys, "report", a["ledger"], "--out", tmp_path / "rep")
    assert Path(result["figure"]).read_bytes()[:4] == b"\x89PNG"
    assert (tmp_path / "rep" / "convergence.csv").read_text().startswith("run,strategy,round,best,score")


def test_ablate_counts_and_seeds(tmp_path, capsys):
    cfg = write_config(tmp_path, scripted_cfg())
    code, out, result = run_cli(capsys, "ablate", "--config", cfg, "--variants", "greedy,sa", "--n-runs", 3,
                                "--out", tmp_path / "abl")
    assert code == 0 and len(result["ledgers"]) == 6 and len(result["table"]) == 2
    ledgers = {Path(p).name: read_ledger(p) for p in result["ledgers"]}
    for row in result["table"]:
        mine = [l for n, l in ledgers.items() if n.startswith(row["variant"] + "-")]
        recount = sum(sum(1 for r in l.rounds for a in r.attempts if a.score is not None) for l in mine) / 3
        assert row["mean_evaluations"] == recount
    for j in (1, 2, 3):
        g, s = ledgers[f"greedy-{j}.ledger.json"], ledgers[f"sa-{j}.ledger.json"]
        assert g.config["rng_seed"] == s.config["rng_seed"]
        assert g.rounds[0].attempts[0].artifact == s.rounds[0].attempts[0].artifact


def test_ablate_failed_run_marks_cell(tmp_path, capsys):
    cfg = scripted_cfg(variants={"broken": {"strategy": "greedy",
                                            "proposer": {"kind": "external", "transport": {"command": ["/no/agent"]}}}})
    code, _, result = run_cli(capsys, "ablate", "--config", write_config(tmp_path, cfg), "--variants", "greedy,broken",
                              "--n-runs", 2, "--out", tmp_path / "abl")
    assert code == 0
    rows = {r["variant"]: r for r in result["table"]}
    assert rows["broken"]["failed"] == 2 and rows["greedy"]["failed"] == 0


def test_ablate_parallel_jobs(tmp_path, capsys):
    cfg = write_config(tmp_path, scripted_cfg())
    code, _, result = run_cli(capsys, "ablate", "--config", cfg, "--variants", "greedy,parallel", "--n-runs", 2,
                              "--jobs", 2, "--out", tmp_path / "abl")
    rows = {r["variant"]: r for r in result["table"]}
    assert code == 0 and rows["parallel"]["evals_per_round"] == 3 * rows["greedy"]["evals_per_round"]


def test_lab_writes_outputs(tmp_path, capsys):
    code, _, result = run_cli(capsys, "lab", "--trials", 10, "--out", tmp_path, "--no-figures")
    assert code == 0 and result["sweep_violations"] == 0
    assert {e["experiment"] for e in result["experiments"]} == {"narrow", "broad"}
    assert (tmp_path / "lab_basins.csv").exists() and (tmp_path / "lab_sweep.csv").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "proposa.cli", "calibrate", "0.01"], capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout.splitlines()[-1])["target_p"] == 0.85
