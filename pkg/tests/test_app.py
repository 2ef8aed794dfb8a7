"""Tests for the run explorer's data shaping."""

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.app import iteration_table, ledger_table, list_runs, load_summary, win_fractions
from src.orchestrator import transcript_name
from src.transcript import ProtocolTranscript

SUMMARY = {
    "outcome": "completed",
    "iterations": [
        {
            "iteration": 1, "cluster": 1, "m": 242, "test_wins": 11, "test_rounds": 12,
            "vv_decision": "pass", "w": 4500, "n_games": 5000, "ruv_threshold": 4211.237,
            "ruv_decision": "pass", "i": 2, "j": 3, "output_len": 64, "p": 1.0,
            "flags": ["placeholder_threshold", "placeholder_threshold"],
        },
        {
            "iteration": 2, "cluster": 0, "m": 64, "test_wins": 2, "test_rounds": 12,
            "vv_decision": "abort", "w": None, "n_games": None, "ruv_threshold": None,
            "ruv_decision": "not started", "i": None, "j": None, "output_len": 0, "p": None,
            "flags": [],
        },
    ],
    "ledger": {
        "entries": [
            {"iteration": 1, "m": 242, "p": 1.0, "eps_vv": 0.1, "eps_ruv": 0.2,
             "eps_ec": 0.3, "delta": 0.3, "clamped": False},
        ]
    },
}


def make_run(root: Path, run_id: str, summary=SUMMARY) -> Path:
    run_dir = root / run_id
    run_dir.mkdir(parents=True)
    snapshot = {"run_id": run_id, "seed": "242:00", "k": 2, "planned_lengths": [242, 64, 10]}
    (run_dir / "config.json").write_text(json.dumps(snapshot), encoding="utf-8")
    if summary is not None:
        (run_dir / "summary.json").write_text(json.dumps(summary), encoding="utf-8")

    vv = ProtocolTranscript("vv", iteration=1, cluster=1, devices=("D5", "D6"))
    vv.record_round(False, 0, 0, 1, 0)
    vv.record_round(True, 0, 0, 0, 0)
    vv.record_round(True, 1, 1, 0, 0)
    vv.record_round(True, 1, 0, 1, 1)
    vv.write_jsonl(run_dir / transcript_name(vv))

    ruv = ProtocolTranscript("ruv", iteration=1, cluster=1, devices=("D7", "D8"))
    ruv.write_jsonl(run_dir / transcript_name(ruv))
    return run_dir


class TestListRuns:
    def test_finds_runs(self, tmp_path):
        make_run(tmp_path, "run-1-aaa")
        make_run(tmp_path, "run-2-bbb", summary=None)
        (tmp_path / "stray").mkdir()
        runs = {r["run_id"]: r for r in list_runs(tmp_path)}
        assert set(runs) == {"run-1-aaa", "run-2-bbb"}
        assert runs["run-1-aaa"]["outcome"] == "completed"
        assert runs["run-2-bbb"]["outcome"] == "unknown"
        assert runs["run-1-aaa"]["m"] == 242
        assert runs["run-1-aaa"]["planned"] == "242 -> 64 -> 10"

    def test_missing_root(self, tmp_path):
        assert list_runs(tmp_path / "nothing") == []

    def test_load_summary_missing(self, tmp_path):
        assert load_summary(tmp_path) == {}


class TestTables:
    def test_iteration_rows(self):
        first, second = iteration_table(SUMMARY)
        assert first["VV tests"] == "11/12"
        assert first["w / N"] == "4500/5000"
        assert first["(i, j)"] == "(2, 3)"
        assert first["threshold"] == pytest.approx(4211.24)
        assert first["flags"] == "placeholder_threshold"
        assert second["w / N"] == "-"
        assert second["(i, j)"] == "-"
        assert second["threshold"] is None

    def test_ledger_rows(self):
        (row,) = ledger_table(SUMMARY)
        assert row == {"iteration": 1, "m": 242, "p": 1.0, "eps_vv": 0.1,
                       "eps_ruv": 0.2, "eps_ec": 0.3, "delta": 0.3}

    def test_empty_summary(self):
        assert iteration_table({}) == []
        assert ledger_table({"ledger": None}) == []


class TestWinFractions:
    def test_running_fraction_over_test_rounds(self, tmp_path):
        run_dir = make_run(tmp_path, "run-1-aaa")
        curves = win_fractions(run_dir)
        assert list(curves) == ["transcript-1-vv.jsonl"]
        assert curves["transcript-1-vv.jsonl"] == pytest.approx([1.0, 0.5, 2 / 3])

    def test_thinning(self, tmp_path):
        run_dir = tmp_path / "run-3-ccc"
        run_dir.mkdir()
        (run_dir / "config.json").write_text(json.dumps({"run_id": "run-3-ccc"}), encoding="utf-8")
        ruv = ProtocolTranscript("ruv", iteration=1)
        for k in range(1000):
            ruv.record_round(True, 0, 0, k % 2, 0)
        ruv.write_jsonl(run_dir / transcript_name(ruv))
        curve = win_fractions(run_dir, points=100)["transcript-1-ruv.jsonl"]
        assert len(curve) == 100
        assert curve[-1] == pytest.approx(0.5, abs=0.01)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
