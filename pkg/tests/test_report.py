"""Tests for run reports built from transcripts."""

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.params import eps_ec, tower_bound
from src.report import build_report, group_transcripts, render_json, render_text
from src.transcript import ProtocolTranscript
from src.utils.bitstring import BitString

SEED = BitString.zeros(242)
X = BitString.zeros(20)
Z = BitString.zeros(64)


def snapshot(consts, k=2):
    return {
        "run_id": "run-0-000000000000",
        "master_seed": 0,
        "seed": SEED.serialize(),
        "k": k,
        "constants": consts.model_dump(mode="json"),
        "overrides": consts.overrides(),
        "strategies": {},
        "options": {"fresh_devices": False, "tap": False, "pass_rate_repetitions": 4},
        "planned_lengths": [242, 64, 10][: k + 1],
    }


def vv_transcript(iteration, seed, decision="pass"):
    return ProtocolTranscript(
        "vv", iteration, iteration % 2, ("D5", "D6") if iteration % 2 else ("D1", "D2"),
        header={"seed": seed.serialize()},
        summary={
            "decision": decision,
            "cause": "" if decision == "pass" else "test-round win fraction 5/12 below 0.5536",
            "test_wins": 11 if decision == "pass" else 5,
            "test_rounds": 12,
            "threshold": 0.5536,
            "x": X.serialize() if decision == "pass" else None,
            "flags": ["protocol_b_margin_placeholder"],
        },
    )


def ruv_transcript(iteration):
    return ProtocolTranscript(
        "ruv", iteration, iteration % 2, ("D7", "D8"),
        header={"seed": X.serialize(), "params": {"n_games": 5}},
        summary={
            "decision": "pass",
            "cause": "",
            "w": 5,
            "threshold": 4.2,
            "i": 1,
            "j": 2,
            "z": Z.serialize(),
            "fallback": True,
            "t_constraint_ok": False,
            "pass_rate": 0.5,
            "pass_rate_label": "estimated",
        },
    )


@pytest.fixture
def aborted_transcripts():
    return [vv_transcript(2, Z, "abort"), ruv_transcript(1), vv_transcript(1, SEED)]


class TestBuildReport:
    def test_groups_by_iteration(self, aborted_transcripts):
        groups = group_transcripts(aborted_transcripts)
        assert [(vv.iteration, ruv.iteration if ruv else None) for vv, ruv in groups] == [(1, 1), (2, None)]

    def test_abort_at_second_iteration(self, quick_consts, aborted_transcripts):
        report = build_report(snapshot(quick_consts), aborted_transcripts, quick_consts)
        assert report.outcome == "aborted"
        assert report.cause == "iteration-2"
        assert report.detail.startswith("vv: test-round win fraction")
        assert len(report.ledger["entries"]) == 1
        assert report.iterations[1].ruv_decision == "not started"

    def test_bounds(self, quick_consts, aborted_transcripts):
        report = build_report(snapshot(quick_consts), aborted_transcripts, quick_consts)
        assert report.final_bound == pytest.approx(2 * eps_ec(242, 0.5, quick_consts))
        assert report.closed_bound == pytest.approx(2 * eps_ec(242, 0.5, quick_consts) / 0.5)
        assert report.tower_bound == pytest.approx(tower_bound(242, 0.5, quick_consts))
        assert len(report.composed_bounds) == 1

    def test_row_flags(self, quick_consts, aborted_transcripts):
        row = build_report(snapshot(quick_consts), aborted_transcripts, quick_consts).iterations[0]
        assert (row.i, row.j, row.output_len, row.vv_output_len) == (1, 2, 64, 20)
        assert "selection_fallback" in row.flags
        assert "t_not_above_85" in row.flags
        assert row.devices == ["D5", "D6", "D7", "D8"]

    def test_completed(self, quick_consts):
        report = build_report(snapshot(quick_consts, k=1), [vv_transcript(1, SEED), ruv_transcript(1)], quick_consts)
        assert report.completed
        assert report.final_bound == 2 * report.ledger["delta"]

    def test_empty(self, quick_consts):
        report = build_report(snapshot(quick_consts), [], quick_consts)
        assert report.outcome == "empty"
        assert report.iterations == []
        assert report.m == 242


class TestRender:
    def test_text_mentions_cause_and_overrides(self, quick_consts, aborted_transcripts):
        text = render_text(build_report(snapshot(quick_consts), aborted_transcripts, quick_consts))
        assert "Outcome: aborted" in text
        assert "Cause:   iteration-2" in text
        assert "protocol_b_rounds = 20000" in text
        assert "Error ledger" in text

    def test_empty_text_has_no_tables(self, quick_consts):
        text = render_text(build_report(snapshot(quick_consts), [], quick_consts))
        assert "Iterations\n" not in text
        assert "Error ledger" not in text
        assert "Outcome: empty" in text

    def test_json_is_stable(self, quick_consts, aborted_transcripts):
        first = render_json(build_report(snapshot(quick_consts), aborted_transcripts, quick_consts))
        second = render_json(build_report(snapshot(quick_consts), list(reversed(aborted_transcripts)), quick_consts))
        assert first == second
        assert json.loads(first)["cause"] == "iteration-2"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
