"""Tests for the certirand command line."""

import io
import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.cli import EXIT_ABORT, EXIT_ERROR, EXIT_OK, main, params_table
from src.extractor import extract, solve_spec
from src.infotheory import DensityMatrix, format_matrix
from src.params import describe
from src.utils.bitstring import BitString
from src.utils.logging_setup import get_logger, setup_logging

CONFIG_DIR = Path(__file__).parent.parent / "configs"
TEST_CONSTS = str(CONFIG_DIR / "test.consts")
QUICK_CONSTS = str(CONFIG_DIR / "quick.consts")


def seed_hex(length, seed):
    return BitString(np.random.default_rng(seed).integers(0, 2, length)).serialize()


class TestParams:
    def test_table(self, capsys):
        assert main(["params", "--s", "388", "2048", "--consts", TEST_CONSTS]) == EXIT_OK
        out = capsys.readouterr().out
        assert "N games" in out
        assert "388" in out and "2048" in out

    def test_json_records(self, capsys, test_consts):
        assert main(["params", "--s", "2048", "--json", "--consts", TEST_CONSTS]) == EXIT_OK
        record = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert record["vv"]["v"] == describe(2048, test_consts)["vv"]["v"]

    def test_table_helper_marks_missing_sections(self, test_consts):
        table = params_table([describe(12, test_consts)])
        (row,) = [line for line in table.splitlines() if line.startswith("N games")]
        assert row.split()[-1] == "-"

    def test_short_seed_is_an_error(self, capsys):
        assert main(["params", "--s", "4", "--consts", TEST_CONSTS]) == EXIT_ERROR

    def test_missing_constants_file(self, tmp_path, capsys):
        code = main(["params", "--s", "388", "--consts", str(tmp_path / "none.consts")])
        assert code == EXIT_ERROR
        assert "not found" in capsys.readouterr().err


class TestExtract:
    def test_single_source(self, capsys, test_consts):
        code = main([
            "--log_level", "ERROR", "extract", "--source-hex", "8:ff", "--seed", "8:ff",
            "--r", "1", "--eps", "0.01", "--mode", "parity_of_selected", "--consts", TEST_CONSTS,
        ])
        assert code == EXIT_OK
        spec = solve_spec(8, 1, 0.01, test_consts, mode="parity_of_selected")
        expected = extract(BitString.from_hex("8:ff"), BitString.from_hex("8:ff")[: spec.d], spec)
        assert capsys.readouterr().out.strip().splitlines()[-1] == expected.serialize()

    def test_source_file(self, tmp_path, capsys):
        source = tmp_path / "sources.txt"
        source.write_text("# golden sources\n8:ff\n8:0f\n", encoding="utf-8")
        code = main([
            "--log_level", "ERROR", "extract", "--source", str(source), "--seed", "8:a5",
            "--r", "1", "--mode", "parity_of_selected", "--consts", TEST_CONSTS,
        ])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        assert all(line.startswith("1:") for line in lines)

    def test_logs_the_one_bit_extractor(self, capsys):
        code = main([
            "--log_level", "INFO", "extract", "--source-hex", "8:ff", "--seed", "8:ff",
            "--r", "1", "--mode", "parity_of_selected", "--consts", TEST_CONSTS,
        ])
        assert code == EXIT_OK
        captured = capsys.readouterr()
        assert captured.out.strip().startswith("1:")
        assert "(parity_of_selected)" in captured.err

    def test_seed_too_short(self, capsys):
        code = main([
            "extract", "--source-hex", "8:ff", "--seed", "2:3", "--r", "1",
            "--mode", "parity_of_selected", "--consts", TEST_CONSTS,
        ])
        assert code == EXIT_ERROR
        assert "seed bits" in capsys.readouterr().err


class TestVerifyLemmas:
    def test_subset_passes(self, capsys):
        code = main(["verify-lemmas", "--trials", "3", "--seed", "1f", "--families", "pinsker,metric"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "pinsker" in out and "All families passed" in out

    def test_unknown_family(self, capsys):
        assert main(["verify-lemmas", "--trials", "1", "--families", "nope"]) == EXIT_ERROR

    def test_bad_dims(self, capsys):
        assert main(["verify-lemmas", "--trials", "1", "--dims", "1x2"]) == EXIT_ERROR

    def test_matrix_report(self, tmp_path, capsys):
        bell = np.zeros(4, dtype=complex)
        bell[0] = bell[3] = 1 / np.sqrt(2)
        rho = DensityMatrix(np.outer(bell, bell.conj()), (2, 2), ("A", "B"))
        mixed = DensityMatrix(np.eye(4) / 4, (2, 2), ("A", "B"))
        (tmp_path / "rho.txt").write_text(format_matrix(rho), encoding="utf-8")
        (tmp_path / "sigma.txt").write_text(format_matrix(mixed), encoding="utf-8")
        code = main([
            "verify-lemmas", "--matrix", str(tmp_path / "rho.txt"), "--sigma", str(tmp_path / "sigma.txt"),
        ])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        result = json.loads(out[out.index("{"):])
        assert result["entropies"]["mutual_info"] == pytest.approx(2.0, abs=1e-8)
        assert result["trace_distance"] == pytest.approx(0.75, abs=1e-8)
        assert result["fidelity"] == pytest.approx(0.5, abs=1e-8)


@pytest.mark.integration
class TestRuns:
    def test_run_vv_classical_aborts(self, tmp_path, capsys):
        out = tmp_path / "vv.jsonl"
        code = main([
            "run-vv", "--seed", seed_hex(2048, 8), "--strategy", "zeros",
            "--consts", TEST_CONSTS, "--out", str(out),
        ])
        assert code == EXIT_ABORT
        assert "abort" in capsys.readouterr().out
        summary = json.loads(out.read_text(encoding="utf-8").strip().splitlines()[-1])
        assert summary["decision"] == "abort"

    def test_run_ruv_exit_code_matches_decision(self, tmp_path, capsys):
        out = tmp_path / "ruv.jsonl"
        code = main([
            "--log_level", "ERROR", "run-ruv", "--seed", seed_hex(64, 3),
            "--consts", QUICK_CONSTS, "--out", str(out),
        ])
        summary = json.loads(out.read_text(encoding="utf-8").strip().splitlines()[-1])
        assert code == (EXIT_OK if summary["decision"] == "pass" else EXIT_ABORT)

    def test_infinite_then_replay(self, tmp_path, capsys):
        code = main([
            "run-infinite", "--seed", seed_hex(242, 51), "--rounds", "2", "--consts", QUICK_CONSTS,
            "--master-seed", "3", "--out", str(tmp_path),
        ])
        assert code == EXIT_OK
        assert "Outcome: completed" in capsys.readouterr().out
        (run_dir,) = [p for p in tmp_path.iterdir() if p.is_dir()]
        assert (run_dir / "summary.txt").exists()
        assert len(list(run_dir.glob("transcript-*.jsonl"))) == 4

        assert main(["replay", str(run_dir)]) == EXIT_OK
        assert "identical" in capsys.readouterr().out

    def test_replay_detects_edited_summary(self, tmp_path, capsys):
        main([
            "run-infinite", "--seed", seed_hex(242, 51), "--rounds", "2", "--consts", QUICK_CONSTS,
            "--master-seed", "3", "--out", str(tmp_path),
        ])
        (run_dir,) = [p for p in tmp_path.iterdir() if p.is_dir()]
        summary = run_dir / "summary.txt"
        summary.write_text(summary.read_text(encoding="utf-8") + "edited\n", encoding="utf-8")
        assert main(["replay", str(run_dir)]) == EXIT_ABORT
        assert "DIFFERS" in capsys.readouterr().out

    def test_abort_exit_code(self, tmp_path, capsys):
        code = main([
            "run-infinite", "--seed", seed_hex(242, 57), "--rounds", "2", "--consts", QUICK_CONSTS,
            "--strategies", str(CONFIG_DIR / "strategies" / "abort_iteration2.strategies"),
            "--master-seed", "5", "--out", str(tmp_path),
        ])
        assert code == EXIT_ABORT
        assert "Outcome: aborted" in capsys.readouterr().out

    def test_infeasible_chain_prints_table(self, tmp_path, capsys):
        code = main([
            "run-infinite", "--seed", seed_hex(242, 56), "--rounds", "3", "--consts", QUICK_CONSTS,
            "--out", str(tmp_path),
        ])
        assert code == EXIT_ERROR
        assert "protocol_b_seed_exhausted" in capsys.readouterr().err

    def test_needs_a_seed(self, tmp_path, capsys):
        code = main(["run-infinite", "--rounds", "1", "--consts", QUICK_CONSTS, "--out", str(tmp_path)])
        assert code == EXIT_ERROR


def test_replay_missing_directory(tmp_path, capsys):
    assert main(["replay", str(tmp_path / "missing")]) == EXIT_ERROR


def test_logging_goes_to_the_given_stream_with_short_names():
    buffer = io.StringIO()
    setup_logging("INFO", stream=buffer)
    get_logger("src.params").info("hello")
    get_logger("src.params").debug("hidden")
    text = buffer.getvalue()
    assert " - params - INFO - hello" in text
    assert "hidden" not in text


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
