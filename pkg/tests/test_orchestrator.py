"""Tests for cluster expansion, infinite expansion and run directories."""

import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.devices import Cluster, audit_transcript, load_strategies, spawn_all
from src.errors import ConfigError, InputError
from src.orchestrator import (
    cluster_expansion,
    infinite_expansion,
    new_state,
    plan_chain,
    replay,
    report,
    require_feasible,
    write_run,
)
from src.params import delta_ledger, eps_ec, g_iter
from src.qsim import QuantumBackend
from src.transcript import dumps
from src.utils.bitstring import BitString
from src.utils.rng import RngTree

STRATEGY_DIR = Path(__file__).parent.parent / "configs" / "strategies"


def make_pool(strategies=None, master_seed=5):
    path = STRATEGY_DIR / strategies if strategies else None
    return spawn_all(load_strategies(path), QuantumBackend(), RngTree(master_seed))


def seed_bits(length, seed):
    return BitString(np.random.default_rng(seed).integers(0, 2, length))


# Ideal devices abort the quick chain now and then (76 wins against a 76.24
# threshold for master seed 5). Master seed 3 was chosen because it completes.
COMPLETING_MASTER_SEED = 3


@pytest.fixture(scope="module")
def completed_run(quick_consts):
    return infinite_expansion(make_pool(master_seed=COMPLETING_MASTER_SEED), seed_bits(242, 51), 2, quick_consts)


@pytest.fixture(scope="module")
def single_cluster_run(quick_consts):
    pool = make_pool(master_seed=9)
    return cluster_expansion(pool.cluster(1), seed_bits(242, 52), quick_consts, iteration=1)


class TestPlanChain:
    def test_quick_chain(self, quick_consts):
        plan = plan_chain(242, 2, quick_consts)
        assert plan.feasible
        assert plan.lengths == [242, 64, 10]
        assert plan.lengths == list(g_iter(2, 242, quick_consts).lengths)
        assert [stage.test_rounds for stage in plan.stages] == [12, 12]
        assert plan.stages[1].test_bits == 32

    def test_chain_constants(self, chain_consts):
        plan = plan_chain(388, 3, chain_consts)
        assert plan.feasible
        assert plan.lengths == [388, 177, 42, 6]
        assert plan.stages[0].extractor["d"] == 49
        assert all("vacuous_acceptance" in stage.notes for stage in plan.stages[1:])

    def test_clusters_alternate(self, chain_consts):
        plan = plan_chain(388, 3, chain_consts)
        assert [stage.cluster for stage in plan.stages] == [1, 0, 1]

    def test_exhausted_seed_budget(self, quick_consts):
        plan = plan_chain(242, 3, quick_consts)
        assert not plan.feasible
        failing = plan.first_failure()
        assert failing.iteration == 3
        assert "protocol_b_seed_exhausted" in failing.issues

    def test_require_feasible_carries_table(self, quick_consts):
        plan = plan_chain(242, 3, quick_consts)
        with pytest.raises(ConfigError) as excinfo:
            require_feasible(plan)
        assert "iteration 3" in str(excinfo.value)
        assert "protocol_b_seed_exhausted" in excinfo.value.table

    def test_stops_at_dead_stage(self, test_consts):
        plan = plan_chain(20, 3, test_consts)
        assert len(plan.stages) == 1
        assert "ruv_seed_too_short" in plan.stages[0].issues

    def test_paper_constants_infeasible(self, paper_consts):
        assert not plan_chain(10_000, 1, paper_consts).feasible

    def test_zero_iterations(self, quick_consts):
        with pytest.raises(InputError):
            plan_chain(242, 0, quick_consts)


class TestClusterExpansion:
    def test_output_is_the_ruv_slice(self, single_cluster_run):
        run = single_cluster_run
        assert not run.aborted
        assert run.output == run.ruv_run.z
        assert len(run.output) == run.ruv_run.params.sub_block_len == 64

    def test_ruv_seed_is_vv_output(self, single_cluster_run):
        assert single_cluster_run.ruv_run.transcript.header["seed"] == single_cluster_run.vv_run.x.serialize()

    def test_devices_belong_to_the_cluster(self, single_cluster_run):
        names = {name for t in single_cluster_run.transcripts() for name in t.devices}
        assert names == {"D5", "D6", "D7", "D8"}

    def test_audit_is_clean(self, single_cluster_run):
        for transcript in single_cluster_run.transcripts():
            assert audit_transcript(transcript).ok

    def test_ledger_bounds(self, single_cluster_run, quick_consts):
        assert single_cluster_run.bounds.raw_eps_ec == pytest.approx(eps_ec(242, 1.0, quick_consts))
        assert single_cluster_run.ruv_run.transcript.summary["pass_rate_label"] == "assumed"

    def test_vv_abort_skips_ruv(self, test_consts):
        pool = make_pool("classical.strategies")
        run = cluster_expansion(pool.cluster(0), seed_bits(2048, 53), test_consts)
        assert run.aborted
        assert run.ruv_run is None
        assert run.output is None
        assert run.cause.startswith("vv:")
        assert [t.protocol for t in run.transcripts()] == ["vv"]

    def test_incomplete_cluster(self, quick_consts):
        with pytest.raises(ConfigError):
            cluster_expansion(Cluster(0, {}), seed_bits(242, 54), quick_consts)


@pytest.mark.integration
class TestInfiniteExpansion:
    """Multi-iteration runs on the quick chain."""

    def test_completes_with_planned_lengths(self, completed_run):
        state = completed_run
        assert state.completed
        assert state.iteration == 2
        assert [len(run.output) for run in state.cluster_runs] == state.plan.lengths[1:] == [64, 10]
        assert len(state.current_seed) == 10

    def test_cluster_alternation(self, completed_run):
        clusters = {1: {"D5", "D6", "D7", "D8"}, 0: {"D1", "D2", "D3", "D4"}}
        for run in completed_run.cluster_runs:
            assert run.cluster == run.iteration % 2
            for transcript in run.transcripts():
                assert set(transcript.devices) <= clusters[run.cluster]

    def test_only_the_seed_crosses_iterations(self, completed_run):
        first, second = completed_run.cluster_runs
        assert second.input_seed == first.output
        assert second.vv_run.transcript.header["seed"] == first.ruv_run.transcript.summary["z"]

    def test_ledger_recomputable(self, completed_run, quick_consts):
        ledger = completed_run.ledger
        assert len(ledger.entries) == 2
        assert [e.m for e in ledger.entries] == [242, 64]
        assert delta_ledger(ledger.history(), quick_consts).to_dict() == ledger.to_dict()
        assert ledger.final_bound == 2 * ledger.delta

    def test_k1_is_one_cluster_expansion(self, quick_consts):
        seed = seed_bits(242, 55)
        state = infinite_expansion(make_pool(master_seed=7), seed, 1, quick_consts)
        run = cluster_expansion(make_pool(master_seed=7).cluster(1), seed, quick_consts, iteration=1)
        assert state.iteration == 1
        assert state.cluster_runs[0].output == run.output
        assert state.current_seed == run.output

    def test_infeasible_chain_runs_no_devices(self, quick_consts):
        pool = make_pool()
        with pytest.raises(ConfigError):
            infinite_expansion(pool, seed_bits(242, 56), 3, quick_consts)
        assert pool.backend.measurement_count == 0

    def test_scripted_abort_at_iteration_two(self, quick_consts):
        state = infinite_expansion(make_pool("abort_iteration2.strategies"), seed_bits(242, 57), 2, quick_consts)
        assert state.halted
        assert state.cause == "iteration-2"
        assert state.detail.startswith("ruv:")
        assert len(state.ledger.entries) == 1
        assert len(state.current_seed) == 64

    @pytest.mark.slow
    def test_fresh_devices_and_estimated_pass_rate(self, quick_consts):
        pool = make_pool(master_seed=11)
        state = infinite_expansion(pool, seed_bits(242, 58), 1, quick_consts,
                                   fresh_devices=True, pass_rate_repetitions=2)
        assert pool.generations == {0: 0, 1: 1}
        entry = state.ledger.entries[0]
        assert entry.p_label == "estimated"
        assert entry.p in (0.5, 1.0)

    @pytest.mark.slow
    def test_three_iteration_chain(self, chain_consts):
        state = infinite_expansion(make_pool(master_seed=13), seed_bits(388, 59), 3, chain_consts)
        assert state.completed, state.detail
        assert [len(run.output) for run in state.cluster_runs] == [177, 42, 6]


class TestReportAndReplay:
    def test_empty_state_report(self, quick_consts):
        state = new_state(make_pool(), seed_bits(242, 60), 2, quick_consts)
        result = report(state)
        assert result.iterations == []
        assert result.outcome == "empty"
        assert result.m == 242
        assert result.ledger is None

    @pytest.mark.integration
    def test_completed_report(self, completed_run):
        result = report(completed_run)
        assert result.outcome == "completed"
        assert len(result.ledger["entries"]) == 2
        assert result.final_bound == 2 * result.ledger["delta"]
        assert [row.output_len for row in result.iterations] == [64, 10]

    @pytest.mark.integration
    def test_run_directory_layout(self, completed_run, tmp_path):
        run_dir = write_run(completed_run, tmp_path)
        names = sorted(p.name for p in run_dir.iterdir())
        assert names == [
            "config.json",
            "summary.json",
            "summary.txt",
            "transcript-1-ruv.jsonl",
            "transcript-1-vv.jsonl",
            "transcript-2-ruv.jsonl",
            "transcript-2-vv.jsonl",
        ]
        config = json.loads((run_dir / "config.json").read_text())
        assert config["k"] == 2
        assert config["planned_lengths"] == [242, 64, 10]

    @pytest.mark.integration
    def test_replay_is_byte_identical(self, completed_run, tmp_path):
        run_dir = write_run(completed_run, tmp_path)
        result = replay(run_dir)
        assert result.ok, result.checks
        assert result.summary_json_match and result.summary_txt_match
        assert result.report.to_dict() == report(completed_run).to_dict()

    @pytest.mark.integration
    def test_tampered_transcript_fails_replay(self, completed_run, tmp_path):
        run_dir = write_run(completed_run, tmp_path)
        path = run_dir / "transcript-1-ruv.jsonl"
        lines = path.read_text().splitlines()
        record = json.loads(lines[1])
        record["a"] ^= 1
        lines[1] = dumps(record)
        path.write_text("\n".join(lines) + "\n")
        result = replay(run_dir)
        assert not result.ok
        failed = [c for c in result.checks if not c["ok"]]
        assert failed[0]["iteration"] == 1 and failed[0]["protocol"] == "ruv"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
