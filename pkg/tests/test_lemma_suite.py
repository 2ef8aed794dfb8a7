"""Tests for the randomized lemma suite."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import InputError
from src.infotheory import CqState, DensityMatrix, security_distance
from src.lemma_suite import (
    FAMILIES,
    parse_dims,
    random_block_state,
    run_family,
    run_lemma_suite,
)


class TestParseDims:
    def test_forms(self):
        assert parse_dims("2x2x2") == (2, 2, 2)
        assert parse_dims("2,3") == (2, 3)
        assert parse_dims("4") == (4,)

    @pytest.mark.parametrize("spec", ["", "2xq", "1x2", "4x4x8"])
    def test_rejects(self, spec):
        with pytest.raises(InputError):
            parse_dims(spec)


class TestFamilies:
    @pytest.mark.parametrize("name", sorted(FAMILIES))
    def test_family_has_no_violations(self, name):
        result = run_family(name, 15, np.random.default_rng(100))
        assert result.passed, result
        assert result.trials == 15

    def test_larger_factors(self):
        for name in ("pinsker", "chain_rule", "conditioning_reduces_entropy", "metric"):
            assert run_family(name, 5, np.random.default_rng(101), dims=(3, 4)).passed

    def test_unknown_family(self):
        with pytest.raises(InputError):
            run_family("nope", 1, np.random.default_rng(0))

    def test_block_state_distance_grows_with_mix(self):
        rng = np.random.default_rng(102)
        ideal = random_block_state(rng, 0.0)
        noisy = random_block_state(rng, 0.5)

        def block_distance(state):
            merged = state.reduced(("X0", "X1", "E"))
            cq = CqState(DensityMatrix(merged.data, (16, 2), ("X", "E")), "X")
            return security_distance(cq)

        assert block_distance(ideal) == pytest.approx(0.0, abs=1e-9)
        assert block_distance(noisy) > 0.0


class TestSuite:
    def test_subset_and_table(self):
        report = run_lemma_suite(trials=5, seed=7, families=["pinsker", "metric"])
        assert [r.name for r in report.results] == ["pinsker", "metric"]
        assert report.passed
        table = report.table()
        assert "pinsker" in table and "PASS" in table

    def test_deterministic_for_a_seed(self):
        first = run_lemma_suite(trials=4, seed=3, families=["conditioning_bound"])
        second = run_lemma_suite(trials=4, seed=3, families=["conditioning_bound"])
        assert first.results[0].worst_margin == second.results[0].worst_margin

    def test_rejects_zero_trials(self):
        with pytest.raises(InputError):
            run_lemma_suite(trials=0)

    @pytest.mark.slow
    def test_full_suite(self):
        report = run_lemma_suite(trials=200, seed=11)
        assert report.passed, report.table()


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
