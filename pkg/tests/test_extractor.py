"""Tests for weak designs and the strong extractor."""

import sys
from collections import Counter
from itertools import product
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import ConfigError, InputError, InvalidProbability
from src.extractor import (
    build_weak_design,
    extract,
    fold,
    one_bit_extract,
    smallest_design_size,
    solve_spec,
)
from src.params import ProtocolConstants
from src.utils.bitstring import BitString


def all_strings(n):
    return [BitString(bits) for bits in product((0, 1), repeat=n)]


def joint_counts(spec, sources):
    """Counts of (output, seed) over every source and every seed."""
    counts = Counter()
    for seed in all_strings(spec.d):
        for x in sources:
            counts[(extract(x, seed, spec).to_int(), seed.to_int())] += 1
    return counts


def tv_from_uniform(spec, sources):
    """Exact distance of (output, seed) from uniform for a flat source."""
    counts = joint_counts(spec, sources)
    total = len(sources) * 2 ** spec.d
    cells = 2 ** spec.r * 2 ** spec.d
    uniform = 1 / cells
    seen = sum(abs(c / total - uniform) for c in counts.values())
    unseen = (cells - len(counts)) * uniform
    return 0.5 * (seen + unseen)


class TestWeakDesign:
    """Polynomial designs."""

    def test_single_set(self):
        design = build_weak_design(1, 3)
        assert design.sets.shape == (1, 3)
        assert design.universe == 9

    def test_two_sets_over_gf2(self):
        design = build_weak_design(2, 2)
        assert design.universe == 4
        first, second = (set(row.tolist()) for row in design.sets)
        assert len(first) == len(second) == 2
        assert len(first & second) <= 1

    def test_sixteen_sets_over_gf7(self):
        design = build_weak_design(16, 7)
        assert design.degree == 1
        assert design.max_intersection() <= 1
        assert design.overlap_holds()

    @pytest.mark.parametrize("r,t_w", [(4, 2), (27, 3), (64, 4), (50, 5), (64, 8)])
    def test_overlap_invariant(self, r, t_w):
        design = build_weak_design(r, t_w)
        assert all(len(set(row.tolist())) == t_w for row in design.sets)
        assert design.max_intersection() <= design.degree
        assert design.overlap_holds()

    def test_sets_stay_in_universe(self):
        design = build_weak_design(300, 5)
        assert design.sets.min() >= 0
        assert design.sets.max() < design.universe

    def test_not_a_prime_power(self):
        with pytest.raises(ConfigError):
            build_weak_design(4, 6)

    def test_capacity_exceeded(self):
        with pytest.raises(ConfigError):
            build_weak_design(5, 2)


class TestSolveSpec:
    def test_single_output(self):
        spec = solve_spec(16, 1, 0.1)
        assert spec.t_w == smallest_design_size(1) == 2
        assert spec.d == 4

    def test_envelope(self):
        spec = solve_spec(2 ** 10, 16, 2 ** -5)
        assert spec.t_w == 3
        assert spec.d == 9
        assert spec.envelope == 4 * 15 ** 2 * 4
        assert spec.envelope_ok
        assert spec.c0 == 4

    def test_epsilon_does_not_grow_d(self):
        ds = [solve_spec(4096, 100, eps).d for eps in (2 ** -20, 2 ** -10, 2 ** -5, 0.25)]
        assert ds == sorted(ds, reverse=True)

    def test_parity_needs_long_source(self):
        with pytest.raises(ConfigError):
            solve_spec(10, 8, 0.1)

    def test_field_limit(self):
        consts = ProtocolConstants(mode="test", alpha=2, gamma=0.5, extractor_max_field=3)
        with pytest.raises(ConfigError):
            solve_spec(10 ** 6, 10 ** 4, 0.01, consts)

    def test_bad_arguments(self):
        with pytest.raises(InputError):
            solve_spec(16, 0, 0.1)
        with pytest.raises(InvalidProbability):
            solve_spec(16, 1, 1.0)

    def test_entropy_check(self):
        spec = solve_spec(1024, 16, 2 ** -5, h=30)
        assert spec.entropy_needed == pytest.approx(16 + 4 + 5)
        assert spec.entropy_ok
        assert not solve_spec(1024, 16, 2 ** -5, h=20).entropy_ok

    def test_chain_stage_one(self, chain_consts):
        spec = solve_spec(138864, 126240, 1 / 252481, chain_consts)
        assert spec.t_w == 7
        assert spec.d == 49

    def test_test_constants_stage(self, test_consts):
        spec = solve_spec(8000, 16, 1 / 32, test_consts)
        assert (spec.t_w, spec.d) == (3, 9)


class TestOneBitExtract:
    """The inner one-bit extractors."""

    @pytest.mark.parametrize("mode,y_len", [("parity_of_selected", 3), ("rs_hadamard", 4)])
    def test_zero_source(self, mode, y_len):
        for y in all_strings(y_len):
            assert one_bit_extract(BitString.zeros(10), y, mode) == 0

    def test_identity_code_is_parity(self):
        y = BitString([1] * 5)
        for x in all_strings(6):
            assert one_bit_extract(x, y) == x.weight() % 2

    @pytest.mark.parametrize("mode,n,y_len", [("parity_of_selected", 10, 3), ("rs_hadamard", 6, 4), ("rs_hadamard", 5, 2)])
    def test_balanced_for_every_seed(self, mode, n, y_len):
        sources = all_strings(n)
        for y in all_strings(y_len):
            ones = sum(one_bit_extract(x, y, mode) for x in sources)
            assert ones == 2 ** (n - 1)

    def test_rs_over_gf2_reads_constant_or_parity(self):
        x = BitString([1, 0, 1, 1, 0])
        assert one_bit_extract(x, BitString([0, 0]), "rs_hadamard") == 1
        assert one_bit_extract(x, BitString([1, 0]), "rs_hadamard") == 1
        x = BitString([0, 1, 0, 0, 0])
        assert one_bit_extract(x, BitString([0, 1]), "rs_hadamard") == 0
        assert one_bit_extract(x, BitString([1, 1]), "rs_hadamard") == 1

    def test_length_errors(self):
        with pytest.raises(InputError):
            one_bit_extract(BitString.zeros(3), BitString.zeros(3))
        with pytest.raises(InputError):
            one_bit_extract(BitString.zeros(8), BitString.zeros(1), "rs_hadamard")


class TestExtract:
    """Full extraction, exhaustive at tiny sizes."""

    def test_length_mismatch(self):
        spec = solve_spec(8, 2, 2 ** -5)
        with pytest.raises(InputError):
            extract(BitString.zeros(7), BitString.zeros(spec.d), spec)
        with pytest.raises(InputError):
            extract(BitString.zeros(8), BitString.zeros(spec.d + 1), spec)

    def test_output_length(self):
        spec = solve_spec(500, 40, 0.01)
        rng = np.random.default_rng(0)
        x = BitString(rng.integers(0, 2, 500))
        seed = BitString(rng.integers(0, 2, spec.d))
        assert len(extract(x, seed, spec)) == 40

    @pytest.mark.parametrize("mode", ["parity_of_selected", "rs_hadamard"])
    def test_single_output_matches_one_bit(self, mode):
        spec = solve_spec(9, 1, 0.1, mode=mode)
        rng = np.random.default_rng(1)
        for _ in range(50):
            x = BitString(rng.integers(0, 2, 9))
            seed = BitString(rng.integers(0, 2, spec.d))
            restricted = BitString(seed.bits[spec.design.sets[0]])
            assert extract(x, seed, spec).to_list() == [one_bit_extract(x, restricted, mode)]

    @pytest.mark.parametrize("n", [8, 10])
    def test_uniform_source_is_strong(self, n):
        spec = solve_spec(n, 2, 2 ** -5)
        assert spec.d == 4
        counts = joint_counts(spec, all_strings(n))
        assert len(counts) == 2 ** spec.r * 2 ** spec.d
        assert set(counts.values()) == {2 ** n // 2 ** spec.r}

    @pytest.mark.slow
    def test_uniform_source_at_d9(self):
        spec = solve_spec(8, 5, 2 ** -5)
        assert spec.d == 9
        assert tv_from_uniform(spec, all_strings(8)) == pytest.approx(0.0, abs=1e-12)

    def test_source_missing_one_point(self):
        spec = solve_spec(8, 2, 2 ** -5)
        sources = all_strings(8)
        sources.remove(BitString([1, 0, 1, 1, 0, 0, 1, 0]))
        distance = tv_from_uniform(spec, sources)
        assert 0 < distance <= spec.epsilon

    def test_source_with_one_fixed_bit(self):
        spec = solve_spec(8, 2, 2 ** -5)
        sources = [x for x in all_strings(8) if x[7] == 0]
        assert tv_from_uniform(spec, sources) <= spec.epsilon

    @pytest.mark.parametrize("mode", ["parity_of_selected", "rs_hadamard"])
    def test_linearity(self, mode):
        spec = solve_spec(64, 20, 0.01, mode=mode)
        rng = np.random.default_rng(2)
        for _ in range(100):
            x = BitString(rng.integers(0, 2, 64))
            x2 = BitString(rng.integers(0, 2, 64))
            seed = BitString(rng.integers(0, 2, spec.d))
            assert extract(x ^ x2, seed, spec) == extract(x, seed, spec) ^ extract(x2, seed, spec)

    def test_zero_source_any_seed(self):
        spec = solve_spec(64, 20, 0.01)
        rng = np.random.default_rng(3)
        for _ in range(20):
            seed = BitString(rng.integers(0, 2, spec.d))
            assert extract(BitString.zeros(64), seed, spec).weight() == 0


def test_fold_xors_residues():
    x = np.array([1, 0, 1, 1, 1, 0, 0], dtype=np.uint8)
    assert fold(x, 3).tolist() == [0, 1, 1]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
