"""Tests for parameter functions and error bounds."""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.errors import ConfigError, InputError, InvalidProbability, InvalidSeedLength
from src.params import (
    COS2_PI_8,
    ProtocolConstants,
    composed_cluster_bound,
    delta_ledger,
    eps_ec,
    error_bounds,
    g,
    g_iter,
    input_robust_bound,
    iroot,
    load_constants,
    ruv_params,
    tower_bound,
    vv_params,
)


class TestConstants:
    """Loading and validating constants."""

    def test_paper_defaults_are_consistent(self, paper_consts):
        assert paper_consts.alpha == math.ceil(16 * 1.1 ** 2) == 20
        assert paper_consts.big_c == 2000
        assert paper_consts.mode == "paper"

    def test_paper_mode_rejects_wrong_alpha(self):
        with pytest.raises(ValueError):
            ProtocolConstants(alpha=2, gamma=0.01)

    def test_paper_mode_rejects_large_gamma(self):
        with pytest.raises(ValueError):
            ProtocolConstants(gamma=0.5)

    def test_paper_mode_rejects_test_overrides(self):
        with pytest.raises(ValueError):
            ProtocolConstants(protocol_b_rounds=100)

    def test_test_mode_relaxes_relations(self):
        consts = ProtocolConstants(mode="test", alpha=1, gamma=0.9)
        assert consts.big_c == 100

    def test_kappa_must_exceed_one(self):
        with pytest.raises(ValueError):
            ProtocolConstants(mode="test", kappa_star=1.0)

    def test_load_test_file(self, test_consts):
        assert test_consts.mode == "test"
        assert test_consts.alpha == 2
        assert test_consts.gamma == 0.5
        assert test_consts.protocol_b_rounds == 8000

    def test_gamma_as_fraction(self, tmp_path):
        path = tmp_path / "p.consts"
        path.write_text("mode = paper\nalpha = 20\ngamma = 1/170\n")
        consts = load_constants(path)
        assert consts.gamma == pytest.approx(1 / 170)

    def test_unknown_key_is_config_error(self, tmp_path):
        path = tmp_path / "bad.consts"
        path.write_text("mode = test\nalpha = 2\ngamma = 0.5\nbogus = 3\n")
        with pytest.raises(ConfigError):
            load_constants(path)

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError):
            load_constants(tmp_path / "nope.consts")

    def test_overrides_lists_changed_fields(self, test_consts):
        overrides = test_consts.overrides()
        assert overrides["mode"] == "test"
        assert overrides["alpha"] == 2
        assert "log_base" not in overrides


class TestVvParams:
    """VV parameter arithmetic."""

    def test_s2048_test_constants(self, test_consts):
        p = vv_params(2048, test_consts)
        assert p.h == 32
        assert p.v == 16
        assert p.epsilon == 0.03125
        assert p.s1_len == p.s2_len == 1024
        assert p.d == 128
        assert p.n == 8000
        assert p.feasible

    def test_split_lengths_any_constants(self, paper_consts):
        p = vv_params(2048, paper_consts)
        assert p.s1_len == p.s2_len == 1024

    def test_too_short_seed(self, test_consts):
        with pytest.raises(InvalidSeedLength):
            vv_params(7, test_consts)

    def test_v_is_half_h_and_h_monotone(self, test_consts):
        previous = 0
        for s in range(8, 4096, 13):
            p = vv_params(s, test_consts)
            assert p.v == p.h // 2
            assert p.h >= previous
            previous = p.h

    def test_d_exceeding_s2_is_flagged(self):
        consts = ProtocolConstants(mode="test", alpha=2, gamma=0.9, k4=10.0)
        p = vv_params(64, consts)
        assert "d_exceeds_s2" in p.flags
        assert not p.feasible

    def test_paper_scale_gives_empty_output(self, paper_consts):
        p = vv_params(4096, paper_consts)
        assert p.h == 1
        assert "v_zero" in p.flags
        assert not p.feasible
        assert p.n_closed_form > 0

    def test_length_factor_caps_n(self, chain_consts):
        p = vv_params(388, chain_consts)
        assert p.n == math.ceil(0.55 * p.h)
        assert "n_scaled" in p.notes

    def test_pure(self, test_consts):
        assert vv_params(1000, test_consts) == vv_params(1000, test_consts)


class TestRuvParams:
    """RUV block geometry and threshold."""

    def test_s1024_alpha2(self, test_consts):
        p = ruv_params(1024, test_consts)
        assert (p.n_games, p.t, p.num_blocks, p.sub_block_len, p.r) == (256, 16, 16, 4, 4)
        assert not p.t_constraint_ok

    def test_threshold_n4096(self, test_consts):
        p = ruv_params(4 * 4096, test_consts)
        assert p.win_threshold == pytest.approx(3417.77, abs=0.01)
        expected = COS2_PI_8 * 4096 - math.sqrt(4096 * 12) / (2 * math.sqrt(2))
        assert p.win_threshold == pytest.approx(expected)

    def test_paper_alpha_never_meets_t_constraint(self, paper_consts):
        for s in (16, 1024, 2 ** 20, 2 ** 40):
            assert not ruv_params(s, paper_consts).t_constraint_ok

    def test_too_short_seed(self, test_consts):
        with pytest.raises(InvalidSeedLength):
            ruv_params(15, test_consts)

    def test_geometry_nesting(self, test_consts, chain_consts):
        for consts in (test_consts, chain_consts):
            for s in range(16, 20000, 97):
                p = ruv_params(s, consts)
                assert p.r * p.sub_block_len <= p.t * p.num_blocks <= p.n_games

    def test_threshold_below_mean(self, test_consts):
        for s in range(16, 40000, 211):
            p = ruv_params(s, test_consts)
            assert p.win_threshold < COS2_PI_8 * p.n_games

    def test_nu_and_zeta(self, test_consts):
        p = ruv_params(1024, test_consts)
        assert p.zeta == pytest.approx(1.1 * 16 ** -1.1)
        assert p.nu == pytest.approx((12 / math.sqrt(2)) * math.sqrt(8) * 16 / 4)


class TestG:
    """Seed length after one and several cluster expansions."""

    def test_test_scale_breakdown(self, test_consts):
        value = g(2048, test_consts)
        assert value.v == 16
        assert value.nominal == 1
        assert not value.feasible
        assert "output_below_next_seed" in value.flags

    def test_g_iter_one_is_g(self, test_consts):
        chain = g_iter(1, 4096, test_consts)
        assert chain.value == g(4096, test_consts).realized

    def test_g_monotone(self, test_consts):
        previous = 0
        for s in range(8, 2 ** 16, 37):
            value = g(s, test_consts).realized
            assert value >= previous
            previous = value

    def test_chain_constants_give_feasible_three_stages(self, chain_consts):
        chain = g_iter(3, 388, chain_consts)
        assert chain.feasible
        assert chain.lengths == (388, 177, 42, 6)

    def test_chain_stops_below_minimum(self, test_consts):
        chain = g_iter(3, 2048, test_consts)
        assert not chain.feasible
        assert chain.lengths[1] == 1

    def test_iroot(self):
        assert iroot(255, 2) == 15
        assert iroot(256, 2) == 16
        assert iroot(85 ** 20 - 1, 20) == 84
        assert iroot(85 ** 20, 20) == 85


class TestErrorBounds:
    """Error formulas and the delta ledger."""

    def test_eps_vv_at_1000(self, paper_consts):
        bounds = error_bounds(1000, 1.0, paper_consts)
        assert bounds.eps_vv == pytest.approx(0.01167, abs=1e-5)
        assert bounds.eps_ec == pytest.approx(math.exp(-10))

    def test_eps_ruv_scales_with_lambda(self, test_consts):
        a = error_bounds(10 ** 9, 1.0, test_consts).raw_eps_ruv
        b = error_bounds(10 ** 9, 0.5, test_consts).raw_eps_ruv
        assert b == pytest.approx(math.sqrt(2) * a)

    def test_clamping_flag(self, paper_consts):
        bounds = error_bounds(10, 1.0, paper_consts)
        assert bounds.clamped
        assert bounds.eps_ruv == 1.0
        assert bounds.raw_eps_ruv > 1.0

    def test_decreasing_in_m(self, test_consts):
        values = [error_bounds(m, 1.0, test_consts) for m in (10, 100, 10 ** 4, 10 ** 6)]
        for earlier, later in zip(values, values[1:]):
            assert later.raw_eps_vv < earlier.raw_eps_vv
            assert later.raw_eps_ruv < earlier.raw_eps_ruv
            assert later.raw_eps_ec < earlier.raw_eps_ec

    @pytest.mark.parametrize("lam", [0.0, -0.1, 1.5])
    def test_invalid_probability(self, test_consts, lam):
        with pytest.raises(InvalidProbability):
            error_bounds(100, lam, test_consts)

    def test_input_robust_bound(self):
        assert input_robust_bound(0.1, 0.2, 0.5) == pytest.approx(0.5)

    def test_tower_bound(self, test_consts):
        assert tower_bound(1000, 0.5, test_consts) == pytest.approx(16 * math.exp(-10))

    def test_composed_cluster_bound(self, test_consts):
        v = vv_params(2048, test_consts).v
        assert v == 16
        ruv = math.sqrt(192 * (v / 4) ** (-1 / (8 * test_consts.alpha)) / 0.5)
        vv = math.sqrt(3 * math.exp(-test_consts.c_prime * 2048 ** (1 / 3)))
        assert composed_cluster_bound(2048, 0.5, test_consts) == pytest.approx((ruv + vv) / 0.5)

    def test_composed_cluster_bound_without_ruv_seed(self, test_consts):
        assert vv_params(8, test_consts).v < 4
        assert composed_cluster_bound(8, 1.0, test_consts) is None
        with pytest.raises(InvalidProbability):
            composed_cluster_bound(2048, 0.0, test_consts)


class TestDeltaLedger:
    """The delta recursion."""

    def test_single_iteration(self, test_consts):
        ledger = delta_ledger([(1000, 0.9)], test_consts)
        assert ledger.delta == pytest.approx(eps_ec(1000, 0.9, test_consts))
        assert ledger.final_bound == pytest.approx(2 * ledger.delta)

    def test_unit_probabilities_are_prefix_sums(self, test_consts):
        history = [(m, 1.0) for m in (500, 2000, 9000, 40000)]
        ledger = delta_ledger(history, test_consts)
        running = 0.0
        for entry, (m, _) in zip(ledger.entries, history):
            running += math.exp(-test_consts.c_dprime * m ** (1 / 3))
            assert entry.delta == pytest.approx(running, rel=1e-12)

    def test_empty_history(self, test_consts):
        with pytest.raises(InputError):
            delta_ledger([], test_consts)

    def test_closed_bound_in_halving_regime(self, test_consts):
        rng = np.random.default_rng(7)
        for _ in range(200):
            root = rng.uniform(5, 15)
            history = []
            for i in range(50):
                m = int(math.ceil((root + i) ** 3))
                history.append((m, float(rng.uniform(0.9, 1.0))))
            ledger = delta_ledger(history, test_consts)
            raw = [e.eps_ec_raw for e in ledger.entries]
            assert all(b <= a / 2 for a, b in zip(raw, raw[1:]))
            assert ledger.delta <= ledger.closed_bound

    def test_recomputable(self, test_consts):
        history = [(800, 0.95, "estimated"), (300, 0.9, "estimated")]
        first = delta_ledger(history, test_consts)
        again = delta_ledger(first.history(), test_consts)
        assert [e.delta for e in first.entries] == [e.delta for e in again.entries]
        assert first.entries[0].p_label == "estimated"


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
