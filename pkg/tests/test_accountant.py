"""Accountant tests: brute-force divergence oracle, pinned examples,
monotonicity and calibration properties."""

import math

import pytest
from mpmath import mpf
from oracles import renyi_divergence_oracle, renyi_mp

from binfed.accountant import (
    ALPHA_GRID,
    DpBudget,
    RdpGuarantee,
    calibrate_gamma,
    compose_rounds,
    dp_from_gamma,
    g_eval,
    rdp_to_dp,
    rr_rdp,
    self_consistent_epsilon,
)

ORACLE_GAMMAS = [0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45]
ORACLE_ALPHAS = [1, 1.5, 2, 4, 8, 32]


class TestRrRdp:
    def test_zero_bias_zero_loss(self):
        assert rr_rdp(0.0, 2).rho == 0.0

    def test_quarter_bias_order_two(self):
        # direct term-by-term oracle: 0.75^2/0.25 + 0.25^2/0.75 = 7/3
        assert rr_rdp(0.25, 2).rho == pytest.approx(math.log(7 / 3), abs=1e-15)

    def test_quarter_bias_order_one_is_kl(self):
        kl = renyi_divergence_oracle(0.25, 1)
        assert rr_rdp(0.25, 1).rho == pytest.approx(kl, abs=1e-15)
        assert rr_rdp(0.25, 1).rho == pytest.approx(0.5 * math.log(3), abs=1e-15)

    @pytest.mark.parametrize("gamma", ORACLE_GAMMAS)
    @pytest.mark.parametrize("alpha", ORACLE_ALPHAS)
    def test_oracle_equivalence(self, gamma, alpha):
        expected = renyi_divergence_oracle(gamma, alpha)
        assert abs(rr_rdp(gamma, alpha).rho - expected) <= 1e-12

    @pytest.mark.parametrize("gamma", ORACLE_GAMMAS)
    @pytest.mark.parametrize("alpha", [1.5, 2, 4, 8, 32])
    def test_symmetric_channel(self, gamma, alpha):
        forward = renyi_mp(gamma, alpha)
        backward = renyi_mp(gamma, alpha, reverse=True)
        assert abs(forward - backward) < mpf("1e-40")

    @pytest.mark.parametrize("alpha", [1, 1.5, 2, 4, 8, 32])
    def test_strictly_increasing_in_gamma(self, alpha):
        values = [rr_rdp(g, alpha).rho for g in ORACLE_GAMMAS]
        assert all(b > a for a, b in zip(values, values[1:]))

    @pytest.mark.parametrize("gamma", ORACLE_GAMMAS)
    def test_nondecreasing_in_alpha(self, gamma):
        values = [rr_rdp(gamma, a).rho for a in ORACLE_ALPHAS]
        assert all(b >= a - 1e-15 for a, b in zip(values, values[1:]))

    def test_diverges_at_half(self):
        assert rr_rdp(0.5 - 1e-8, 2).rho > 10

    @pytest.mark.parametrize("gamma", [0.1, 0.25, 0.4])
    def test_continuity_at_order_one(self, gamma):
        assert rr_rdp(gamma, 1 + 1e-6).rho == pytest.approx(
            rr_rdp(gamma, 1).rho, abs=1e-4
        )

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            rr_rdp(0.5, 2)
        with pytest.raises(ValueError):
            rr_rdp(-0.01, 2)
        with pytest.raises(ValueError):
            rr_rdp(0.25, 0.5)


class TestComposeRounds:
    def test_linear(self):
        out = compose_rounds(RdpGuarantee(2, 0.1), 10)
        assert out.alpha == 2 and out.rho == pytest.approx(1.0)

    def test_zero_annihilator(self):
        out = compose_rounds(RdpGuarantee(2, 0.0), 100)
        assert out.rho == 0.0

    def test_doubling(self):
        out = compose_rounds(RdpGuarantee(3, 0.847298), 2)
        assert out.rho == pytest.approx(1.694596)

    def test_rejects_zero_rounds(self):
        with pytest.raises(ValueError):
            compose_rounds(RdpGuarantee(2, 0.1), 0)


class TestRdpToDp:
    def test_log_delta_unit(self):
        out = rdp_to_dp(RdpGuarantee(2, 0.0), math.exp(-1))
        assert out.epsilon == pytest.approx(1.0)

    def test_order_two(self):
        out = rdp_to_dp(RdpGuarantee(2, math.log(7 / 3)), 1e-5)
        assert out.epsilon == pytest.approx(12.360223325357432, abs=1e-12)

    def test_order_eleven(self):
        out = rdp_to_dp(RdpGuarantee(11, 0.5), 1e-5)
        assert out.epsilon == pytest.approx(1.6512925464970228, abs=1e-12)

    def test_undefined_at_order_one(self):
        with pytest.raises(ValueError):
            rdp_to_dp(RdpGuarantee(1, 0.1), 1e-5)


class TestGEval:
    def test_zero_bias(self):
        assert g_eval(0.0, DpBudget(2, 1e-5)) == 0.0

    def test_matches_adapted_order_identity(self):
        budget = DpBudget(2, 1e-5)
        alpha_star = 1 + 2 * math.log(1e5) / 2
        assert alpha_star == pytest.approx(12.512925464970229)
        for gamma in [0.05, 0.1, 0.25, 0.4]:
            expected = (alpha_star - 1) * rr_rdp(gamma, alpha_star).rho
            assert g_eval(gamma, budget) == pytest.approx(expected, abs=1e-12)

    def test_monotone_in_gamma(self):
        budget = DpBudget(2, 1e-5)
        assert g_eval(0.1, budget) < g_eval(0.2, budget) < g_eval(0.3, budget)


class TestCalibrateGamma:
    def test_unbounded_budget_hits_upper_bracket(self):
        gamma = calibrate_gamma(DpBudget(1e9, 1e-5), 1)
        assert gamma == pytest.approx(0.5, abs=1e-6)
        assert gamma < 0.5

    def test_pinned_value(self):
        # grid scan of g at step 1e-6 brackets the crossing in
        # [0.010186, 0.010187) for (eps=2, delta=1e-5, T=100)
        gamma = calibrate_gamma(DpBudget(2, 1e-5), 100)
        assert 0.010186 <= gamma < 0.010187

    def test_tighter_budget_means_smaller_bias(self):
        loose = calibrate_gamma(DpBudget(2, 1e-5), 100)
        tight = calibrate_gamma(DpBudget(0.1, 1e-5), 1000)
        assert tight < loose

    @pytest.mark.parametrize(
        "eps,delta,t", [(2, 1e-5, 100), (0.5, 1e-5, 100), (8, 1e-6, 1000)]
    )
    def test_tightness(self, eps, delta, t):
        budget = DpBudget(eps, delta)
        gamma = calibrate_gamma(budget, t)
        threshold = math.log(1 / delta) / t
        assert threshold - 1e-6 <= g_eval(gamma, budget) <= threshold


class TestDpFromGamma:
    def test_zero_bias_grid_minimum(self):
        # rho = 0 everywhere, so the fixed grid decides and its largest
        # order wins: eps = log(1e5)/255
        out = dp_from_gamma(0.0, 100, 1e-5)
        assert out.epsilon == pytest.approx(math.log(1e5) / 255, abs=1e-12)
        assert max(ALPHA_GRID) == 256

    def test_quarter_bias_upper_bounded_by_order_two(self):
        out = dp_from_gamma(0.25, 1, 1e-5)
        assert out.epsilon <= 12.360223325357432

    @pytest.mark.parametrize(
        "eps,delta,t", [(2, 1e-5, 100), (0.5, 1e-5, 100), (8, 1e-6, 1000)]
    )
    def test_round_trip(self, eps, delta, t):
        gamma = calibrate_gamma(DpBudget(eps, delta), t)
        assert dp_from_gamma(gamma, t, delta).epsilon <= eps

    def test_self_consistent_epsilon_fixed_point(self):
        gamma, t, delta = 0.1, 50, 1e-5
        eps_star = self_consistent_epsilon(gamma, t, delta)
        adapted = 1 + 2 * math.log(1 / delta) / eps_star
        achieved = rdp_to_dp(compose_rounds(rr_rdp(gamma, adapted), t), delta)
        assert achieved.epsilon == pytest.approx(eps_star, rel=1e-10)

    def test_nondecreasing_in_rounds(self):
        for gamma in [0.0, 0.05, 0.25, 0.45]:
            values = [dp_from_gamma(gamma, t, 1e-5).epsilon for t in range(1, 60)]
            assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


class TestBudgetTypes:
    def test_invalid_budget(self):
        with pytest.raises(ValueError):
            DpBudget(-1, 1e-5)
        with pytest.raises(ValueError):
            DpBudget(1, 0.0)
        with pytest.raises(ValueError):
            DpBudget(1, 1.0)

    def test_invalid_guarantee(self):
        with pytest.raises(ValueError):
            RdpGuarantee(0.5, 0.1)
        with pytest.raises(ValueError):
            RdpGuarantee(2, -0.1)
