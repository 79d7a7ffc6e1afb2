import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from lmpred import IndexContractError, ParameterRangeError, ProcessSpec
from lmpred.theory import (CRITICAL, SUB, SUPER, h_rate, l_n, l_n_sweep, max_schedule,
                           projection_error_variance, projection_error_variance_quadratic,
                           rate_regime, sigma_inv_s_bound, validate_schedule)

FN = ProcessSpec(0.3)
WN = ProcessSpec(0.0)


class TestProjectionErrorVariance:
    def test_white_noise(self):
        assert all(projection_error_variance(WN, k) == 0.0 for k in (1, 5, 40))

    def test_first_order_against_oracle(self):
        # independent oracle: sigma(0) from the Gamma closed form in mpmath
        assert projection_error_variance(FN, 1) == pytest.approx(oracles.s2_k1(0.3), rel=1e-12)
        assert projection_error_variance(FN, 1) == pytest.approx(0.07465800990, rel=1e-9)

    @pytest.mark.parametrize("k", [1, 2, 8, 64])
    def test_two_routes_agree(self, k):
        exact = projection_error_variance(FN, k)
        quad, bound = projection_error_variance_quadratic(FN, k, J=2 ** 12)
        assert math.isfinite(bound)
        assert abs(quad - exact) <= bound + 1e-12

    def test_quadratic_white_noise(self):
        assert projection_error_variance_quadratic(WN, 3) == (0.0, 0.0)

    def test_quadratic_bound_unavailable_for_arma(self):
        spec = ProcessSpec(0.2, ar=(0.4,))
        _, bound = projection_error_variance_quadratic(spec, 2, J=256)
        assert bound == math.inf

    def test_decreasing_to_zero(self):
        vals = np.array([projection_error_variance(FN, k) for k in range(1, 257)])
        assert np.all(np.diff(vals) < 0)
        assert vals[-1] < 1e-2 * vals[0]

    def test_inverse_k_decay(self):
        ks = 2 ** np.arange(4, 10)
        vals = [projection_error_variance(FN, int(k)) for k in ks]
        slope = np.polyfit(np.log(ks), np.log(vals), 1)[0]
        assert abs(slope + 1) <= 0.05

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 0.49), st.integers(1, 30))
    def test_nonnegative_and_monotone(self, d, k):
        spec = ProcessSpec(d)
        a, b = projection_error_variance(spec, k), projection_error_variance(spec, k + 1)
        assert 0 <= b <= a


class TestLn:
    def test_white_noise(self):
        assert l_n(WN, 100, 10, 5) == pytest.approx(5 / 91, rel=1e-15)

    def test_fractional(self):
        assert l_n(FN, 1000, 10, 1) == pytest.approx(oracles.s2_k1(0.3) + 1 / 991, rel=1e-12)

    @pytest.mark.parametrize("k,K,n", [(0, 1, 10), (3, 2, 10), (1, 11, 10)])
    def test_index_contract(self, k, K, n):
        with pytest.raises(IndexContractError):
            l_n(FN, n, K, k)

    def test_sweep_matches_exhaustive(self):
        vals, best = l_n_sweep(FN, 2000, 40)
        brute = [l_n(FN, 2000, 40, k) for k in range(1, 41)]
        assert np.allclose(vals, brute)
        assert best == 1 + int(np.argmin(brute))
        # the minimiser balances the decreasing bias against the linear variance term
        assert 1 < best < 40

    def test_white_noise_sweep_prefers_one(self):
        assert l_n_sweep(WN, 100, 10)[1] == 1


class TestRateRegime:
    @pytest.mark.parametrize("d,regime,slope", [(0.1, SUB, -0.5), (0.35, SUPER, -0.3),
                                                (0.25, CRITICAL, -0.5)])
    def test_examples(self, d, regime, slope):
        rr = rate_regime(ProcessSpec(d))
        assert rr.regime == regime
        assert rr.predicted_log_slope == pytest.approx(slope, abs=1e-15)
        assert rr.log_corrected == (regime == CRITICAL)

    def test_tolerance_window(self):
        assert rate_regime(ProcessSpec(0.25 + 5e-10)).regime == CRITICAL
        assert rate_regime(ProcessSpec(0.25 + 1e-6)).regime == SUPER

    def test_near_critical_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            rate_regime(ProcessSpec(0.24))
        assert "close to 1/4" in caplog.text

    def test_white_noise_out_of_range(self):
        with pytest.raises(ParameterRangeError):
            rate_regime(WN)

    def test_h_rate(self):
        assert h_rate(ProcessSpec(0.1), 100, 2) == pytest.approx(4 / 99)
        assert h_rate(ProcessSpec(0.35), 100, 2) == pytest.approx(4 / 99 ** 0.6)
        assert h_rate(ProcessSpec(0.25), 100, 2) == pytest.approx(4 * math.log(99) / 99)


class TestSchedule:
    def test_t2_examples(self):
        ok = validate_schedule(FN, 10 ** 4, 2, "T2")
        assert ok.passed
        assert ok.checks[0].margin == pytest.approx(math.log(10 ** (4 * 0.35) / 16))
        assert not validate_schedule(FN, 10 ** 4, 10, "T2").passed

    def test_t3_example(self):
        rep = validate_schedule(ProcessSpec(0.45), 10 ** 6, 2, "T3")
        assert not rep.passed
        by_name = {c.name: c for c in rep.checks}
        assert by_name["K4_vs_n"].passed
        assert not by_name["K_pow_vs_n_pow"].passed
        assert by_name["K_pow_vs_n_pow"].margin == pytest.approx(
            math.log(10 ** (6 * 0.05) / 2 ** 1.9), rel=1e-12)

    def test_unknown_theorem(self):
        with pytest.raises(ValueError):
            validate_schedule(FN, 100, 2, "T9")

    def test_max_schedule(self):
        K = max_schedule(FN, 10 ** 4)
        assert K == 2  # 2^4 = 16 <= 25.1 < 3^4 = 81
        assert max_schedule(FN, 10) == 1


class TestSigmaInvBound:
    def test_consistency(self):
        for delta in (0.05, 0.1, 0.5):
            for K in range(4, 129):
                assert sigma_inv_s_bound(FN, K, delta) * projection_error_variance(FN, K) >= 1

    def test_white_noise_inapplicable(self, caplog):
        with caplog.at_level(logging.WARNING):
            assert math.isnan(sigma_inv_s_bound(WN, 4, 0.1))
        assert "inapplicable" in caplog.text

    def test_monotone(self):
        vals = [sigma_inv_s_bound(FN, K, 0.1) for K in range(1, 100)]
        assert np.all(np.diff(vals) > 0)
