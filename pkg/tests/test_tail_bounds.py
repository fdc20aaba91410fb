import math
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roundoff_bounds.moment_engine import MomentModel, MomentSeries, moment_bound, series_for_variable, series_power
from roundoff_bounds.scenarios import accumulation_scenario
from roundoff_bounds.tail_bounds import (
    Mode,
    TailBoundError,
    TailBoundQuery,
    asymptotic_epsilon,
    asymptotic_log2_epsilon,
    best_probability,
    epsilon_for_probability,
    evaluate,
    levy_max_tail,
    markov_tail,
    optimize_k,
    significant_bits,
    tail_bound,
)

F = Fraction
U24 = F(1, 2**24)


@pytest.fixture(scope="module")
def block1():
    return accumulation_scenario(10**9, 2, U24).series(32)


@pytest.fixture(scope="module")
def block2():
    return accumulation_scenario(10**9, 10, U24).series(32)


class TestMarkov:
    def test_saturates(self):
        assert markov_tail(F(1), 1, 1.0) == 1.0

    def test_zero_moment(self):
        assert markov_tail(F(0), 3, 0.5) == 0.0

    def test_table_row(self):
        moment = U24**2 * 2 * 10**9 / 3
        p = markov_tail(moment, 1, 68.825)
        assert p == pytest.approx(5e-10, rel=2e-4)
        assert levy_max_tail(moment, 1, 68.825) == pytest.approx(1e-9, rel=2e-4)

    def test_bad_epsilon(self):
        with pytest.raises(TailBoundError):
            markov_tail(F(1), 1, 0.0)
        with pytest.raises(TailBoundError):
            levy_max_tail(F(1), 1, -1.0)

    def test_levy_clamp(self):
        assert levy_max_tail(F(1), 1, 1.2) == 1.0   # markov = 0.69 > 1/2

    def test_levy_small(self):
        assert levy_max_tail(F(1, 3), 1, 2.0) == pytest.approx(1 / 6, rel=1e-15)

    def test_huge_exponents(self):
        # 2^-2112 / (2^-40)^88 = 2^(-2112 + 3520): saturates; ensure no overflow
        assert markov_tail(F(1, 2**2112), 44, 2.0**-40) == 1.0
        assert markov_tail(F(1, 2**2112), 44, 1.0) == 0.0   # underflows to 0 in float


class TestEpsilon:
    def test_k2(self, block1):
        assert epsilon_for_probability(block1, 2, F(1, 10**9)) == pytest.approx(0.42832, rel=2e-4)

    def test_k4(self, block1):
        assert epsilon_for_probability(block1, 4, F(1, 10**9)) == pytest.approx(0.040042, rel=2e-4)

    def test_trivial(self):
        s = series_for_variable(MomentModel.support(1), 1)
        assert epsilon_for_probability(s, 1, 1, use_levy=False) == 1.0

    def test_bad_P(self, block1):
        with pytest.raises(TailBoundError):
            epsilon_for_probability(block1, 1, 0)

    def test_log_domain_matches_direct(self):
        # small inputs: direct binary64 evaluation is safe
        s = series_power(series_for_variable(MomentModel.uniform(F(3, 10)), 6), 40)
        for k in range(1, 7):
            for P in (0.5, 1e-3, 1e-9):
                direct = (2 * float(moment_bound(s, k)) / P) ** (1 / (2 * k))
                assert epsilon_for_probability(s, k, P) == pytest.approx(direct, rel=1e-12)


class TestOptimize:
    def test_block1(self, block1):
        r = optimize_k(block1, F(1, 10**9), k_max=24)
        assert r.two_k == 44
        assert r.epsilon == pytest.approx(0.010153, rel=2e-4)

    def test_block2(self, block2):
        r = optimize_k(block2, F(1, 10**10), k_max=24)
        assert r.two_k == 48
        assert r.epsilon == pytest.approx(0.023873, rel=2e-4)

    def test_full_default_range_keeps_optimum(self, block1):
        assert optimize_k(block1, F(1, 10**9)).two_k == 44

    def test_kmax_one(self, block1):
        r = optimize_k(block1, F(1, 10**9), k_max=1)
        assert r.k_used == 1
        assert r.epsilon == pytest.approx(68.825, rel=2e-4)

    def test_never_worse_than_fixed(self, block2):
        best = optimize_k(block2, F(1, 10**10))
        for k in range(1, 33):
            assert best.epsilon <= epsilon_for_probability(block2, k, F(1, 10**10))

    def test_tie_goes_to_smaller_k(self):
        # identical epsilon at k = 1 and k = 2: E(S^2) = 1, E(S^4) = 1 with P = 1, no Levy
        s = MomentSeries((F(1), F(1, 2), F(1, 24)))
        r = optimize_k(s, 1, use_levy=False)
        assert r.k_used == 1


class TestProbability:
    def test_best_probability_consistent(self, block1):
        r = best_probability(block1, 0.010153)
        assert r.k_used == 22
        assert r.probability == pytest.approx(1e-9, rel=2e-3)

    def test_tiny_probability_kept_in_log10(self, block1):
        r = tail_bound(block1, 22, 1e8)
        assert r.probability_is_tiny
        assert r.probability == 0.0
        assert r.log10_probability < -300

    def test_query_dispatch(self, block1):
        q = TailBoundQuery(block1, Mode.EPSILON_FROM_P, P=F(1, 10**9), k_fixed=2)
        assert evaluate(q).epsilon == pytest.approx(0.42832, rel=2e-4)
        q = TailBoundQuery(block1, Mode.P_FROM_EPSILON, epsilon=0.42832, k_fixed=2)
        assert evaluate(q).probability == pytest.approx(1e-9, rel=1e-3)

    def test_query_validation(self, block1):
        with pytest.raises(TailBoundError):
            TailBoundQuery(block1, Mode.EPSILON_FROM_P, P=0.1, epsilon=0.1)
        with pytest.raises(TailBoundError):
            TailBoundQuery(block1, Mode.P_FROM_EPSILON, epsilon=0.1, k_fixed=33)


series_st = st.tuples(
    st.integers(1, 10**4),
    st.fractions(min_value=F(1, 1000), max_value=10, max_denominator=1000),
).map(lambda t: accumulation_scenario(t[0], 1, t[1]).series(6))


@settings(max_examples=50, deadline=None)
@given(series_st, st.integers(1, 6), st.floats(min_value=1e-12, max_value=0.999))
def test_round_trip(series, k, P):
    eps = epsilon_for_probability(series, k, P, use_levy=False)
    assert markov_tail(moment_bound(series, k), k, eps) == pytest.approx(P, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(series_st, st.integers(1, 6), st.floats(min_value=1e-12, max_value=0.009),
       st.floats(min_value=1.01, max_value=100))
def test_epsilon_decreasing_in_P(series, k, P, ratio):
    assert epsilon_for_probability(series, k, P * ratio) < epsilon_for_probability(series, k, P)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.fractions(min_value=F(1, 100), max_value=1, max_denominator=100))
def test_epsilon_increasing_in_coefficients(j, bump):
    base = series_for_variable(MomentModel.uniform(1), 5)
    coeffs = list(base.coeffs)
    coeffs[j] += bump
    bigger = MomentSeries(tuple(coeffs))
    assert epsilon_for_probability(bigger, j, 0.01) > epsilon_for_probability(base, j, 0.01)


@settings(max_examples=40, deadline=None)
@given(series_st, st.integers(1, 6), st.floats(min_value=1e-9, max_value=1e9))
def test_probabilities_clamped(series, k, eps):
    r = tail_bound(series, k, eps)
    assert 0.0 <= r.probability <= 1.0


class TestAsymptotic:
    def test_sixth_order_constant(self):
        for u in (2.0**-24, 1e-3, 0.5):
            assert asymptotic_epsilon(u, 3) == pytest.approx((100 / 81) ** (1 / 12), rel=1e-14)
        assert asymptotic_epsilon(2.0**-24, 3) == pytest.approx(1.0177, abs=5e-5)

    def test_second_order_log_form(self):
        u = 2.0**-24
        eps = asymptotic_epsilon(u, 1)
        assert eps == pytest.approx((4 * 2.0**48 / 9) ** 0.25, rel=1e-14)
        assert math.log2(eps) == pytest.approx((24 + 1 - math.log2(3)) / 2, rel=1e-14)

    def test_u_one(self):
        assert asymptotic_epsilon(1.0, 2) == pytest.approx((4 / 9) ** (1 / 8), rel=1e-15)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_log_column_consistent(self, k):
        for u in (2.0**-24, 2.0**-53, 0.01):
            assert math.log2(asymptotic_epsilon(u, k)) == pytest.approx(asymptotic_log2_epsilon(u, k), abs=1e-12)

    @pytest.mark.parametrize("k", [1, 2, 3, 4])
    def test_matches_leading_order_of_engine(self, k):
        # n = u^{-3/2}, P = u^{3/2}; lower-order terms vanish as u -> 0
        u = F(1, 2**40)
        n = 2**60
        s = accumulation_scenario(n, 1, u).series(4)
        exact = epsilon_for_probability(s, k, F(1, 2**60))
        assert exact == pytest.approx(asymptotic_epsilon(float(u), k), rel=1e-5)

    def test_bad_k(self):
        with pytest.raises(TailBoundError):
            asymptotic_epsilon(0.5, 5)


class TestSignificantBits:
    def test_values(self):
        assert significant_bits(68.825) == pytest.approx(6.10, abs=5e-3)
        assert significant_bits(1.0) == 0.0
        assert significant_bits(0.010153) == pytest.approx(-6.62, abs=5e-3)

    def test_exact_rational(self):
        assert significant_bits(F(1, 2**1000)) == pytest.approx(-1000, rel=1e-15)
