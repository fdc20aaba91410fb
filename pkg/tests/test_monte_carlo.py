import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from roundoff_bounds.moment_engine import closed_form_moment
from roundoff_bounds.monte_carlo import (
    BLOCK_SIZE,
    DataModel,
    FilterNoise,
    GridPoint,
    Noise,
    SimConfig,
    SimReport,
    SimulationError,
    _symmetric_uniform,
    brownian_abs_max_sf,
    confidence_interval,
    epsilon_grid_for_probabilities,
    hardware_error_paths,
    levy_factor_check,
    scenario_sigma,
    simulate_paths,
    validate_bound,
)
from roundoff_bounds.scenarios import FilterSpec, accumulation_scenario
from roundoff_bounds.tail_bounds import TailBoundResult, tail_bound

F = Fraction


def binomial_bisect(successes, trials, target, upper):
    """p with P(X >= s) = target (lower limit) or P(X <= s) = target (upper)."""
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = (lo + hi) / 2
        if upper:
            val = stats.binom.cdf(successes, trials, mid)
            lo, hi = (mid, hi) if val > target else (lo, mid)
        else:
            val = stats.binom.sf(successes - 1, trials, mid)
            lo, hi = (lo, mid) if val > target else (mid, hi)
    return (lo + hi) / 2


class TestConfidenceInterval:
    def test_zero_successes(self):
        lo, hi = confidence_interval(0, 100, 0.99)
        assert lo == 0.0
        assert hi == pytest.approx(1 - 0.005 ** (1 / 100), rel=1e-10)
        assert hi == pytest.approx(0.0516, abs=1e-3)

    def test_all_successes(self):
        lo, hi = confidence_interval(100, 100, 0.99)
        assert hi == 1.0
        assert lo == pytest.approx(0.005 ** (1 / 100), rel=1e-10)

    def test_symmetric_half(self):
        lo, hi = confidence_interval(50, 100, 0.99)
        assert lo + hi == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("s,n", [(1, 10), (7, 40), (50, 100), (999, 10**5)])
    def test_against_bisection(self, s, n):
        lo, hi = confidence_interval(s, n, 0.99)
        assert lo == pytest.approx(binomial_bisect(s, n, 0.005, upper=False), rel=1e-8)
        assert hi == pytest.approx(binomial_bisect(s, n, 0.005, upper=True), rel=1e-8)

    def test_invalid(self):
        with pytest.raises(SimulationError):
            confidence_interval(5, 4)
        with pytest.raises(SimulationError):
            confidence_interval(0, 0)


def test_symmetric_uniform_draws():
    rng = np.random.Generator(np.random.Philox(1))
    x = _symmetric_uniform(rng, 200_000)
    assert np.all(np.abs(x) < 1)
    assert np.all(x != 0)
    assert abs(x.mean()) < 0.01
    assert x.var() == pytest.approx(1 / 3, rel=0.01)


def model_config(n=200, R=600, grid=(0.5, 2.0, 5.0, 10.0), **kw):
    return SimConfig(seed=kw.pop("seed", 7), replications=R, epsilon_grid=grid, steps=n,
                     scenario=accumulation_scenario(n, 1, 1), **kw)


class TestSimulate:
    def test_deterministic(self):
        a = simulate_paths(model_config())
        b = simulate_paths(model_config())
        assert a == b
        assert a.to_dict() == b.to_dict()

    def test_workers_do_not_change_result(self):
        cfg = model_config(R=3 * BLOCK_SIZE + 17)
        one = simulate_paths(cfg)
        many = simulate_paths(SimConfig(**{**vars(cfg), "workers": 4}))
        assert one.to_dict() == many.to_dict()

    def test_seed_matters(self):
        assert simulate_paths(model_config(seed=1)).grid != simulate_paths(model_config(seed=2)).grid

    def test_counts_ordered(self):
        rep = simulate_paths(model_config())
        for g in rep.grid:
            assert g.count_end <= g.count_max
            assert g.ci_lo <= g.p_max <= g.ci_hi
        counts = [g.count_max for g in rep.grid]
        assert counts == sorted(counts, reverse=True)

    def test_single_step_beyond_support(self):
        cfg = SimConfig(seed=3, replications=1000, epsilon_grid=(0.5, 2.0), steps=1,
                        scenario=accumulation_scenario(1, 1, 1))
        rep = simulate_paths(cfg)
        assert rep.grid[1].count_max == 0
        assert rep.grid[0].p_end == pytest.approx(0.5, abs=0.06)

    def test_endpoint_moments(self):
        n = 64
        rep = simulate_paths(model_config(n=n, R=20_000))
        for k in (1, 2, 3, 4):
            assert rep.endpoint_moments[k] == pytest.approx(float(closed_form_moment(n, 1, k)), rel=0.08)

    def test_multiple_variables_per_step(self):
        cfg = SimConfig(seed=5, replications=4000, epsilon_grid=(1.0,), steps=50,
                        scenario=accumulation_scenario(50, 3, 1))
        rep = simulate_paths(cfg)
        assert rep.endpoint_moments[1] == pytest.approx(50, rel=0.08)

    def test_runtime_hidden_by_default(self):
        rep = simulate_paths(model_config(R=10))
        assert rep.to_dict()["runtime_seconds"] is None
        assert rep.to_dict(include_runtime=True)["runtime_seconds"] >= 0

    def test_filter_paths(self):
        filt = FilterSpec(0, F(1, 4))
        cfg = SimConfig(seed=9, replications=20_000, epsilon_grid=(0.1, 1.0, 1.4), steps=100,
                        filter_noise=FilterNoise(filt, F(1)))
        rep = simulate_paths(cfg)
        # stationary variance: (1/3) sum y_i^2 = (1/3) / (1 - 1/16)
        assert rep.endpoint_moments[1] == pytest.approx(16 / 45, rel=0.05)
        # |error| <= u * sum |y_i| = 4/3
        assert rep.grid[2].count_max == 0


class TestConfigValidation:
    @pytest.mark.parametrize("kw", [
        dict(replications=0), dict(steps=0), dict(epsilon_grid=()), dict(epsilon_grid=(2.0, 1.0)),
        dict(epsilon_grid=(-1.0,)), dict(level=1.0), dict(workers=0), dict(seed=-1),
    ])
    def test_rejects(self, kw):
        base = dict(seed=1, replications=10, epsilon_grid=(1.0,), steps=10,
                    scenario=accumulation_scenario(10, 1, 1))
        with pytest.raises(SimulationError):
            SimConfig(**{**base, **kw})

    def test_needs_exactly_one_source(self):
        with pytest.raises(SimulationError):
            SimConfig(seed=1, replications=10, epsilon_grid=(1.0,), steps=10)

    def test_op_cap(self):
        with pytest.raises(SimulationError, match="exceeds the cap"):
            simulate_paths(model_config(n=1000, R=1000, op_cap=10**5))

    def test_desk_scale(self):
        with pytest.raises(SimulationError, match="desk scale"):
            simulate_paths(model_config(n=10, R=11, max_replications=10))

    def test_layout_mismatch(self):
        cfg = SimConfig(seed=1, replications=10, epsilon_grid=(1.0,), steps=7,
                        scenario=accumulation_scenario(10, 1, 1))
        with pytest.raises(SimulationError, match="not a multiple"):
            simulate_paths(cfg)


def report(points, R=1000):
    return SimReport(seed=0, replications=R, steps=1, level=0.99, grid=tuple(points),
                     endpoint_moments={}, runtime_seconds=0.0)


def point(eps, count, R=1000, count_end=None):
    ce = count if count_end is None else count_end
    lo, hi = confidence_interval(count, R)
    elo, ehi = confidence_interval(ce, R)
    return GridPoint(eps, count, ce, count / R, ce / R, lo, hi, elo, ehi)


def bound(eps, p, levy=True):
    return TailBoundResult(1, F(1), eps, p, levy, math.log10(p))


class TestValidate:
    def test_fail_when_lower_limit_exceeds(self):
        sim = report([point(1.0, 300)])
        v = validate_bound(sim, bound(1.0, 0.20))
        assert sim.grid[0].ci_lo > 0.26
        assert not v.passed and v.failures == (1.0,)

    def test_pass_within_noise(self):
        # empirical 0.22 but the lower limit sits below 0.20
        v = validate_bound(report([point(1.0, 220)]), bound(1.0, 0.20))
        assert v.passed

    def test_endpoint_event_without_levy(self):
        sim = report([point(1.0, 500, count_end=100)])
        assert validate_bound(sim, bound(1.0, 0.2, levy=False)).passed
        assert not validate_bound(sim, bound(1.0, 0.2, levy=True)).passed

    def test_slack(self):
        v = validate_bound(report([point(1.0, 100)]), bound(1.0, 0.5))
        assert v.slack == (pytest.approx(5.0),)

    def test_off_grid(self):
        with pytest.raises(SimulationError):
            validate_bound(report([point(1.0, 1)]), bound(2.0, 0.5))

    def test_levy_check(self):
        assert levy_factor_check(report([point(1.0, 200, count_end=100)])).passed
        assert not levy_factor_check(report([point(1.0, 600, count_end=100)])).passed

    def test_second_order_bound_at_one_half(self):
        # 2 (n/3) / eps^2 = 1/2 at eps^2 = 4n/3
        n = 10**4
        scen = accumulation_scenario(n, 1, 1)
        eps = math.sqrt(4 * n / 3)
        b = tail_bound(scen.series(1), 1, eps)
        assert b.probability == pytest.approx(0.5, rel=1e-12)
        rep = simulate_paths(SimConfig(seed=13, replications=2000, epsilon_grid=(eps,), steps=n, scenario=scen))
        assert rep.grid[0].ci_lo <= 0.5
        assert validate_bound(rep, b).passed

    def test_real_bound_passes(self):
        n = 100
        scen = accumulation_scenario(n, 1, 1)
        series = scen.series(4)
        grid = epsilon_grid_for_probabilities(scenario_sigma(scen), [0.5, 0.1, 0.01])
        rep = simulate_paths(SimConfig(seed=11, replications=5000, epsilon_grid=grid, steps=n, scenario=scen))
        for k in (1, 2, 3, 4):
            assert validate_bound(rep, [tail_bound(series, k, e) for e in grid]).passed
        assert levy_factor_check(rep).passed


class TestBrownian:
    def test_limits(self):
        assert brownian_abs_max_sf(0.0) == 1.0
        assert brownian_abs_max_sf(10.0) < 1e-20

    def test_tail_matches_reflection(self):
        # for large x the max-excursion tail is about 4 P(B_1 >= x) = 2 P(|B_1| >= x)
        x = 4.0
        assert brownian_abs_max_sf(x) == pytest.approx(4 * stats.norm.sf(x), rel=1e-3)

    def test_grid_inverts(self):
        probs = [0.5, 0.1, 1e-3]
        grid = epsilon_grid_for_probabilities(2.0, probs)
        assert list(grid) == sorted(grid)
        for x, p in zip(grid, sorted(probs, reverse=True)):
            assert brownian_abs_max_sf(x / 2.0) == pytest.approx(p, rel=1e-9)

    def test_sigma(self):
        assert scenario_sigma(accumulation_scenario(300, 1, 1)) == pytest.approx(10.0)


class TestHardware:
    def test_exact_data_has_no_error(self):
        stats_ = hardware_error_paths(1000, DataModel("constant", 1.0), seed=1, R=300)
        assert all(v == 0 for v in stats_.normalized_moments.values())
        assert stats_.max_consistency_residual == 0

    def test_zero_data_has_no_error(self):
        hs = hardware_error_paths(200, DataModel("constant", 0.0), seed=1, R=100)
        assert all(v == 0 for v in hs.normalized_moments.values())

    def test_uniform_data_moments(self):
        hs = hardware_error_paths(500, DataModel(), seed=2, R=512)
        assert hs.samples == 500 * 512
        assert abs(hs.mean) < 0.05
        assert hs.normalized_moments[2] == pytest.approx(1 / 3, abs=0.05)
        for j in (3, 5, 7):
            assert abs(hs.normalized_moments[j]) < 0.05
        assert hs.max_consistency_residual == 0

    def test_deterministic(self):
        a = hardware_error_paths(100, DataModel(), seed=4, R=300)
        b = hardware_error_paths(100, DataModel(), seed=4, R=300, workers=3)
        assert a == b

    def test_simulate_hardware(self):
        cfg = SimConfig(seed=4, replications=256, epsilon_grid=(1e-6, 1e-3), steps=300,
                        noise=Noise.HARDWARE)
        rep = simulate_paths(cfg)
        assert rep.grid[1].count_max == 0   # drift ~ sqrt(n) * 2^-23 * a few hundred

    def test_cap(self):
        with pytest.raises(SimulationError):
            hardware_error_paths(10**4, DataModel(), seed=1, R=10**4, op_cap=10**6)

    def test_bad_data_model(self):
        with pytest.raises(SimulationError):
            DataModel("gaussian")
        with pytest.raises(SimulationError):
            DataModel("logarithmic", 0.0, 1.0)
