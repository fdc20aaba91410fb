"""Seeded Monte Carlo validation of the analytic bounds.

Random streams
--------------
Replications are processed in fixed blocks of ``BLOCK_SIZE``.  Block ``b``
draws from ``numpy.random.Philox`` (4x64, 10 rounds) keyed by
``SeedSequence(seed, spawn_key=(b,))``.  Block layout and time chunking are
constants, so the counts depend only on the configuration and never on how
many workers run the blocks.  This scheme is versioned as ``RNG_SCHEME``.

Uniform errors on (-u, u) are the odd multiples of 2^-53 scaled by u: a
53-bit draw k maps to (2k + 1 - 2^53) / 2^53, which is exactly symmetric and
never hits the endpoints.
"""

from __future__ import annotations

import enum
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from .scenarios import FilterSpec, Scenario
from .tail_bounds import TailBoundResult

RNG_SCHEME = "philox4x64-10/seedsequence-block256/v1"
BLOCK_SIZE = 256
CHUNK_STEPS = 2048
DEFAULT_OP_CAP = 10**10
DESK_MAX_REPLICATIONS = 10**6
DESK_MAX_STEPS = 10**6
DEFAULT_LEVEL = 0.99
MOMENT_ORDERS = (1, 2, 3, 4)


class SimulationError(ValueError):
    pass


class Noise(str, enum.Enum):
    MODEL = "MODEL"
    HARDWARE = "HARDWARE"


@dataclass(frozen=True)
class DataModel:
    """Distribution of the accumulated data d_i in HARDWARE mode (binary32)."""

    kind: str = "uniform"   # uniform | logarithmic | constant
    low: float = 1.0
    high: float = 2.0

    def __post_init__(self):
        if self.kind not in ("uniform", "logarithmic", "constant"):
            raise SimulationError(f"unknown data model {self.kind!r}")
        if self.kind == "logarithmic" and not 0 < self.low < self.high:
            raise SimulationError("logarithmic data needs 0 < low < high")
        if self.kind == "uniform" and not self.low < self.high:
            raise SimulationError("uniform data needs low < high")

    def draw(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "constant":
            return np.full(shape, self.low, dtype=np.float32)
        if self.kind == "uniform" and self.low == 1.0 and self.high == 2.0:
            # every binary32 value in [1, 2) equally likely
            mant = rng.integers(0, 1 << 23, size=shape, dtype=np.int64)
            return (1.0 + mant * 2.0**-23).astype(np.float32)
        x = rng.random(shape)
        if self.kind == "uniform":
            return (self.low + (self.high - self.low) * x).astype(np.float32)
        return np.exp(math.log(self.low) + (math.log(self.high) - math.log(self.low)) * x).astype(np.float32)


@dataclass(frozen=True)
class FilterNoise:
    """Filter path: m uniform(+-u) errors injected per step, propagated by the recurrence."""

    filt: FilterSpec
    u: Fraction
    m: int = 1


@dataclass(frozen=True)
class SimConfig:
    seed: int
    replications: int
    epsilon_grid: tuple[float, ...]
    steps: int
    scenario: Scenario | None = None
    filter_noise: FilterNoise | None = None
    noise: Noise = Noise.MODEL
    data_model: DataModel = DataModel()
    level: float = DEFAULT_LEVEL
    op_cap: int = DEFAULT_OP_CAP
    workers: int = 1
    max_replications: int = DESK_MAX_REPLICATIONS
    max_steps: int = DESK_MAX_STEPS

    def __post_init__(self):
        object.__setattr__(self, "noise", Noise(self.noise))
        object.__setattr__(self, "epsilon_grid", tuple(float(e) for e in self.epsilon_grid))
        if not 0 <= self.seed < 2**64:
            raise SimulationError("seed must be a 64-bit unsigned integer")
        if self.replications < 1:
            raise SimulationError("replications must be >= 1")
        if self.steps < 1:
            raise SimulationError("steps must be >= 1")
        if not self.epsilon_grid:
            raise SimulationError("epsilon grid is empty")
        if any(e <= 0 for e in self.epsilon_grid):
            raise SimulationError("epsilon grid values must be positive")
        if any(b <= a for a, b in zip(self.epsilon_grid, self.epsilon_grid[1:])):
            raise SimulationError("epsilon grid must be strictly increasing")
        if not 0 < self.level < 1:
            raise SimulationError("level must lie in (0, 1)")
        if self.noise is Noise.MODEL and (self.scenario is None) == (self.filter_noise is None):
            raise SimulationError("MODEL noise needs exactly one of scenario / filter_noise")
        if self.workers < 1:
            raise SimulationError("workers must be >= 1")

    def step_layout(self) -> list[tuple[float, int]]:
        """[(u, variables per step)] for a MODEL scenario."""
        layout = []
        for g in self.scenario.groups:
            per, rem = divmod(g.count, self.steps)
            if rem:
                raise SimulationError(
                    f"group {g.label or g.model.u} has {g.count} variables, "
                    f"not a multiple of steps={self.steps}")
            layout.append((float(g.model.u), per))
        return layout

    def estimated_ops(self) -> int:
        if self.noise is Noise.HARDWARE:
            per_step = 1
        elif self.filter_noise is not None:
            per_step = self.filter_noise.m
        else:
            per_step = max(1, sum(c for _, c in self.step_layout()))
        return self.replications * self.steps * per_step


@dataclass(frozen=True)
class GridPoint:
    epsilon: float
    count_max: int
    count_end: int
    p_max: float
    p_end: float
    ci_lo: float
    ci_hi: float
    end_ci_lo: float
    end_ci_hi: float


@dataclass(frozen=True)
class SimReport:
    seed: int
    replications: int
    steps: int
    level: float
    grid: tuple[GridPoint, ...]
    endpoint_moments: dict[int, float]
    runtime_seconds: float = field(compare=False)
    rng: str = RNG_SCHEME

    def to_dict(self, include_runtime: bool = False) -> dict:
        return {
            "seed": self.seed,
            "replications": self.replications,
            "steps": self.steps,
            "level": self.level,
            "rng": self.rng,
            "grid": [vars(g).copy() for g in self.grid],
            "endpoint_moments": {str(2 * k): v for k, v in sorted(self.endpoint_moments.items())},
            "runtime_seconds": self.runtime_seconds if include_runtime else None,
        }


def confidence_interval(successes: int, trials: int, level: float = DEFAULT_LEVEL) -> tuple[float, float]:
    """Two-sided Clopper-Pearson interval for a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials:
        raise SimulationError("need 0 <= successes <= trials, trials >= 1")
    alpha = 1 - level
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return lo, hi


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _symmetric_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    k = rng.integers(0, 1 << 53, size=shape, dtype=np.int64)
    return (2 * k + 1 - (1 << 53)).astype(np.float64) * 2.0**-53


@dataclass
class _BlockStats:
    max_abs: np.ndarray
    end: np.ndarray


def _run_model_block(cfg: SimConfig, layout, rng: np.random.Generator, size: int) -> _BlockStats:
    carry = np.zeros(size)
    running = np.zeros(size)
    done = 0
    while done < cfg.steps:
        chunk = min(CHUNK_STEPS, cfg.steps - done)
        inc = np.zeros((size, chunk))
        for u, per in layout:
            if per == 1:
                inc += u * _symmetric_uniform(rng, (size, chunk))
            else:
                inc += u * _symmetric_uniform(rng, (size, chunk, per)).sum(axis=2)
        path = np.cumsum(inc, axis=1)
        path += carry[:, None]
        np.maximum(running, np.abs(path).max(axis=1), out=running)
        carry = path[:, -1].copy()
        done += chunk
    return _BlockStats(running, carry)


def _run_filter_block(cfg: SimConfig, rng: np.random.Generator, size: int) -> _BlockStats:
    fn = cfg.filter_noise
    b1, b2, u = float(fn.filt.b1), float(fn.filt.b2), float(fn.u)
    prev = np.zeros(size)
    cur = np.zeros(size)
    running = np.zeros(size)
    done = 0
    while done < cfg.steps:
        chunk = min(CHUNK_STEPS, cfg.steps - done)
        x = u * _symmetric_uniform(rng, (size, chunk, fn.m)).sum(axis=2)
        for t in range(chunk):
            prev, cur = cur, x[:, t] - b1 * cur - b2 * prev
            np.maximum(running, np.abs(cur), out=running)
        done += chunk
    return _BlockStats(running, cur)


def _two_sum(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@dataclass
class _HardwareBlock:
    stats: _BlockStats
    # power sums of X/u for orders 0..16
    norm_sums: np.ndarray
    residual: float


def _run_hardware_block(steps: int, data: DataModel, rng: np.random.Generator, size: int) -> _HardwareBlock:
    acc = np.zeros(size, dtype=np.float32)
    ref_hi = np.zeros(size)
    ref_lo = np.zeros(size)
    err_sum = np.zeros(size)
    running = np.zeros(size)
    sums = np.zeros(17)
    done = 0
    with np.errstate(over="raise", invalid="raise"):
        while done < steps:
            chunk = min(CHUNK_STEPS, steps - done)
            d = data.draw(rng, (size, chunk))
            for t in range(chunk):
                dt = d[:, t]
                exact_hi, exact_lo = _two_sum(acc.astype(np.float64), dt.astype(np.float64))
                try:
                    new = acc + dt
                except FloatingPointError as exc:
                    raise SimulationError("data model overflows binary32 accumulation") from exc
                if not np.all(np.isfinite(new)):
                    raise SimulationError("data model overflows binary32 accumulation")
                x = (new.astype(np.float64) - exact_hi) - exact_lo
                half_ulp = np.abs(np.spacing(new)).astype(np.float64) / 2
                z = x / half_ulp
                p = np.ones(size)
                for j in range(17):
                    sums[j] += p.sum()
                    p = p * z
                acc = new
                # double-double reference of the exact running sum of d
                s, e = _two_sum(ref_hi, dt.astype(np.float64))
                e = e + ref_lo
                ref_hi, ref_lo = _two_sum(s, e)
                err_sum += x
                path = (acc.astype(np.float64) - ref_hi) - ref_lo
                np.maximum(running, np.abs(path), out=running)
            done += chunk
    end = (acc.astype(np.float64) - ref_hi) - ref_lo
    residual = float(np.max(np.abs(end - err_sum))) if size else 0.0
    return _HardwareBlock(_BlockStats(running, end), sums, residual)


def _blocks(replications: int) -> list[tuple[int, int]]:
    return [(b, min(BLOCK_SIZE, replications - b * BLOCK_SIZE))
            for b in range(math.ceil(replications / BLOCK_SIZE))]


def _map_blocks(fn: Callable, blocks, workers: int) -> list:
    if workers == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


def _check_cap(cfg: SimConfig) -> None:
    if cfg.replications > cfg.max_replications or cfg.steps > cfg.max_steps:
        raise SimulationError(
            f"R={cfg.replications}, n={cfg.steps} beyond desk scale "
            f"(R <= {cfg.max_replications}, n <= {cfg.max_steps})")
    ops = cfg.estimated_ops()
    if ops > cfg.op_cap:
        raise SimulationError(
            f"estimated cost {ops:.3e} path-steps exceeds the cap {cfg.op_cap:.3e}")


def simulate_paths(config: SimConfig) -> SimReport:
    """Count max-excursion and endpoint exceedances over the epsilon grid."""
    _check_cap(config)
    start = time.perf_counter()
    grid = np.asarray(config.epsilon_grid)

    if config.noise is Noise.HARDWARE:
        def run(block):
            b, size = block
            return _run_hardware_block(config.steps, config.data_model, _block_rng(config.seed, b), size).stats
    elif config.filter_noise is not None:
        def run(block):
            b, size = block
            return _run_filter_block(config, _block_rng(config.seed, b), size)
    else:
        layout = config.step_layout()

        def run(block):
            b, size = block
            return _run_model_block(config, layout, _block_rng(config.seed, b), size)

    def counted(block):
        st = run(block)
        cmax = (st.max_abs[:, None] >= grid[None, :]).sum(axis=0)
        cend = (np.abs(st.end)[:, None] >= grid[None, :]).sum(axis=0)
        powers = [float(np.sum(st.end ** (2 * k))) for k in MOMENT_ORDERS]
        return cmax, cend, powers

    results = _map_blocks(counted, _blocks(config.replications), config.workers)
    count_max = np.zeros(len(grid), dtype=np.int64)
    count_end = np.zeros(len(grid), dtype=np.int64)
    power_sums = [0.0] * len(MOMENT_ORDERS)
    for cmax, cend, powers in results:   # block order: deterministic merge
        count_max += cmax
        count_end += cend
        power_sums = [a + b for a, b in zip(power_sums, powers)]

    R = config.replications
    points = []
    for eps, cm, ce in zip(config.epsilon_grid, count_max.tolist(), count_end.tolist()):
        lo, hi = confidence_interval(cm, R, config.level)
        elo, ehi = confidence_interval(ce, R, config.level)
        points.append(GridPoint(eps, cm, ce, cm / R, ce / R, lo, hi, elo, ehi))
    return SimReport(
        seed=config.seed,
        replications=R,
        steps=config.steps,
        level=config.level,
        grid=tuple(points),
        endpoint_moments={k: s / R for k, s in zip(MOMENT_ORDERS, power_sums)},
        runtime_seconds=time.perf_counter() - start,
    )


@dataclass(frozen=True)
class HardwareStats:
    steps: int
    replications: int
    samples: int
    # raw moments E((X/u)^j), j = 1..8, with standard errors
    normalized_moments: dict[int, float]
    standard_errors: dict[int, float]
    mean_over_sigma: float
    max_consistency_residual: float

    @property
    def mean(self) -> float:
        return self.normalized_moments[1]

    def even_moment_ratio(self, j: int) -> float:
        """E((X/u)^{2j}) relative to the uniform value 1/(2j+1)."""
        return self.normalized_moments[2 * j] * (2 * j + 1)


def hardware_error_paths(n: int, data_model: DataModel, seed: int, R: int,
                         op_cap: int = DEFAULT_OP_CAP, workers: int = 1) -> HardwareStats:
    """Run ``a_i = a_{i-1} + d_i`` in binary32 and measure every rounding error.

    Errors X_i = fl(a_{i-1} + d_i) - (a_{i-1} + d_i) are exact (error-free
    transformation in binary64) and normalized by u = ulp(a_i) / 2.  A
    double-double accumulator of the exact data sum checks that the errors
    add up to the observed drift.
    """
    if n < 1 or R < 1:
        raise SimulationError("n and R must be >= 1")
    if n * R > op_cap:
        raise SimulationError(f"estimated cost {n * R:.3e} path-steps exceeds the cap {op_cap:.3e}")

    def run(block):
        b, size = block
        return _run_hardware_block(n, data_model, _block_rng(seed, b), size)

    blocks = _map_blocks(run, _blocks(R), workers)
    sums = np.zeros(17)
    residual = 0.0
    for hb in blocks:
        sums += hb.norm_sums
        residual = max(residual, hb.residual)
    N = sums[0]
    allraw = sums / N
    raw = {j: float(allraw[j]) for j in range(1, 9)}
    errors = {j: math.sqrt(max(float(allraw[2 * j]) - raw[j] ** 2, 0.0) / N) for j in range(1, 9)}
    var1 = raw[2] - raw[1] ** 2
    return HardwareStats(
        steps=n,
        replications=R,
        samples=int(N),
        normalized_moments=raw,
        standard_errors=errors,
        mean_over_sigma=raw[1] / math.sqrt(var1) if var1 > 0 else 0.0,
        max_consistency_residual=residual,
    )


@dataclass(frozen=True)
class Verdict:
    passed: bool
    failures: tuple[float, ...]
    slack: tuple[float, ...]
    event: str

    def to_dict(self) -> dict:
        return {
            "verdict": "PASS" if self.passed else "FAIL",
            "event": self.event,
            "failures": list(self.failures),
            "slack": [s if math.isfinite(s) else None for s in self.slack],
        }


def _match(grid: Sequence[GridPoint], eps: float) -> GridPoint:
    for g in grid:
        if math.isclose(g.epsilon, eps, rel_tol=1e-12):
            return g
    raise SimulationError(f"epsilon {eps} is not on the simulation grid")


def validate_bound(sim: SimReport, analytic) -> Verdict:
    """PASS iff the empirical lower confidence limit never exceeds the bound.

    ``analytic`` is one ``TailBoundResult`` or a sequence of them, each
    matched to a grid point by epsilon.  Results with the Levy factor are
    compared against the max-excursion event, others against the endpoint.
    """
    items = [analytic] if isinstance(analytic, TailBoundResult) else list(analytic)
    if not items:
        raise SimulationError("no analytic bounds supplied")
    levy = {r.levy_factor_applied for r in items}
    if len(levy) != 1:
        raise SimulationError("mixing max-excursion and endpoint bounds")
    use_max = levy.pop()
    failures, slack = [], []
    for r in items:
        g = _match(sim.grid, r.epsilon)
        lo, p = (g.ci_lo, g.p_max) if use_max else (g.end_ci_lo, g.p_end)
        if lo > r.probability:
            failures.append(r.epsilon)
        slack.append(r.probability / p if p > 0 else math.inf)
    return Verdict(not failures, tuple(failures), tuple(slack), "max" if use_max else "end")


def levy_factor_check(sim: SimReport) -> Verdict:
    """Empirical check of P(max |S_i| >= eps) <= 2 P(|S_n| >= eps).

    Each side gets its own confidence margin: the test fails only when the
    lower limit for the max event exceeds twice the upper limit for the
    endpoint event.
    """
    failures, slack = [], []
    for g in sim.grid:
        if g.ci_lo > 2 * g.end_ci_hi:
            failures.append(g.epsilon)
        slack.append(2 * g.p_end / g.p_max if g.p_max > 0 else math.inf)
    return Verdict(not failures, tuple(failures), tuple(slack), "levy")


def brownian_abs_max_sf(x: float) -> float:
    """P(sup_{0<=t<=1} |B_t| >= x) for standard Brownian motion."""
    if x <= 0:
        return 1.0
    total = 0.0
    for k in range(200):
        j = 2 * k + 1
        term = (-1) ** k / j * math.exp(-j * j * math.pi**2 / (8 * x * x))
        total += term
        if abs(term) < 1e-17:
            break
    return min(1.0, max(0.0, 1 - 4 / math.pi * total))


def epsilon_grid_for_probabilities(sigma: float, probs: Sequence[float]) -> tuple[float, ...]:
    """Thresholds where a random walk with endpoint std ``sigma`` has roughly
    the requested max-excursion probabilities (Brownian approximation).
    Returned increasing."""
    out = []
    for p in probs:
        if not 0 < p < 1:
            raise SimulationError("probabilities must lie in (0, 1)")
        x = optimize.brentq(lambda t: brownian_abs_max_sf(t) - p, 1e-3, 50.0, xtol=1e-14)
        out.append(sigma * x)
    return tuple(sorted(out))


def scenario_sigma(scenario: Scenario) -> float:
    """Standard deviation of the sum under exact uniform errors (u^2/3 each)."""
    return math.sqrt(float(sum((g.model.u ** 2 * g.count for g in scenario.groups), Fraction(0)) / 3))
