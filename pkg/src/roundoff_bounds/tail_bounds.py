"""Markov and Levy tail bounds built on the exact moment engine.

All evaluations go through natural logs so moments like 2^-1056 and
thresholds far outside binary64 range are handled without underflow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .moment_engine import MomentSeries, moment_bound

LEVY_FACTOR = 2
DEFAULT_K_MAX = 32
# below this a probability is reported through its log10 only
TINY_PROBABILITY = 1e-300
LN10 = math.log(10.0)


class TailBoundError(ValueError):
    pass


def ln(x) -> float:
    """Natural log of a positive int, float or Fraction of any magnitude."""
    if isinstance(x, Fraction):
        if x <= 0:
            raise TailBoundError(f"log of non-positive value {x}")
        return math.log(x.numerator) - math.log(x.denominator)
    if x <= 0:
        raise TailBoundError(f"log of non-positive value {x}")
    return math.log(x)


def _check_epsilon(epsilon) -> None:
    if not epsilon > 0:
        raise TailBoundError(f"epsilon must be positive, got {epsilon}")


def log_markov_tail(moment, k: int, epsilon, factor: int = 1) -> float:
    """ln of factor * moment / epsilon^{2k}, unclamped; -inf for a zero moment."""
    _check_epsilon(epsilon)
    if moment < 0:
        raise TailBoundError("moment must be nonnegative")
    if moment == 0:
        return -math.inf
    return math.log(factor) + ln(moment) - 2 * k * ln(epsilon)


def _clamped(log_p: float) -> float:
    if log_p >= 0:
        return 1.0
    return math.exp(log_p)


def markov_tail(moment, k: int, epsilon) -> float:
    """min(1, moment / epsilon^{2k}): bound on P(|S| >= epsilon) from E(S^{2k})."""
    return _clamped(log_markov_tail(moment, k, epsilon))


def levy_max_tail(moment, k: int, epsilon) -> float:
    """Bound on P(max_i |S_i| >= epsilon) for independent symmetric summands."""
    return _clamped(log_markov_tail(moment, k, epsilon, LEVY_FACTOR))


class Mode(str, enum.Enum):
    EPSILON_FROM_P = "EPSILON_FROM_P"
    P_FROM_EPSILON = "P_FROM_EPSILON"


@dataclass(frozen=True)
class TailBoundQuery:
    series: MomentSeries
    mode: Mode
    P: Optional[float | Fraction] = None
    epsilon: Optional[float | Fraction] = None
    k_fixed: Optional[int] = None
    use_levy: bool = True
    k_max: int = DEFAULT_K_MAX

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mode is Mode.EPSILON_FROM_P:
            if self.P is None or self.epsilon is not None:
                raise TailBoundError("EPSILON_FROM_P needs P and no epsilon")
        elif self.epsilon is None or self.P is not None:
            raise TailBoundError("P_FROM_EPSILON needs epsilon and no P")
        if self.k_fixed is not None and not 1 <= self.k_fixed <= self.series.order:
            raise TailBoundError(f"k_fixed={self.k_fixed} outside 1..{self.series.order}")


@dataclass(frozen=True)
class TailBoundResult:
    k_used: int
    moment: Fraction
    epsilon: float
    probability: float
    levy_factor_applied: bool
    log10_probability: float

    @property
    def two_k(self) -> int:
        return 2 * self.k_used

    @property
    def probability_is_tiny(self) -> bool:
        return self.log10_probability < math.log10(TINY_PROBABILITY)


def tail_bound(series: MomentSeries, k: int, epsilon, use_levy: bool = True) -> TailBoundResult:
    moment = moment_bound(series, k)
    factor = LEVY_FACTOR if use_levy else 1
    log_p = min(0.0, log_markov_tail(moment, k, epsilon, factor))
    return TailBoundResult(
        k_used=k,
        moment=moment,
        epsilon=float(epsilon),
        probability=_clamped(log_p),
        levy_factor_applied=use_levy,
        log10_probability=log_p / LN10,
    )


def _log_epsilon(moment: Fraction, k: int, P, use_levy: bool) -> float:
    factor = LEVY_FACTOR if use_levy else 1
    return (math.log(factor) + ln(moment) - ln(P)) / (2 * k)


def epsilon_for_probability(series: MomentSeries, k: int, P, use_levy: bool = True) -> float:
    """Smallest epsilon the order-2k Markov bound certifies at probability P.

    A zero moment (degenerate, error-free scenario) gives 0.0.
    """
    if not 0 < P <= 1:
        raise TailBoundError(f"P must lie in (0, 1], got {P}")
    moment = moment_bound(series, k)
    if moment == 0:
        return 0.0
    return math.exp(_log_epsilon(moment, k, P, use_levy))


def _result_for_k(series: MomentSeries, k: int, P, use_levy: bool) -> tuple[float, TailBoundResult]:
    moment = moment_bound(series, k)
    if moment == 0:
        log_eps = -math.inf
        eps = 0.0
    else:
        log_eps = _log_epsilon(moment, k, P, use_levy)
        eps = math.exp(log_eps)
    p = float(P)
    result = TailBoundResult(
        k_used=k,
        moment=moment,
        epsilon=eps,
        probability=p,
        levy_factor_applied=use_levy,
        log10_probability=ln(P) / LN10,
    )
    return log_eps, result


def optimize_k(series: MomentSeries, P, use_levy: bool = True, k_max: int | None = None) -> TailBoundResult:
    """Exhaustive search over k in 1..k_max for the smallest epsilon.

    No unimodality is assumed; ties go to the smaller k.
    """
    if not 0 < P <= 1:
        raise TailBoundError(f"P must lie in (0, 1], got {P}")
    k_max = series.order if k_max is None else k_max
    if not 1 <= k_max <= series.order:
        raise TailBoundError(f"k_max={k_max} outside 1..{series.order}")
    best_log, best = _result_for_k(series, 1, P, use_levy)
    for k in range(2, k_max + 1):
        log_eps, result = _result_for_k(series, k, P, use_levy)
        if log_eps < best_log:
            best_log, best = log_eps, result
    return best


def best_probability(series: MomentSeries, epsilon, use_levy: bool = True, k_max: int | None = None) -> TailBoundResult:
    """Smallest probability bound over k in 1..k_max at a fixed epsilon."""
    _check_epsilon(epsilon)
    k_max = series.order if k_max is None else k_max
    if not 1 <= k_max <= series.order:
        raise TailBoundError(f"k_max={k_max} outside 1..{series.order}")
    best = tail_bound(series, 1, epsilon, use_levy)
    for k in range(2, k_max + 1):
        result = tail_bound(series, k, epsilon, use_levy)
        if result.log10_probability < best.log10_probability:
            best = result
    return best


def evaluate(query: TailBoundQuery) -> TailBoundResult:
    if query.mode is Mode.EPSILON_FROM_P:
        if query.k_fixed is not None:
            return _result_for_k(query.series, query.k_fixed, query.P, query.use_levy)[1]
        return optimize_k(query.series, query.P, query.use_levy, min(query.k_max, query.series.order))
    if query.k_fixed is not None:
        return tail_bound(query.series, query.k_fixed, query.epsilon, query.use_levy)
    return best_probability(query.series, query.epsilon, query.use_levy, min(query.k_max, query.series.order))


# Leading-order epsilon for n = u^{-3/2} variables, m = 1, P = u^{3/2}, Levy factor on.
# Each entry: (formula as printed, ln(epsilon) as a function of ln(u)).
_ASYMPTOTIC = {
    1: ("(4 u^-2 / 9)^(1/4)", lambda lu: (math.log(4 / 9) - 2 * lu) / 4),
    2: ("(4 u^-1 / 9)^(1/8)", lambda lu: (math.log(4 / 9) - lu) / 8),
    3: ("(100 / 81)^(1/12)", lambda lu: math.log(100 / 81) / 12),
    4: ("(4900 u / 729)^(1/16)", lambda lu: (math.log(4900 / 729) + lu) / 16),
}

_ASYMPTOTIC_LOG2 = {
    1: ("(-log2 u + 1 - log2 3) / 2", lambda l2u: (-l2u + 1 - math.log2(3)) / 2),
    2: ("(-log2 u + 2 - 2 log2 3) / 8", lambda l2u: (-l2u + 2 - 2 * math.log2(3)) / 8),
    3: ("(log2 10 - 2 log2 3) / 6", lambda l2u: (math.log2(10) - 2 * math.log2(3)) / 6),
    4: ("(log2 u + 2 log2 70 - 6 log2 3) / 16",
        lambda l2u: (l2u + 2 * math.log2(70) - 6 * math.log2(3)) / 16),
}


def asymptotic_formula(k: int) -> tuple[str, str]:
    if k not in _ASYMPTOTIC:
        raise TailBoundError(f"no asymptotic formula for 2k = {2 * k}")
    return _ASYMPTOTIC[k][0], _ASYMPTOTIC_LOG2[k][0]


def asymptotic_epsilon(u, k: int) -> float:
    if k not in _ASYMPTOTIC:
        raise TailBoundError(f"no asymptotic formula for 2k = {2 * k}")
    if not 0 < u <= 1:
        raise TailBoundError("asymptotic regime needs 0 < u <= 1")
    return math.exp(_ASYMPTOTIC[k][1](ln(u)))


def asymptotic_log2_epsilon(u, k: int) -> float:
    """The log-form column, evaluated independently of ``asymptotic_epsilon``."""
    if k not in _ASYMPTOTIC_LOG2:
        raise TailBoundError(f"no asymptotic formula for 2k = {2 * k}")
    if not 0 < u <= 1:
        raise TailBoundError("asymptotic regime needs 0 < u <= 1")
    return _ASYMPTOTIC_LOG2[k][1](ln(u) / math.log(2))


def significant_bits(epsilon) -> float:
    """log2(epsilon); negative means bits below the binary point survive."""
    return ln(epsilon) / math.log(2)
