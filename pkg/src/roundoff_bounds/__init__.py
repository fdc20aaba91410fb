"""Probabilistic bounds on accumulated round-off error.

Exact even-moment bounds for sums of independent symmetric errors, turned
into tail bounds with Markov's inequality and, for the maximum over time,
Levy's maximal inequality.  Seeded Monte Carlo checks the bounds.
"""

__version__ = "0.1.0"

from .moment_engine import (
    Kind,
    MomentModel,
    MomentSeries,
    brute_force_moment,
    closed_form_moment,
    moment_bound,
    series_for_groups,
    series_for_variable,
    series_power,
    series_product,
)
from .scenarios import (
    FilterSpec,
    FpFormat,
    Scenario,
    accumulation_scenario,
    bibo_bound,
    exact_coefficient_sum,
    filter_error_scenario,
    impulse_response,
    rounding_error_model,
    sensor_scenario,
    ulp,
)
from .tail_bounds import (
    TailBoundResult,
    asymptotic_epsilon,
    epsilon_for_probability,
    levy_max_tail,
    markov_tail,
    optimize_k,
    significant_bits,
)
