"""Error-variable families for concrete numerical kernels.

Covers number formats and ulp, long accumulations / dot products, sensor
noise, directed-rounding centering, and second-order IIR filters.
"""

from __future__ import annotations

import bisect
import enum
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import yaml

from .moment_engine import DEFAULT_ORDER, Kind, MomentModel, MomentModelError, MomentSeries, as_fraction, series_for_groups

MAX_VARIABLES = 2**63 - 1
DEFAULT_BUCKETS = 64


class ScenarioError(ValueError):
    pass


class Representation(str, enum.Enum):
    SIGN_MAGNITUDE = "SIGN_MAGNITUDE"
    TWOS_COMPLEMENT = "TWOS_COMPLEMENT"


class ExponentMode(str, enum.Enum):
    FLOATING = "FLOATING"
    FIXED = "FIXED"


class Rounding(str, enum.Enum):
    NEAREST = "NEAREST"
    DIRECTED = "DIRECTED"


@dataclass(frozen=True)
class FpFormat:
    precision: int
    representation: Representation = Representation.SIGN_MAGNITUDE
    mode: ExponentMode = ExponentMode.FLOATING
    fixed_exponent: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "representation", Representation(self.representation))
        object.__setattr__(self, "mode", ExponentMode(self.mode))
        if self.precision < 2:
            raise ScenarioError("precision must be >= 2")
        if self.mode is ExponentMode.FIXED and self.fixed_exponent is None:
            raise ScenarioError("FIXED format needs its constant exponent")


BINARY32 = FpFormat(24)
BINARY64 = FpFormat(53)


def ulp(fmt: FpFormat, exponent: int | None = None) -> Fraction:
    """2^(e - p + 1); a FIXED format ignores ``exponent``."""
    if fmt.mode is ExponentMode.FIXED:
        e = fmt.fixed_exponent
    elif exponent is None:
        raise ScenarioError("FLOATING format needs an exponent")
    else:
        e = exponent
    return Fraction(2) ** (e - fmt.precision + 1)


def rounding_error_model(fmt: FpFormat, exponent: int | None = None,
                         rounding: Rounding = Rounding.NEAREST) -> MomentModel:
    """Uniform-bounded model of one rounding error, u = ulp / 2.

    Directed rounding errors live on an interval of width ulp; after
    subtracting their mean they are again uniform on +-ulp/2.  The removed
    mean is returned in ``bias`` (its sign depends on the direction, only the
    magnitude is recorded) and must be accounted for by the caller.
    """
    half = ulp(fmt, exponent) / 2
    if Rounding(rounding) is Rounding.DIRECTED:
        return MomentModel(Kind.UNIFORM_BOUNDED, half, bias=half)
    return MomentModel.uniform(half)


@dataclass(frozen=True)
class ErrorVariableSpec:
    model: MomentModel
    count: int
    label: str = ""

    def __post_init__(self):
        if self.count < 1:
            raise ScenarioError("count must be >= 1")


@dataclass(frozen=True)
class Scenario:
    groups: tuple[ErrorVariableSpec, ...]
    description: str = ""
    degenerate: bool = False
    # False when the error at a fixed time is a reweighting of past variables,
    # so the maximal inequality over time is not established
    levy_applicable: bool = True
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "notes", tuple(self.notes))
        if not self.degenerate and self.total_count < 1:
            raise ScenarioError("scenario needs at least one variable")

    @property
    def total_count(self) -> int:
        return sum(g.count for g in self.groups)

    @property
    def deterministic_max(self) -> Fraction:
        """Largest possible |S|: every variable at the edge of its support."""
        return sum((g.model.u * g.count for g in self.groups), Fraction(0))

    def series(self, order: int = DEFAULT_ORDER) -> MomentSeries:
        return series_for_groups(self.groups, order)


def _positive(name: str, value) -> Fraction:
    value = as_fraction(value)
    if value <= 0:
        raise ScenarioError(f"{name} must be positive, got {value}")
    return value


def accumulation_scenario(n: int, m: int, u) -> Scenario:
    """Listing-style accumulation ``a_i = a_{i-1} + d_i`` with m errors per step."""
    if n < 1 or m < 1:
        raise ScenarioError("n and m must be >= 1")
    if n * m > MAX_VARIABLES:
        raise ScenarioError(f"n*m = {n * m} exceeds {MAX_VARIABLES}")
    u = _positive("u", u)
    return Scenario(
        (ErrorVariableSpec(MomentModel.uniform(u), n * m, "rounding"),),
        description=f"accumulation n={n} m={m}",
    )


def sensor_scenario(n: int, u_round, u_sensor) -> Scenario:
    if n < 1:
        raise ScenarioError("n must be >= 1")
    u_round = _positive("u_round", u_round)
    u_sensor = _positive("u_sensor", u_sensor)
    return Scenario(
        (ErrorVariableSpec(MomentModel.uniform(u_round), n, "rounding"),
         ErrorVariableSpec(MomentModel.uniform(u_sensor), n, "sensor")),
        description=f"accumulation with sensor noise n={n}",
    )


@dataclass(frozen=True)
class FilterSpec:
    """Second-order recurrence y_i = d_i - b1 y_{i-1} - b2 y_{i-2}.

    Only complex characteristic roots (b1^2 < 4 b2) are accepted; the roots
    of X^2 + b1 X + b2 then have modulus sqrt(b2).
    """

    b1: Fraction
    b2: Fraction

    def __post_init__(self):
        b1, b2 = as_fraction(self.b1), as_fraction(self.b2)
        object.__setattr__(self, "b1", b1)
        object.__setattr__(self, "b2", b2)
        if not b1 * b1 < 4 * b2:
            raise ScenarioError(
                f"b1^2 >= 4 b2 ({float(b1)}, {float(b2)}): real characteristic roots; "
                "only second-order filters with complex roots are supported"
            )

    @property
    def stable(self) -> bool:
        return self.b2 < 1

    @property
    def root_modulus(self) -> float:
        return math.sqrt(self.b2)

    def envelope_amplitude(self) -> float:
        """Exact A with y_n = A r^n cos(phi + n theta), r = sqrt(b2).

        Derived from y_0 = 1, y_1 = -b1; used as the certified envelope
        |y_n| <= A r^n.
        """
        b1, b2 = float(self.b1), float(self.b2)
        lam = complex(-b1 / 2, math.sqrt(4 * b2 - b1 * b1) / 2)
        alpha = (-b1 - lam.conjugate()) / (lam - lam.conjugate())
        return 2 * abs(alpha)


def impulse_response(filt: FilterSpec, n: int, exact: bool = False) -> list:
    """y_0..y_n of the filter driven by d_0 = 1, d_i = 0 otherwise."""
    if n < 0:
        raise ScenarioError("n must be >= 0")
    if exact:
        b1, b2 = filt.b1, filt.b2
        prev, cur = Fraction(0), Fraction(1)
    else:
        b1, b2 = float(filt.b1), float(filt.b2)
        prev, cur = 0.0, 1.0
    out = [cur]
    for _ in range(n):
        prev, cur = cur, -b1 * cur - b2 * prev
        out.append(cur)
    return out


def bibo_bound(filt: FilterSpec) -> float:
    """The closed-form bound sqrt(b2 + 2 b1^2) / (1 - sqrt(b2)) on sum |y_i|."""
    if not filt.stable:
        raise ScenarioError("filter not BIBO stable; worst case unbounded")
    b1, b2 = float(filt.b1), float(filt.b2)
    return math.sqrt(b2 + 2 * b1 * b1) / (1 - math.sqrt(b2))


def exact_coefficient_sum(filt: FilterSpec, tol: float = 1e-12, max_terms: int = 10_000_000) -> float:
    """sum_{i>=0} |y_i| to within +-tol.

    Terms are summed until the geometric tail bound A r^(N+1) / (1 - r)
    drops below tol.  A is the analytic envelope amplitude; the running
    maximum of |y_n| / r^n is checked against it as it goes.
    """
    if not filt.stable:
        raise ScenarioError("filter not BIBO stable; coefficient sum diverges")
    if tol <= 0:
        raise ScenarioError("tol must be positive")
    b1, b2 = float(filt.b1), float(filt.b2)
    r = math.sqrt(b2)
    amp = filt.envelope_amplitude()
    running = 1.0
    terms = [1.0]
    prev, cur = 0.0, 1.0
    rn = 1.0
    for _ in range(max_terms):
        prev, cur = cur, -b1 * cur - b2 * prev
        rn *= r
        terms.append(abs(cur))
        if rn > 0:
            running = max(running, abs(cur) / rn)
        # half the budget for the tail, half for float summation slack
        if max(amp, running) * rn * r / (1 - r) < tol / 2:
            break
    else:
        raise ScenarioError("coefficient sum did not converge within max_terms")
    return math.fsum(terms)


def _van_der_corput(i: int) -> float:
    x, denom = 0.0, 1.0
    while i:
        denom *= 2
        i, bit = divmod(i, 2)
        x += bit / denom
    return x


def _bucket_positions(buckets: int) -> list[float]:
    # position 0 is the largest weight, 1 the smallest; later positions bisect.
    # The set for b buckets is a prefix of the set for b + 1, so refinement
    # only ever lowers the rounded-up weights.
    positions = [0.0, 1.0]
    i = 1
    while len(positions) < buckets:
        positions.append(_van_der_corput(i))
        i += 1
    return positions[:buckets]


def bucket_weights(weights: Sequence[float], buckets: int = DEFAULT_BUCKETS) -> dict[Fraction, int]:
    """Round nonzero |weights| up to log-spaced edges; return {edge: multiplicity}."""
    if buckets < 1:
        raise ScenarioError("buckets must be >= 1")
    mags = [abs(float(w)) for w in weights if w != 0]
    if not mags:
        return {}
    if any(not math.isfinite(w) for w in mags):
        raise ScenarioError("non-finite weight")
    w_max, w_min = max(mags), min(mags)
    span = math.log(w_min) - math.log(w_max)
    edges = set()
    for t in _bucket_positions(buckets):
        if t == 0.0:
            edges.add(w_max)
        elif t == 1.0:
            edges.add(w_min)
        else:
            edges.add(math.exp(math.log(w_max) + t * span))
    edges = sorted(edges)
    counts: dict[Fraction, int] = {}
    for w in mags:
        e = edges[bisect.bisect_left(edges, w)]
        key = Fraction(e)
        counts[key] = counts.get(key, 0) + 1
    return counts


def weighted_scenario(weights: Sequence, u, m: int = 1, buckets: int = DEFAULT_BUCKETS,
                      description: str = "weighted sum") -> Scenario:
    """Error sum_i w_i (X_{1,i} + ... + X_{m,i}) with X uniform on +-u."""
    u = _positive("u", u)
    if m < 1:
        raise ScenarioError("m must be >= 1")
    counts = bucket_weights(weights, buckets)
    if not counts:
        return Scenario((), description=description, degenerate=True,
                        notes=("all weights are zero: the error is identically zero",))
    groups = tuple(
        ErrorVariableSpec(MomentModel.uniform(u * edge), m * c, f"weight<={float(edge):.6g}")
        for edge, c in sorted(counts.items(), reverse=True)
    )
    return Scenario(groups, description=description)


def filter_error_scenario(filt: FilterSpec, n: int, u, m: int = 1,
                          buckets: int = DEFAULT_BUCKETS, exact: bool = False) -> Scenario:
    """Output error at step n: sum_{i=1}^{n} (errors injected at i) * y_{n-i}."""
    if n < 1:
        raise ScenarioError("n must be >= 1")
    if n * m > MAX_VARIABLES:
        raise ScenarioError(f"n*m = {n * m} exceeds {MAX_VARIABLES}")
    y = impulse_response(filt, n - 1, exact=exact)
    if exact:
        # exact weights are kept as their own groups, no bucketing
        u = _positive("u", u)
        counts: dict[Fraction, int] = {}
        for w in y:
            if w:
                counts[abs(w)] = counts.get(abs(w), 0) + 1
        groups = tuple(ErrorVariableSpec(MomentModel.uniform(u * w), m * c)
                       for w, c in sorted(counts.items(), reverse=True))
        scen = Scenario(groups, degenerate=not groups)
    else:
        scen = weighted_scenario(y, u, m, buckets)
    return Scenario(
        scen.groups,
        description=f"IIR b1={float(filt.b1):g} b2={float(filt.b2):g} horizon n={n} m={m}",
        degenerate=scen.degenerate,
        levy_applicable=False,
        notes=scen.notes,
    )


# -- serialization -----------------------------------------------------------

def _q(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def _unq(s) -> Fraction:
    if isinstance(s, (int, Fraction)):
        return Fraction(s)
    return Fraction(str(s))


def scenario_to_dict(s: Scenario) -> dict:
    groups = []
    for g in s.groups:
        d = {"label": g.label, "count": g.count, "kind": g.model.kind.value, "u": _q(g.model.u)}
        if g.model.custom_moments is not None:
            d["custom_moments"] = [_q(x) for x in g.model.custom_moments]
        if g.model.bias:
            d["bias"] = _q(g.model.bias)
        groups.append(d)
    return {
        "description": s.description,
        "degenerate": s.degenerate,
        "levy_applicable": s.levy_applicable,
        "notes": list(s.notes),
        "groups": groups,
    }


def scenario_from_dict(d: dict) -> Scenario:
    try:
        groups = []
        for g in d.get("groups", []):
            custom = g.get("custom_moments")
            model = MomentModel(
                Kind(g["kind"]),
                _unq(g["u"]),
                tuple(_unq(x) for x in custom) if custom is not None else None,
                _unq(g.get("bias", 0)),
            )
            groups.append(ErrorVariableSpec(model, int(g["count"]), g.get("label", "")))
        return Scenario(
            tuple(groups),
            description=d.get("description", ""),
            degenerate=bool(d.get("degenerate", False)),
            levy_applicable=bool(d.get("levy_applicable", True)),
            notes=tuple(d.get("notes", ())),
        )
    except (KeyError, TypeError, ValueError, MomentModelError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc


def scenario_to_json(s: Scenario) -> str:
    return json.dumps(scenario_to_dict(s), sort_keys=True, indent=2)


def scenario_from_json(text: str) -> Scenario:
    return scenario_from_dict(json.loads(text))


def scenario_to_text(s: Scenario) -> str:
    """Plain-text key/value rendering (YAML block style)."""
    return yaml.safe_dump(scenario_to_dict(s), sort_keys=True, default_flow_style=False)


def scenario_from_text(text: str) -> Scenario:
    return scenario_from_dict(yaml.safe_load(text))
