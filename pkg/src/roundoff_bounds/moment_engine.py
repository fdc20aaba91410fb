"""Exact even-moment bounds for sums of independent symmetric variables.

A symmetric variable X is summarised by its even moment generating series

    f_X(z) = sum_j E(X^{2j}) z^{2j} / (2j)!

truncated after z^{2K}.  For independent symmetric summands the series of the
sum is the product of the individual series, so E(S^{2k}) is (2k)! times the
k-th coefficient of the product.  Everything here is exact (``Fraction``).
"""

from __future__ import annotations

import enum
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

DEFAULT_ORDER = 32
DEFAULT_COMPOSITION_CAP = 2_000_000


class MomentModelError(ValueError):
    pass


class Kind(str, enum.Enum):
    UNIFORM_BOUNDED = "UNIFORM_BOUNDED"
    SUPPORT_BOUNDED = "SUPPORT_BOUNDED"
    CUSTOM = "CUSTOM"


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        if not math.isfinite(value):
            raise MomentModelError(f"non-finite value {value!r}")
        return Fraction(value)
    return Fraction(value)


@dataclass(frozen=True)
class MomentModel:
    """Bounds on the even moments of one symmetric error variable.

    ``u`` is the half-width of the support.  ``bias`` is metadata only: the
    deterministic offset removed when centering a directed-rounding error; it
    never enters the moment series.
    """

    kind: Kind
    u: Fraction
    custom_moments: tuple[Fraction, ...] | None = None
    bias: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "u", as_fraction(self.u))
        object.__setattr__(self, "bias", as_fraction(self.bias))
        if self.u <= 0:
            raise MomentModelError(f"u must be positive, got {self.u}")
        if self.kind is Kind.CUSTOM:
            if self.custom_moments is None:
                raise MomentModelError("CUSTOM model needs custom_moments")
            moments = tuple(as_fraction(m) for m in self.custom_moments)
            for j, m in enumerate(moments, start=1):
                if m < 0:
                    raise MomentModelError(f"custom moment m_{j} is negative")
                if m > self.u ** (2 * j):
                    raise MomentModelError(
                        f"custom moment m_{j} = {m} exceeds u^{2 * j}, "
                        "inconsistent with support [-u, u]"
                    )
            object.__setattr__(self, "custom_moments", moments)
        elif self.custom_moments is not None:
            raise MomentModelError(f"{self.kind.value} takes no custom_moments")

    @classmethod
    def uniform(cls, u) -> "MomentModel":
        return cls(Kind.UNIFORM_BOUNDED, as_fraction(u))

    @classmethod
    def support(cls, u) -> "MomentModel":
        return cls(Kind.SUPPORT_BOUNDED, as_fraction(u))

    @classmethod
    def custom(cls, u, moments: Iterable) -> "MomentModel":
        return cls(Kind.CUSTOM, as_fraction(u), tuple(moments))

    def even_moment(self, j: int) -> Fraction:
        """Upper bound on E(X^{2j}); j = 0 gives 1."""
        if j == 0:
            return Fraction(1)
        if self.kind is Kind.UNIFORM_BOUNDED:
            return self.u ** (2 * j) / (2 * j + 1)
        if self.kind is Kind.SUPPORT_BOUNDED:
            return self.u ** (2 * j)
        if j > len(self.custom_moments):
            raise MomentModelError("insufficient custom moments")
        return self.custom_moments[j - 1]

    def scaled(self, factor) -> "MomentModel":
        """Model of ``factor * X`` for a positive exact factor."""
        factor = as_fraction(factor)
        if factor <= 0:
            raise MomentModelError("scale factor must be positive")
        moments = None
        if self.custom_moments is not None:
            moments = tuple(
                m * factor ** (2 * j) for j, m in enumerate(self.custom_moments, 1)
            )
        return MomentModel(self.kind, self.u * factor, moments, self.bias * factor)


@dataclass(frozen=True)
class MomentSeries:
    """Truncated even series; ``coeffs[j]`` bounds E(S^{2j}) / (2j)!."""

    coeffs: tuple[Fraction, ...]

    def __post_init__(self):
        coeffs = tuple(as_fraction(c) for c in self.coeffs)
        if len(coeffs) < 2:
            raise MomentModelError("series needs order K >= 1")
        if coeffs[0] != 1:
            raise MomentModelError(f"c_0 must be 1, got {coeffs[0]}")
        if any(c < 0 for c in coeffs):
            raise MomentModelError("series coefficients must be nonnegative")
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def __getitem__(self, j: int) -> Fraction:
        return self.coeffs[j]

    @classmethod
    def identity(cls, order: int) -> "MomentSeries":
        if order < 1:
            raise MomentModelError("order must be >= 1")
        return cls((Fraction(1),) + (Fraction(0),) * order)


def series_for_variable(model: MomentModel, order: int = DEFAULT_ORDER) -> MomentSeries:
    if order < 1:
        raise MomentModelError("order must be >= 1")
    if model.kind is Kind.CUSTOM and len(model.custom_moments) < order:
        raise MomentModelError("insufficient custom moments")
    return MomentSeries(
        tuple(model.even_moment(j) / math.factorial(2 * j) for j in range(order + 1))
    )


def series_product(a: MomentSeries, b: MomentSeries) -> MomentSeries:
    if a.order != b.order:
        raise MomentModelError(f"order mismatch: {a.order} != {b.order}")
    ac, bc = a.coeffs, b.coeffs
    return MomentSeries(
        tuple(sum((ac[i] * bc[j - i] for i in range(j + 1)), Fraction(0))
              for j in range(a.order + 1))
    )


def series_power(a: MomentSeries, n: int) -> MomentSeries:
    """n-fold product by repeated squaring; n = 0 gives the identity."""
    if n < 0:
        raise MomentModelError("power must be nonnegative")
    result = MomentSeries.identity(a.order)
    base = a
    while n:
        if n & 1:
            result = series_product(result, base)
        n >>= 1
        if n:
            base = series_product(base, base)
    return result


def moment_bound(s: MomentSeries, k: int) -> Fraction:
    """Upper bound on E(S^{2k})."""
    if k < 0:
        raise MomentModelError("k must be nonnegative")
    if k > s.order:
        raise MomentModelError(f"order exceeds truncation ({k} > {s.order})")
    return math.factorial(2 * k) * s.coeffs[k]


# E(S_n^{2k}) / u^{2k} as sum_r coef_r * n(n-1)...(n-r+1)
_CLOSED_FORMS = {
    1: (Fraction(1, 3),),
    2: (Fraction(1, 5), Fraction(1, 3)),
    3: (Fraction(1, 7), Fraction(1), Fraction(5, 9)),
    4: (Fraction(1, 9), Fraction(41, 15), Fraction(14, 3), Fraction(35, 27)),
}


def closed_form_moment(n: int, u, k: int) -> Fraction:
    """E(S_n^{2k}) for n uniform-bounded variables of half-width u, k in 1..4."""
    if k not in _CLOSED_FORMS:
        raise MomentModelError(f"no closed form for 2k = {2 * k}")
    if n < 1:
        raise MomentModelError("n must be >= 1")
    u = as_fraction(u)
    if u <= 0:
        raise MomentModelError("u must be positive")
    total = Fraction(0)
    falling = 1
    for r, coef in enumerate(_CLOSED_FORMS[k]):
        falling *= n - r
        total += coef * falling
    return u ** (2 * k) * total


def brute_force_moment(
    models: Sequence[MomentModel], k: int, cap: int = DEFAULT_COMPOSITION_CAP
) -> Fraction:
    """Direct sum over all compositions k_1 + ... + k_n = k.

    Independent of the series machinery; meant as an oracle for small n, k.
    """
    n = len(models)
    if n == 0:
        return Fraction(1) if k == 0 else Fraction(0)
    count = math.comb(k + n - 1, n - 1)
    if count > cap:
        raise MomentModelError(f"{count} compositions exceed cap {cap}")
    # weights[i][j] = E(X_i^{2j}) / (2j)!
    weights = [
        [m.even_moment(j) / math.factorial(2 * j) for j in range(k + 1)] for m in models
    ]
    total = Fraction(0)
    # stars and bars: choose n-1 bar positions among k+n-1 slots
    for bars in itertools.combinations(range(k + n - 1), n - 1):
        prev = -1
        term = Fraction(1)
        for i, b in enumerate(bars + (k + n - 1,)):
            term *= weights[i][b - prev - 1]
            prev = b
        total += term
    return math.factorial(2 * k) * total


@dataclass(frozen=True)
class WeightedGroup:
    """``count`` i.i.d. copies of ``model``; the minimal group view the engine needs."""

    model: MomentModel
    count: int = 1
    label: str = field(default="", compare=False)


def series_for_groups(groups: Iterable, order: int = DEFAULT_ORDER) -> MomentSeries:
    """Fold independent groups (anything with ``.model`` and ``.count``).

    Groups sharing an identical model are merged first so the cost is one
    ``series_power`` per distinct model.
    """
    merged: Counter = Counter()
    for g in groups:
        if g.count < 0:
            raise MomentModelError("group count must be nonnegative")
        if g.count:
            merged[(g.model.kind, g.model.u, g.model.custom_moments)] += g.count
    result = MomentSeries.identity(order)
    # sorted for a deterministic fold order
    for key in sorted(merged, key=lambda t: (t[0].value, t[1], t[2] or ())):
        kind, u, custom = key
        base = series_for_variable(MomentModel(kind, u, custom), order)
        result = series_product(result, series_power(base, merged[key]))
    return result
