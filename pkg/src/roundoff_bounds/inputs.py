"""Exact parsing of command-line numbers."""

from __future__ import annotations

import re
from decimal import Decimal, InvalidOperation
from fractions import Fraction

_POW = re.compile(r"^\s*(-?\d+)\s*\^\s*([+-]?\d+)\s*$")


def parse_rational(text: str) -> Fraction:
    """'2^-24', '3/7', '0.125' or '1e-9' to an exact Fraction."""
    s = str(text).strip()
    m = _POW.match(s)
    if m:
        return Fraction(int(m.group(1))) ** int(m.group(2))
    if "/" in s:
        num, den = s.split("/", 1)
        try:
            return Fraction(parse_rational(num)) / parse_rational(den)
        except ZeroDivisionError:
            raise ValueError(f"zero denominator in {text!r}") from None
    try:
        d = Decimal(s)
    except InvalidOperation:
        raise ValueError(f"not a number: {text!r}") from None
    if not d.is_finite():
        raise ValueError(f"not a finite number: {text!r}")
    return Fraction(d)


def parse_count(text: str) -> int:
    """'1e9', '2^36' or '1000' to an exact integer."""
    q = parse_rational(text)
    if q.denominator != 1:
        raise ValueError(f"not an integer: {text!r}")
    return int(q)


def parse_positive(text: str) -> Fraction:
    q = parse_rational(text)
    if q <= 0:
        raise ValueError(f"must be positive: {text!r}")
    return q


def parse_probability(text: str) -> Fraction:
    q = parse_rational(text)
    if not 0 < q <= 1:
        raise ValueError(f"probability must lie in (0, 1]: {text!r}")
    return q
