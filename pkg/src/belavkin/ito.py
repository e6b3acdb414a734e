"""Finite encoding of the quantum Ito multiplication table.

Products of the fundamental noise differentials close on the table::

    dB_i dBdag_j      = delta_ij dt
    dB_i dLambda_kj   = delta_ik dB_j
    dLambda_kj dBdag_i = delta_ji dBdag_k
    dLambda_ij dLambda_kl = delta_jk dLambda_il

and every other product vanishes.  Differentials here are labels, not
operators: the module exists to validate hand-derived second-order terms of
product differentials (``d(MM') = dM M' + M dM' + dM dM'``), with
coefficients treated as opaque values combined by multiplication (numbers)
or concatenation (strings).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterable

DB = "dB"
DBDAG = "dBdag"
DLAMBDA = "dLambda"
DT = "dt"
ZERO = "zero"

_KINDS = (DB, DBDAG, DLAMBDA, DT, ZERO)


@dataclass(frozen=True)
class ItoDifferential:
    """One noise differential label with channel indices in ``1..channels``."""

    kind: str
    i: int = 0
    j: int = 0
    channels: int = 2

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown differential kind {self.kind!r}")
        if self.channels < 1:
            raise ValueError("channel count must be >= 1")
        used = {DB: ("i",), DBDAG: ("j",), DLAMBDA: ("i", "j"), DT: (), ZERO: ()}[self.kind]
        for name in used:
            idx = getattr(self, name)
            if not 1 <= idx <= self.channels:
                raise ValueError(
                    f"channel index {name}={idx} outside 1..{self.channels} for {self.kind}")

    def __repr__(self):
        if self.kind == DB:
            return f"dB({self.i})"
        if self.kind == DBDAG:
            return f"dBdag({self.j})"
        if self.kind == DLAMBDA:
            return f"dLambda({self.i},{self.j})"
        return self.kind


def dB(i: int, channels: int = 2) -> ItoDifferential:
    return ItoDifferential(DB, i=i, channels=channels)


def dBdag(j: int, channels: int = 2) -> ItoDifferential:
    return ItoDifferential(DBDAG, j=j, channels=channels)


def dLambda(i: int, j: int, channels: int = 2) -> ItoDifferential:
    return ItoDifferential(DLAMBDA, i=i, j=j, channels=channels)


def dt_diff(channels: int = 2) -> ItoDifferential:
    return ItoDifferential(DT, channels=channels)


def zero_diff(channels: int = 2) -> ItoDifferential:
    return ItoDifferential(ZERO, channels=channels)


def ito_product(x: ItoDifferential, y: ItoDifferential) -> ItoDifferential:
    """Product ``x . y`` under the multiplication table."""
    if x.channels != y.channels:
        raise ValueError(f"incompatible channel counts {x.channels} and {y.channels}")
    n = x.channels
    if x.kind == DB and y.kind == DBDAG:
        return dt_diff(n) if x.i == y.j else zero_diff(n)
    if x.kind == DB and y.kind == DLAMBDA:
        return dB(y.j, n) if x.i == y.i else zero_diff(n)
    if x.kind == DLAMBDA and y.kind == DBDAG:
        return dBdag(x.i, n) if x.j == y.j else zero_diff(n)
    if x.kind == DLAMBDA and y.kind == DLAMBDA:
        return dLambda(x.i, y.j, n) if x.j == y.i else zero_diff(n)
    return zero_diff(n)


#: A formal sum: (coefficient, differential) pairs.
FormalSum = list


def _combine(a: Any, b: Any) -> Any:
    if isinstance(a, str) or isinstance(b, str):
        return f"{a}{b}"
    return a * b


def second_order_term(sum_a: Iterable, sum_b: Iterable) -> FormalSum:
    """The ``dM dM'`` contraction of two formal sums.

    Each input is an iterable of ``(coefficient, ItoDifferential)`` pairs;
    the result lists the nonvanishing pairwise contractions with
    coefficients combined by ``*`` (or concatenation for strings).
    """
    out = []
    for ca, x in sum_a:
        for cb, y in sum_b:
            prod = ito_product(x, y)
            if prod.kind != ZERO:
                out.append((_combine(ca, cb), prod))
    return out


def collect(terms: Iterable) -> dict:
    """Sum numeric coefficients of like differentials into a dict."""
    acc: dict = {}
    for c, d in terms:
        if isinstance(c, str):
            raise TypeError("collect needs numeric coefficients")
        acc[d] = acc.get(d, 0) + c
    return {d: c for d, c in acc.items() if c != 0}
