"""Exact Stirling-number kernels and the Stirling moment transforms.

Tables hold Python integers (arbitrary precision). The transforms convert
their float inputs to exact rationals, so the only rounding is the final
conversion back to float. Pass ``exact=True`` to keep the rationals.
"""
from __future__ import annotations

import os
from fractions import Fraction
from functools import lru_cache
from typing import Sequence

import numpy as np

__all__ = [
    "DEFAULT_MAX_ORDER",
    "CapacityError",
    "StirlingTable",
    "stirling_table",
    "stirling2",
    "stirling1_unsigned",
    "falling_factorial",
    "poisson_raw_moment",
    "forward_stirling_transform",
    "inverse_stirling_transform",
]

DEFAULT_MAX_ORDER = 32


class CapacityError(ValueError):
    """Requested order exceeds the Stirling table capacity."""


def default_max_order() -> int:
    raw = os.environ.get("TICKTOMO_MAX_ORDER")
    if raw is None:
        return DEFAULT_MAX_ORDER
    value = int(raw)
    if value < 1:
        raise ValueError(f"TICKTOMO_MAX_ORDER must be >= 1, got {raw!r}")
    return value


class StirlingTable:
    """Immutable triangular table of Stirling numbers.

    Parameters
    ----------
    kind : {"second", "first_unsigned"}
        ``second`` gives S(k, j), partitions of a k-set into j blocks.
        ``first_unsigned`` gives c(k, j), permutations of k elements
        with j cycles.
    max_order : int
        Largest k stored.
    """

    __slots__ = ("_kind", "_max_order", "_rows")

    def __init__(self, kind: str, max_order: int = DEFAULT_MAX_ORDER):
        if kind not in ("second", "first_unsigned"):
            raise ValueError(f"unknown Stirling kind {kind!r}")
        if max_order < 0:
            raise ValueError("max_order must be non-negative")
        rows = [(1,)]
        for k in range(1, max_order + 1):
            prev = rows[-1]
            row = [0] * (k + 1)
            for j in range(1, k + 1):
                left = prev[j - 1]
                same = prev[j] if j < k else 0
                # S(k,j) = j S(k-1,j) + S(k-1,j-1); c(k,j) = (k-1) c(k-1,j) + c(k-1,j-1)
                mult = j if kind == "second" else k - 1
                row[j] = mult * same + left
            rows.append(tuple(row))
        self._kind = kind
        self._max_order = max_order
        self._rows = tuple(rows)

    @property
    def kind(self) -> str:
        return self._kind

    @property
    def max_order(self) -> int:
        return self._max_order

    def __getitem__(self, index: tuple[int, int]) -> int:
        k, j = index
        if not (0 <= j <= k <= self._max_order):
            raise IndexError(
                f"Stirling index ({k}, {j}) outside 0 <= j <= k <= {self._max_order}"
            )
        return self._rows[k][j]

    def row(self, k: int) -> tuple[int, ...]:
        if not 0 <= k <= self._max_order:
            raise IndexError(f"row {k} outside table of order {self._max_order}")
        return self._rows[k]

    def __repr__(self) -> str:
        return f"StirlingTable(kind={self._kind!r}, max_order={self._max_order})"


def stirling_table(kind: str, max_order: int | None = None) -> StirlingTable:
    """Cached table; ``max_order=None`` reads ``TICKTOMO_MAX_ORDER``."""
    if max_order is None:
        max_order = default_max_order()
    return _cached_table(kind, max_order)


@lru_cache(maxsize=None)
def _cached_table(kind: str, max_order: int) -> StirlingTable:
    return StirlingTable(kind, max_order)


def stirling2(k: int, j: int, max_order: int | None = None) -> int:
    """Stirling number of the second kind S(k, j)."""
    return stirling_table("second", max_order)[k, j]


def stirling1_unsigned(k: int, j: int, max_order: int | None = None) -> int:
    """Unsigned Stirling number of the first kind c(k, j)."""
    return stirling_table("first_unsigned", max_order)[k, j]


def falling_factorial(x, k: int):
    """x (x-1) ... (x-k+1), elementwise, as floats."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    for i in range(k):
        out *= x - i
    return out


def poisson_raw_moment(lam: float, k: int) -> float:
    """E[X^k] for X ~ Poisson(lam), via sum_j lam^j S(k, j)."""
    if lam < 0:
        raise ValueError(f"Poisson mean must be non-negative, got {lam}")
    if k < 0:
        raise ValueError(f"moment order must be non-negative, got {k}")
    if k == 0:
        return 1.0
    table = _table_for("second", k)
    lam_q = Fraction(lam)
    total = sum(table[k, j] * lam_q**j for j in range(1, k + 1))
    return float(total)


def _table_for(kind: str, order: int, max_order: int | None = None) -> StirlingTable:
    table = stirling_table(kind, max_order)
    if order > table.max_order:
        raise CapacityError(
            f"order {order} exceeds Stirling table capacity {table.max_order} "
            "(raise TICKTOMO_MAX_ORDER or pass max_order)"
        )
    return table


def _as_fractions(values: Sequence) -> list[Fraction]:
    out = []
    for v in values:
        if isinstance(v, Fraction):
            out.append(v)
        elif isinstance(v, (int, np.integer)):
            out.append(Fraction(int(v)))
        else:
            f = float(v)
            if not np.isfinite(f):
                raise ValueError(f"non-finite moment value {v!r}")
            out.append(Fraction(f))
    return out


def _positive_gamma(gamma) -> Fraction:
    g = gamma if isinstance(gamma, Fraction) else Fraction(float(gamma))
    if g <= 0:
        raise ValueError(f"reference rate must be positive, got {gamma}")
    return g


def forward_stirling_transform(
    clock_moments: Sequence,
    gamma,
    *,
    exact: bool = False,
    max_order: int | None = None,
):
    """Relative moments m_1..m_K implied by clock moments M_1..M_K.

    m_k = sum_{j=1}^k S(k, j) gamma^j M_j. ``M_0 = 1`` is implied and must
    not be included in ``clock_moments``.
    """
    moments = _as_fractions(clock_moments)
    g = _positive_gamma(gamma)
    K = len(moments)
    table = _table_for("second", K, max_order)
    scaled = [g ** (j + 1) * moments[j] for j in range(K)]
    result = [
        sum(table[k, j] * scaled[j - 1] for j in range(1, k + 1)) for k in range(1, K + 1)
    ]
    if exact:
        return result
    return np.array([float(x) for x in result])


def inverse_stirling_transform(
    relative_moments: Sequence,
    gamma,
    *,
    exact: bool = False,
    max_order: int | None = None,
):
    """Clock moments M_1..M_K from relative moments m_1..m_K.

    M_k = gamma^{-k} sum_{j=1}^k (-1)^{k-j} c(k, j) m_j.
    """
    rel = _as_fractions(relative_moments)
    g = _positive_gamma(gamma)
    K = len(rel)
    table = _table_for("first_unsigned", K, max_order)
    result = []
    for k in range(1, K + 1):
        acc = sum((-1) ** (k - j) * table[k, j] * rel[j - 1] for j in range(1, k + 1))
        result.append(acc / g**k)
    if exact:
        return result
    return np.array([float(x) for x in result])
