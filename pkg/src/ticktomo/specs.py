"""JSON clock specifications.

Every model's ``to_dict`` output is accepted back by :func:`parse_clock_spec`,
so specs round-trip. Complex matrices are written row-major as
``[[[re, im], ...], ...]``; plain real entries are accepted too.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .clock_models import (
    ClockValidationError,
    Erlang,
    Exponential,
    Gamma,
    LindbladClock,
    LindbladDerived,
    Mixture,
    UniformShifted,
    WaitingTimeModel,
)
from .simulator import RateMatrixClock

__all__ = ["parse_clock_spec", "load_clock_spec", "parse_matrix", "SPEC_TYPES"]

SPEC_TYPES = ("exponential", "erlang", "gamma", "uniform", "mixture", "lindblad", "rate_matrix")


def _require(data: dict, key: str, where: str):
    if key not in data:
        raise ClockValidationError(f"{where}{key}", "missing required field")
    return data[key]


def _number(data: dict, key: str, where: str) -> float:
    value = _require(data, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ClockValidationError(f"{where}{key}", f"must be a number, got {value!r}")
    return value


def parse_matrix(value, field: str) -> np.ndarray:
    """Dense complex matrix from nested lists of numbers or [re, im] pairs."""
    if not isinstance(value, list) or not value or not all(isinstance(r, list) for r in value):
        raise ClockValidationError(field, "must be a non-empty list of rows")
    rows = []
    for i, row in enumerate(value):
        out = []
        for j, z in enumerate(row):
            if isinstance(z, list) and len(z) == 2 and all(isinstance(p, (int, float)) for p in z):
                out.append(complex(z[0], z[1]))
            elif isinstance(z, (int, float)) and not isinstance(z, bool):
                out.append(complex(z))
            else:
                raise ClockValidationError(f"{field}[{i}][{j}]", f"expected number or [re, im], got {z!r}")
        rows.append(out)
    if len({len(r) for r in rows}) != 1:
        raise ClockValidationError(field, "rows have different lengths")
    return np.array(rows, dtype=complex)


def _matrix_list(data: dict, key: str, where: str) -> list:
    value = data.get(key, [])
    if not isinstance(value, list):
        raise ClockValidationError(f"{where}{key}", "must be a list of matrices")
    return [parse_matrix(m, f"{where}{key}[{i}]") for i, m in enumerate(value)]


def _real_matrix(value, field: str) -> np.ndarray:
    m = parse_matrix(value, field)
    if np.any(m.imag != 0):
        raise ClockValidationError(field, "rates must be real")
    return m.real


def parse_clock_spec(data: dict, _where: str = ""):
    """Build a waiting-time model or rate-matrix clock from a spec dict.

    Errors are :class:`ClockValidationError` naming the offending field,
    with a dotted path for nested mixture components.
    """
    if not isinstance(data, dict):
        raise ClockValidationError(_where.rstrip(".") or "spec", "must be a JSON object")
    kind = _require(data, "type", _where)
    if kind not in SPEC_TYPES:
        raise ClockValidationError(f"{_where}type", f"unknown clock type {kind!r}; expected one of {SPEC_TYPES}")
    try:
        if kind == "exponential":
            return Exponential(_number(data, "rate", _where))
        if kind == "gamma":
            return Gamma(_number(data, "shape", _where), _number(data, "rate", _where))
        if kind == "erlang":
            return Erlang(_number(data, "shape", _where), _number(data, "rate", _where))
        if kind == "uniform":
            return UniformShifted(_number(data, "lo", _where), _number(data, "hi", _where))
        if kind == "mixture":
            comps = _require(data, "components", _where)
            if not isinstance(comps, list):
                raise ClockValidationError(f"{_where}components", "must be a list")
            parsed = [parse_clock_spec(c, f"{_where}components[{i}].") for i, c in enumerate(comps)]
            for i, p in enumerate(parsed):
                if not isinstance(p, WaitingTimeModel):
                    raise ClockValidationError(f"{_where}components[{i}]", "must be a waiting-time model")
            return Mixture(tuple(_require(data, "weights", _where)), tuple(parsed))
        if kind == "lindblad":
            H = parse_matrix(_require(data, "hamiltonian", _where), f"{_where}hamiltonian")
            clock = LindbladClock(
                H, tuple(_matrix_list(data, "non_tick_jumps", _where)), tuple(_matrix_list(data, "tick_jumps", _where))
            )
            rho = parse_matrix(_require(data, "initial_state", _where), f"{_where}initial_state")
            return LindbladDerived(clock, rho)
        # rate_matrix
        rates = _real_matrix(_require(data, "rates", _where), f"{_where}rates")
        if "tick_forward" in data or "tick_backward" in data:
            return RateMatrixClock.from_transitions(
                rates, data.get("tick_forward", ()), data.get("tick_backward", ()), data.get("initial_state", 0)
            )
        fwd = data.get("forward")
        bwd = data.get("backward")
        return RateMatrixClock(
            rates,
            None if fwd is None else _real_matrix(fwd, f"{_where}forward"),
            None if bwd is None else _real_matrix(bwd, f"{_where}backward"),
            data.get("initial_state", 0),
        )
    except ClockValidationError as exc:
        if _where and not exc.field.startswith(_where):
            raise ClockValidationError(f"{_where}{exc.field}", str(exc).split(": ", 1)[-1]) from exc
        raise


def load_clock_spec(path):
    """Read and parse a clock spec JSON file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ClockValidationError("spec", f"invalid JSON in {path}: {exc}") from exc
    return parse_clock_spec(data)
