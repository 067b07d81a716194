"""Operational tick records: a target clock read against a reference.

Randomness is organised in substreams keyed by ``(seed, purpose, index)``
through :class:`numpy.random.SeedSequence` spawn keys. Reset-protocol draws
are grouped in fixed blocks of :data:`BLOCK_SIZE` samples, non-reset
repetitions get one substream each. Output therefore never depends on the
number of worker threads.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .clock_models import ClockValidationError, LindbladDerived, WaitingTimeModel

__all__ = [
    "BLOCK_SIZE",
    "TickSample",
    "RateMatrixClock",
    "AtTime",
    "AtRefTick",
    "Trajectory",
    "substream",
    "sample_reset_counts",
    "sample_poisson_ticks",
    "sample_perfect_reference_counts",
    "gillespie_trajectory",
    "simulate_registers",
    "sample_nonreset_table",
    "sample_nonreset_counts",
    "default_burn_in",
]

BLOCK_SIZE = 1 << 16
_REPS_PER_TASK = 64

# substream purposes
_WAIT, _REF, _PHASE, _CLOCK, _REFTICK, _POISSON = range(6)


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``."""
    if not isinstance(seed, (int, np.integer)) or isinstance(seed, bool):
        raise TypeError(f"seed must be an integer, got {seed!r}")
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def _map_ordered(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# sample container
# --------------------------------------------------------------------------

_PROTOCOLS = ("reset", "nonreset", "perfect_reference")
_CSV_HEADER = ["protocol", "gamma_or_tau", "n_ref", "seed", "model_digest"]


@dataclass(frozen=True, eq=False)
class TickSample:
    """Counts observed in one experiment.

    ``reset``: reference ticks between consecutive target ticks.
    ``perfect_reference``: ticks of a periodic reference (``gamma_or_tau``
    is then the period) between target ticks.
    ``nonreset``: net target register change at the ``n_ref``-th reference
    tick, one value per repetition.
    """

    protocol: str
    gamma_or_tau: float
    counts: np.ndarray
    seed: int
    model_digest: str
    n_ref: int | None = None
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in _PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            raise ValueError("counts must be one-dimensional")
        if counts.size and not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise ValueError("counts must be integers")
        counts = counts.astype(np.int64)
        if self.protocol != "nonreset" and np.any(counts < 0):
            raise ValueError("reset-protocol counts must be non-negative")
        if self.protocol == "nonreset" and (self.n_ref is None or self.n_ref < 1):
            raise ValueError("nonreset samples need n_ref >= 1")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "gamma_or_tau", float(self.gamma_or_tau))

    @property
    def sample_size(self) -> int:
        return int(self.counts.size)

    @property
    def gamma(self) -> float:
        if self.protocol == "perfect_reference":
            raise AttributeError("perfect-reference samples carry a period, not a rate")
        return self.gamma_or_tau

    @property
    def tau(self) -> float:
        if self.protocol != "perfect_reference":
            raise AttributeError("only perfect-reference samples carry a period")
        return self.gamma_or_tau

    def __eq__(self, other):
        if not isinstance(other, TickSample):
            return NotImplemented
        return self.to_json() == other.to_json()

    def _header_row(self) -> list[str]:
        return [
            self.protocol,
            repr(self.gamma_or_tau),
            "" if self.n_ref is None else str(self.n_ref),
            str(self.seed),
            self.model_digest,
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_CSV_HEADER)
        w.writerow(self._header_row())
        buf.write("\n".join(str(int(c)) for c in self.counts))
        if self.counts.size:
            buf.write("\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "gamma_or_tau": self.gamma_or_tau,
            "n_ref": self.n_ref,
            "seed": int(self.seed),
            "model_digest": self.model_digest,
            "sample_size": self.sample_size,
            "parameters": self.parameters,
            "units": {
                "gamma_or_tau": "time" if self.protocol == "perfect_reference" else "per_time",
                "counts": "ticks",
            },
            "counts": [int(c) for c in self.counts],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, csv_path=None, json_path=None) -> None:
        if csv_path is not None:
            Path(csv_path).write_text(self.to_csv())
        if json_path is not None:
            Path(json_path).write_text(self.to_json())

    @classmethod
    def from_csv(cls, text: str) -> "TickSample":
        lines = text.splitlines()
        rows = list(csv.reader(lines[:2]))
        if len(rows) < 2 or rows[0] != _CSV_HEADER:
            raise ValueError(f"CSV sample must start with header {','.join(_CSV_HEADER)}")
        protocol, g, n_ref, seed, digest = rows[1]
        counts = np.array([int(x) for x in lines[2:] if x.strip()], dtype=np.int64)
        return cls(
            protocol=protocol,
            gamma_or_tau=float(g),
            counts=counts,
            seed=int(seed),
            model_digest=digest,
            n_ref=int(n_ref) if n_ref else None,
        )

    @classmethod
    def from_dict(cls, data: dict) -> "TickSample":
        sample = cls(
            protocol=data["protocol"],
            gamma_or_tau=data["gamma_or_tau"],
            counts=np.array(data["counts"], dtype=np.int64),
            seed=int(data["seed"]),
            model_digest=data["model_digest"],
            n_ref=data.get("n_ref"),
            parameters=dict(data.get("parameters", {})),
        )
        if "sample_size" in data and data["sample_size"] != sample.sample_size:
            raise ValueError("sample_size does not match number of counts")
        return sample

    @classmethod
    def load(cls, path) -> "TickSample":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
            return cls.from_dict(json.loads(text))
        return cls.from_csv(text)


# --------------------------------------------------------------------------
# reset protocol
# --------------------------------------------------------------------------


def _blocks(N: int) -> list[tuple[int, int]]:
    return [(b, min(BLOCK_SIZE, N - b * BLOCK_SIZE)) for b in range(math.ceil(N / BLOCK_SIZE))]


def _check_size(name: str, value: int) -> int:
    if int(value) != value or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def _waiting_times(model: WaitingTimeModel, N: int, seed: int, workers: int) -> list[np.ndarray]:
    if isinstance(model, LindbladDerived):
        model.prepare()

    def draw(block):
        b, size = block
        return model.sample(substream(seed, _WAIT, b), size)

    return _map_ordered(draw, _blocks(N), workers)


def sample_reset_counts(
    model: WaitingTimeModel, gamma: float, N: int, seed: int, *, workers: int = 1
) -> TickSample:
    """Reference-tick counts between N consecutive ticks of a reset clock.

    Each count is drawn as t ~ omega, then n ~ Poisson(gamma t).
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    N = _check_size("N", N)
    waits = _waiting_times(model, N, seed, workers)

    def count(args):
        b, t = args
        return substream(seed, _REF, b).poisson(gamma * t)

    counts = np.concatenate(_map_ordered(count, list(enumerate(waits)), workers))
    return TickSample("reset", gamma, counts, seed, model.digest())


def sample_perfect_reference_counts(
    model: WaitingTimeModel, tau: float, N: int, seed: int, *, workers: int = 1
) -> TickSample:
    """Counts of a periodic reference (period ``tau``) between target ticks.

    The reference phase is uniform at the start and then runs on, so each
    count is the number of lattice points crossed by one waiting time.
    Waiting times use the same substreams as :func:`sample_reset_counts`.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    N = _check_size("N", N)
    waits = _waiting_times(model, N, seed, workers)
    phase = float(substream(seed, _PHASE).random())
    parts = []
    for t in waits:
        x = phase + np.cumsum(t / tau)
        edges = np.floor(np.concatenate(([phase], x)))
        parts.append(np.diff(edges).astype(np.int64))
        phase = float(x[-1] - math.floor(x[-1]))
    counts = np.concatenate(parts)
    return TickSample("perfect_reference", tau, counts, seed, model.digest())


def sample_poisson_ticks(gamma: float, t_end: float, seed: int) -> np.ndarray:
    """Arrival times in [0, t_end] of a Poisson stream of rate ``gamma``."""
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if gamma == 0:
        return np.empty(0)
    rng = substream(seed, _POISSON)
    chunk = max(16, int(gamma * t_end * 1.1) + 16)
    out = []
    last = 0.0
    while True:
        times = last + np.cumsum(rng.exponential(1.0 / gamma, chunk))
        if times[-1] > t_end:
            out.append(times[times <= t_end])
            break
        out.append(times)
        last = times[-1]
    return np.concatenate(out)


# --------------------------------------------------------------------------
# classical rate-matrix clocks
# --------------------------------------------------------------------------


def _rate_matrix(name: str, value, d: int | None) -> np.ndarray:
    R = np.array(value, dtype=float)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] < 1:
        raise ClockValidationError(name, f"must be a non-empty square matrix, got shape {R.shape}")
    if d is not None and R.shape[0] != d:
        raise ClockValidationError(name, f"must be {d}x{d}, got {R.shape[0]}x{R.shape[1]}")
    if not np.all(np.isfinite(R)) or np.any(R < 0):
        raise ClockValidationError(name, "entries must be finite and non-negative")
    R.setflags(write=False)
    return R


@dataclass(frozen=True, eq=False)
class RateMatrixClock:
    """Continuous-time Markov clockwork with a tick register.

    ``rates[i, j]`` is the rate of the silent jump i -> j (diagonal
    ignored). ``forward[i, j]`` and ``backward[i, j]`` are rates of jumps
    i -> j that move the register by +1 and -1; their diagonals are
    allowed, so a one-state clock is a (biased) random walk.
    """

    rates: np.ndarray
    forward: np.ndarray | None = None
    backward: np.ndarray | None = None
    initial_state: int = 0

    def __post_init__(self):
        R = np.array(self.rates, dtype=float)
        if R.ndim == 2 and R.shape[0] == R.shape[1]:
            np.fill_diagonal(R, 0.0)
        R = _rate_matrix("rates", R, None)
        d = R.shape[0]
        F = _rate_matrix("forward", np.zeros((d, d)) if self.forward is None else self.forward, d)
        B = _rate_matrix("backward", np.zeros((d, d)) if self.backward is None else self.backward, d)
        if not (F.any() or B.any()):
            raise ClockValidationError("forward", "no register-moving transition has a positive rate")
        if int(self.initial_state) != self.initial_state or not 0 <= int(self.initial_state) < d:
            raise ClockValidationError("initial_state", f"must index one of {d} states")
        object.__setattr__(self, "rates", R)
        object.__setattr__(self, "forward", F)
        object.__setattr__(self, "backward", B)
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @classmethod
    def from_transitions(cls, rates, tick_forward=(), tick_backward=(), initial_state: int = 0):
        """Split one rate matrix into silent and register-moving parts.

        Transitions (i, j) listed in ``tick_forward``/``tick_backward`` take
        their rate from ``rates[i, j]``.
        """
        R = _rate_matrix("rates", rates, None)
        d = R.shape[0]
        silent, F, B = R.copy(), np.zeros((d, d)), np.zeros((d, d))
        fwd = {(int(i), int(j)) for i, j in tick_forward}
        bwd = {(int(i), int(j)) for i, j in tick_backward}
        if fwd & bwd:
            raise ClockValidationError("tick_backward", "overlaps tick_forward")
        for name, ts, target in (("tick_forward", fwd, F), ("tick_backward", bwd, B)):
            for i, j in ts:
                if not (0 <= i < d and 0 <= j < d):
                    raise ClockValidationError(name, f"transition ({i}, {j}) outside {d} states")
                target[i, j] = R[i, j]
                silent[i, j] = 0.0
        return cls(silent, F, B, initial_state)

    @property
    def states(self) -> int:
        return self.rates.shape[0]

    @property
    def register_monotone(self) -> bool:
        return not self.backward.any()

    @property
    def smallest_rate(self) -> float:
        allr = np.concatenate([self.rates.ravel(), self.forward.ravel(), self.backward.ravel()])
        return float(allr[allr > 0].min())

    def generator(self) -> np.ndarray:
        """Master-equation generator W with dp/dt = W p (columns sum to zero)."""
        total = self.rates + self.forward + self.backward
        W = total.T.copy()
        W -= np.diag(total.sum(axis=1))
        return W

    def to_dict(self) -> dict:
        return {
            "type": "rate_matrix",
            "rates": self.rates.tolist(),
            "forward": self.forward.tolist(),
            "backward": self.backward.tolist(),
            "initial_state": self.initial_state,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def _tables(self):
        d = self.states
        total, cum, dest, inc = [], [], [], []
        for i in range(d):
            moves = []
            for step, mat in ((0, self.rates), (1, self.forward), (-1, self.backward)):
                moves += [(float(mat[i, j]), j, step) for j in range(d) if mat[i, j] > 0]
            r = [m[0] for m in moves]
            total.append(float(sum(r)))
            cum.append(np.cumsum(r)[:-1].tolist() if r else [])
            dest.append([m[1] for m in moves])
            inc.append([m[2] for m in moves])
        return total, cum, dest, inc


def default_burn_in(clock: RateMatrixClock) -> float:
    """20 / (smallest nonzero rate)."""
    return 20.0 / clock.smallest_rate


@dataclass(frozen=True)
class AtTime:
    t: float


@dataclass(frozen=True)
class AtRefTick:
    n: int
    gamma: float


@dataclass(frozen=True)
class Trajectory:
    register_net: int
    final_state: int
    stop_time: float
    jumps: int
    absorbed: bool


class _Runner:
    """Gillespie stepping for one repetition, consuming one substream."""

    def __init__(self, tables, rng: np.random.Generator):
        self.total, self.cum, self.dest, self.inc = tables
        self.rng = rng
        self._exp: list[float] = []
        self._uni: list[float] = []
        self._chunk = 64
        self.jumps = 0
        self.absorbed = False

    def _refill(self):
        self._exp = self.rng.standard_exponential(self._chunk).tolist()[::-1]
        self._uni = self.rng.random(self._chunk).tolist()[::-1]
        self._chunk = min(self._chunk * 2, 8192)

    def advance(self, state: int, duration: float) -> tuple[int, int]:
        """Run for ``duration``; return (state, net register change).

        Holding times are memoryless, so restarting at a checkpoint is exact.
        """
        total, cum, dest, inc = self.total, self.cum, self.dest, self.inc
        t = 0.0
        net = 0
        jumps = 0
        exp_buf, uni_buf = self._exp, self._uni
        while True:
            rate = total[state]
            if rate == 0.0:
                self.absorbed = True
                break
            if not exp_buf:
                self._refill()
                exp_buf, uni_buf = self._exp, self._uni
            t += exp_buf.pop() / rate
            if t > duration:
                break
            k = bisect_right(cum[state], uni_buf.pop() * rate)
            net += inc[state][k]
            state = dest[state][k]
            jumps += 1
        self.jumps += jumps
        return state, net


def _stop_time(stop, ref_rng: np.random.Generator) -> float:
    if isinstance(stop, AtTime):
        if not stop.t > 0:
            raise ValueError("stop time must be positive")
        return float(stop.t)
    if isinstance(stop, AtRefTick):
        if stop.n < 1 or not stop.gamma > 0:
            raise ValueError("reference stop needs n >= 1 and gamma > 0")
        # time of the n-th arrival of a Poisson(gamma) stream
        return float(ref_rng.gamma(stop.n, 1.0 / stop.gamma))
    raise TypeError(f"unknown stop condition {stop!r}")


def gillespie_trajectory(
    clock: RateMatrixClock,
    stop,
    seed: int,
    *,
    index: int = 0,
    burn_in: float = 0.0,
    initial_state: int | None = None,
) -> Trajectory:
    """Simulate one repetition and return the net register reading at ``stop``.

    ``stop`` is :class:`AtTime` or :class:`AtRefTick`. After ``burn_in`` the
    register is zeroed but the clockwork state is kept. An absorbing state
    sets ``absorbed`` and the trajectory idles until the stop time.
    """
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    runner = _Runner(clock._tables(), substream(seed, _CLOCK, index))
    state = clock.initial_state if initial_state is None else int(initial_state)
    if burn_in > 0:
        state, _ = runner.advance(state, burn_in)
    t_stop = _stop_time(stop, substream(seed, _REFTICK, index))
    state, net = runner.advance(state, t_stop)
    return Trajectory(net, state, t_stop, runner.jumps, runner.absorbed)


def simulate_registers(
    clock: RateMatrixClock,
    stop,
    M: int,
    seed: int,
    *,
    burn_in: float = 0.0,
    workers: int = 1,
) -> np.ndarray:
    """Net register readings of M independent repetitions (repetition m uses substream m)."""
    M = _check_size("M", M)
    chunks = [range(a, min(a + _REPS_PER_TASK, M)) for a in range(0, M, _REPS_PER_TASK)]

    def run(idx):
        return [gillespie_trajectory(clock, stop, seed, index=m, burn_in=burn_in).register_net for m in idx]

    return np.array([v for part in _map_ordered(run, chunks, workers) for v in part], dtype=np.int64)


def sample_nonreset_table(
    clock: RateMatrixClock,
    gamma: float,
    n_values: Sequence[int],
    M: int,
    seed: int,
    *,
    burn_in: float | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Register readings at several reference-tick counts along each repetition.

    Returns an (M, len(n_values)) integer array; column i holds the net
    register change between the end of burn-in and the ``n_values[i]``-th
    reference tick. Columns share trajectories, so they are correlated, but
    each column has the correct marginal law.
    """
    n_values = [int(n) for n in n_values]
    if not n_values or min(n_values) < 1:
        raise ValueError("reference tick counts must be >= 1")
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("reference tick counts must be strictly increasing")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    M = _check_size("M", M)
    if burn_in is None:
        burn_in = default_burn_in(clock)
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    tables = clock._tables()
    increments = np.diff([0] + n_values)

    def one(m):
        runner = _Runner(tables, substream(seed, _CLOCK, m))
        ref = substream(seed, _REFTICK, m)
        state = clock.initial_state
        if burn_in > 0:
            state, _ = runner.advance(state, burn_in)
        row = []
        net = 0
        for dn in increments:
            state, dk = runner.advance(state, float(ref.gamma(dn, 1.0 / gamma)))
            net += dk
            row.append(net)
        return row

    chunks = [range(a, min(a + _REPS_PER_TASK, M)) for a in range(0, M, _REPS_PER_TASK)]
    parts = _map_ordered(lambda idx: [one(m) for m in idx], chunks, workers)
    return np.array([row for part in parts for row in part], dtype=np.int64)


def sample_nonreset_counts(
    clock: RateMatrixClock,
    gamma: float,
    n_ref: int,
    M: int,
    seed: int,
    *,
    burn_in: float | None = None,
    workers: int = 1,
) -> TickSample:
    """Net target ticks observed at the ``n_ref``-th reference tick, M repetitions."""
    if int(n_ref) != n_ref or n_ref < 1:
        raise ValueError(f"n_ref must be a positive integer, got {n_ref!r}")
    if burn_in is None:
        burn_in = default_burn_in(clock)
    table = sample_nonreset_table(clock, gamma, [n_ref], M, seed, burn_in=burn_in, workers=workers)
    return TickSample(
        "nonreset",
        gamma,
        table[:, 0],
        seed,
        clock.digest(),
        n_ref=int(n_ref),
        parameters={"burn_in": float(burn_in)},
    )
