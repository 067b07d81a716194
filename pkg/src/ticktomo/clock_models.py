"""Target-clock descriptions and first-tick dynamics of finite clockworks.

Two families of clock live here. Analytic waiting-time laws (exponential,
Erlang, gamma, shifted uniform, mixtures) have closed-form moments and
samplers. A :class:`LindbladClock` is a finite clockwork whose tick channel
is compressed into a single absorbing "ticked" level; the resulting
generator acts on operators over ``H_C (+) C`` and everything about the
first tick (density, survival, spectral gap, MGF) is computed from it.

Operators are vectorised column-major, so ``vec(A X B) = (B^T kron A) vec(X)``.
"""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import integrate, linalg, stats

__all__ = [
    "ClockValidationError",
    "NonTerminatingSampleError",
    "NotTickingError",
    "StepSizeError",
    "DivergenceWarning",
    "WaitingTimeModel",
    "Exponential",
    "Erlang",
    "Gamma",
    "UniformShifted",
    "Mixture",
    "LindbladDerived",
    "LindbladClock",
    "ReducedGenerator",
    "SpectralReport",
    "EnvelopeCertificate",
    "MgfResult",
    "analytic_moment",
    "sample_waiting_time",
    "build_reduced_generator",
    "spectral_analysis",
    "propagate",
    "survival_probability",
    "waiting_time_density",
    "lindblad_moment",
    "certify_envelope",
    "mgf_quadrature",
    "matrix_to_json",
]


class ClockValidationError(ValueError):
    """Invalid clock description. ``field`` names the offending input."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class NonTerminatingSampleError(RuntimeError):
    """A drawn waiting time would be infinite (the clock may never tick)."""


class NotTickingError(ValueError):
    """Operation needs a clock that ticks with certainty."""


class StepSizeError(RuntimeError):
    """Adaptive propagation could not meet its trace tolerance."""


class DivergenceWarning(RuntimeWarning):
    """MGF argument lies outside the certified convergence domain."""


# --------------------------------------------------------------------------
# analytic waiting-time laws
# --------------------------------------------------------------------------


class WaitingTimeModel:
    """Base class for a waiting-time law omega(t) on t >= 0."""

    kind: str = "abstract"

    def pdf(self, t) -> np.ndarray:
        raise NotImplementedError

    def moment(self, k: int) -> float | None:
        """Exact k-th raw moment, or None when no closed form exists."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    @property
    def mgf_abscissa(self) -> float:
        """Supremum of x for which the MGF is certified finite."""
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ClockValidationError(name, f"must be a positive finite number, got {value!r}")
    return value


@dataclass(frozen=True)
class Exponential(WaitingTimeModel):
    rate: float
    kind = "exponential"

    def __post_init__(self):
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t >= 0, self.rate * np.exp(-self.rate * t), 0.0)

    def moment(self, k):
        return math.factorial(k) / self.rate**k

    def sample(self, rng, size):
        return rng.exponential(1.0 / self.rate, size)

    @property
    def mgf_abscissa(self):
        return self.rate

    def to_dict(self):
        return {"type": "exponential", "rate": self.rate}


@dataclass(frozen=True)
class Gamma(WaitingTimeModel):
    shape: float
    rate: float
    kind = "gamma"

    def __post_init__(self):
        object.__setattr__(self, "shape", _positive("shape", self.shape))
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    def pdf(self, t):
        return stats.gamma.pdf(np.asarray(t, dtype=float), self.shape, scale=1.0 / self.rate)

    def moment(self, k):
        # Gamma(a+k) / (Gamma(a) lam^k) as a rising product, avoiding overflow in gamma()
        return math.prod(self.shape + i for i in range(k)) / self.rate**k

    def sample(self, rng, size):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    @property
    def mgf_abscissa(self):
        return self.rate

    def to_dict(self):
        return {"type": "gamma", "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class Erlang(Gamma):
    """Gamma law with integer shape: ``shape`` exponential stages at ``rate``."""

    kind = "erlang"

    def __post_init__(self):
        if int(self.shape) != self.shape or self.shape < 1:
            raise ClockValidationError("shape", f"Erlang shape must be a positive integer, got {self.shape!r}")
        object.__setattr__(self, "shape", int(self.shape))
        object.__setattr__(self, "rate", _positive("rate", self.rate))

    def to_dict(self):
        return {"type": "erlang", "shape": self.shape, "rate": self.rate}


@dataclass(frozen=True)
class UniformShifted(WaitingTimeModel):
    lo: float
    hi: float
    kind = "uniform"

    def __post_init__(self):
        lo, hi = float(self.lo), float(self.hi)
        if not (math.isfinite(lo) and lo >= 0):
            raise ClockValidationError("lo", f"must be finite and >= 0, got {self.lo!r}")
        if not (math.isfinite(hi) and hi > lo):
            raise ClockValidationError("hi", f"must be finite and > lo, got {self.hi!r}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def pdf(self, t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= self.lo) & (t <= self.hi), 1.0 / (self.hi - self.lo), 0.0)

    def moment(self, k):
        # (hi^{k+1} - lo^{k+1}) / ((k+1)(hi-lo)) written without the cancellation
        return sum(self.hi**i * self.lo ** (k - i) for i in range(k + 1)) / (k + 1)

    def sample(self, rng, size):
        return self.lo + (self.hi - self.lo) * rng.random(size)

    @property
    def mgf_abscissa(self):
        return math.inf

    def to_dict(self):
        return {"type": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Mixture(WaitingTimeModel):
    weights: tuple
    components: tuple
    kind = "mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ClockValidationError("weights", "must be a non-empty list")
        if len(w) != len(self.components):
            raise ClockValidationError("weights", "length must match components")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ClockValidationError("weights", "must be non-negative and sum to 1")
        for i, comp in enumerate(self.components):
            if not isinstance(comp, WaitingTimeModel):
                raise ClockValidationError(f"components[{i}]", "not a waiting-time model")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))
        object.__setattr__(self, "components", tuple(self.components))

    def pdf(self, t):
        return sum(w * c.pdf(t) for w, c in zip(self.weights, self.components))

    def moment(self, k):
        parts = [c.moment(k) for c in self.components]
        if any(p is None for p in parts):
            return None
        return sum(w * p for w, p in zip(self.weights, parts))

    def sample(self, rng, size):
        labels = rng.choice(len(self.weights), size=size, p=self.weights)
        out = np.empty(size)
        for i, comp in enumerate(self.components):
            mask = labels == i
            n = int(mask.sum())
            if n:
                out[mask] = comp.sample(rng, n)
        return out

    @property
    def mgf_abscissa(self):
        return min(c.mgf_abscissa for w, c in zip(self.weights, self.components) if w > 0)

    def to_dict(self):
        return {
            "type": "mixture",
            "weights": list(self.weights),
            "components": [c.to_dict() for c in self.components],
        }


# --------------------------------------------------------------------------
# finite clockworks
# --------------------------------------------------------------------------


def _as_square(name: str, value, d: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ClockValidationError(name, f"must be a square matrix, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ClockValidationError(name, f"must be {d}x{d}, got {arr.shape[0]}x{arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ClockValidationError(name, "contains non-finite entries")
    return arr


def matrix_to_json(m: np.ndarray) -> list:
    """Dense complex matrix as row-major ``[[ [re, im], ... ], ...]``."""
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


@dataclass(frozen=True, eq=False)
class LindbladClock:
    """Finite clockwork (H, {L_k}, {J_j}) with hbar = 1.

    ``non_tick_jumps`` act on the clockwork only; each ``tick_jumps`` entry
    also advances the register by one.
    """

    hamiltonian: np.ndarray
    non_tick_jumps: tuple = ()
    tick_jumps: tuple = ()
    hermiticity_tol: float = field(default=1e-12, repr=False)

    def __post_init__(self):
        H = _as_square("hamiltonian", self.hamiltonian)
        d = H.shape[0]
        if d < 1:
            raise ClockValidationError("hamiltonian", "dimension must be >= 1")
        if np.max(np.abs(H - H.conj().T)) > self.hermiticity_tol:
            raise ClockValidationError("hamiltonian", "not Hermitian")
        L = tuple(_as_square(f"non_tick_jumps[{i}]", m, d) for i, m in enumerate(self.non_tick_jumps))
        J = tuple(_as_square(f"tick_jumps[{i}]", m, d) for i, m in enumerate(self.tick_jumps))
        for arr in (H, *L, *J):
            arr.setflags(write=False)
        object.__setattr__(self, "hamiltonian", H)
        object.__setattr__(self, "non_tick_jumps", L)
        object.__setattr__(self, "tick_jumps", J)

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @property
    def tick_operator(self) -> np.ndarray:
        """V = sum_j J_j^dag J_j."""
        V = np.zeros((self.dim, self.dim), dtype=complex)
        for J in self.tick_jumps:
            V += J.conj().T @ J
        return V

    def to_dict(self) -> dict:
        return {
            "type": "lindblad",
            "hamiltonian": matrix_to_json(self.hamiltonian),
            "non_tick_jumps": [matrix_to_json(m) for m in self.non_tick_jumps],
            "tick_jumps": [matrix_to_json(m) for m in self.tick_jumps],
        }


def _validate_state(rho0, d: int) -> np.ndarray:
    rho = _as_square("initial_state", rho0, d)
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ClockValidationError("initial_state", "not Hermitian")
    if abs(np.trace(rho).real - 1.0) > 1e-10:
        raise ClockValidationError("initial_state", "trace must be 1")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -1e-10:
        raise ClockValidationError("initial_state", "not positive semi-definite")
    return rho


def _vec(m: np.ndarray) -> np.ndarray:
    return np.asarray(m).reshape(-1, order="F")


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(v).reshape((n, n), order="F")


def _dissipator(L: np.ndarray) -> np.ndarray:
    n = L.shape[0]
    eye = np.eye(n)
    LdL = L.conj().T @ L
    return np.kron(L.conj(), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye)


@dataclass(frozen=True, eq=False)
class ReducedGenerator:
    """First-tick generator on operators over ``H_C (+) C``.

    ``matrix`` is (d+1)^2 square in column-major vec order. The ticked
    projector |T><T| sits at ``tick_index``.
    """

    matrix: np.ndarray
    clock_dim: int

    @property
    def dim(self) -> int:
        return (self.clock_dim + 1) ** 2

    @property
    def tick_index(self) -> int:
        n = self.clock_dim + 1
        return self.clock_dim + self.clock_dim * n

    @cached_property
    def clockwork_indices(self) -> np.ndarray:
        """vec positions of the clockwork block (no coherence with |T>)."""
        n, d = self.clock_dim + 1, self.clock_dim
        return np.array([a + b * n for b in range(d) for a in range(d)])

    @cached_property
    def sector_indices(self) -> np.ndarray:
        """Clockwork block plus |T><T|: the invariant sector of incoherent states."""
        return np.append(self.clockwork_indices, self.tick_index)

    @cached_property
    def sector_matrix(self) -> np.ndarray:
        idx = self.sector_indices
        return self.matrix[np.ix_(idx, idx)]

    @cached_property
    def no_tick_matrix(self) -> np.ndarray:
        """Generator of the un-ticked clockwork state eta_t alone."""
        idx = self.clockwork_indices
        return self.matrix[np.ix_(idx, idx)]

    @cached_property
    def tick_rate_row(self) -> np.ndarray:
        """Row vector r with r . vec(eta) = Tr[V eta] on the clockwork block."""
        return self.matrix[self.tick_index, self.clockwork_indices]

    def apply(self, rho: np.ndarray) -> np.ndarray:
        n = self.clock_dim + 1
        return _unvec(self.matrix @ _vec(rho), n)


def build_reduced_generator(clock: LindbladClock) -> ReducedGenerator:
    """Reduced first-tick generator of a finite clockwork.

    L'[rho] = L0'[rho] - 1/2 {V', rho} + Tr[V' rho] |T><T| where primes
    denote direct sum with the zero operator on the ticked level.
    """
    if not isinstance(clock, LindbladClock):
        raise TypeError("expected a LindbladClock")
    d = clock.dim
    n = d + 1

    def embed(m):
        out = np.zeros((n, n), dtype=complex)
        out[:d, :d] = m
        return out

    eye = np.eye(n)
    Hp = embed(clock.hamiltonian)
    S = -1j * (np.kron(eye, Hp) - np.kron(Hp.T, eye))
    for L in clock.non_tick_jumps:
        S += _dissipator(embed(L))
    Vp = embed(clock.tick_operator)
    S -= 0.5 * (np.kron(eye, Vp) + np.kron(Vp.T, eye))
    tick = np.zeros(n * n, dtype=complex)
    tick[d + d * n] = 1.0
    S += np.outer(tick, _vec(Vp.T))
    S.setflags(write=False)
    return ReducedGenerator(matrix=S, clock_dim=d)


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray
    delta: float | None
    ticks_eventually: bool
    jordan_defect_flag: bool
    eigenvector_condition: float
    stationary_overlap: float
    zero_multiplicity: int

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "delta": self.delta,
            "ticks_eventually": self.ticks_eventually,
            "jordan_defect_flag": self.jordan_defect_flag,
            "eigenvector_condition": self.eigenvector_condition,
            "stationary_overlap": self.stationary_overlap,
            "zero_multiplicity": self.zero_multiplicity,
            "units": {"eigenvalues": "per_time", "delta": "per_time"},
        }


def spectral_analysis(
    gen: ReducedGenerator, tol: float = 1e-9, defect_condition: float = 1e8
) -> SpectralReport:
    """Eigenvalues of the reduced generator on the incoherent sector.

    Coherences between the clockwork and the ticked level never enter the
    first-tick dynamics of an incoherent initial state, so only the
    clockwork block plus |T><T| is diagonalised.

    ``tol`` is scaled by ``max(1, ||G||)``. The clock ticks eventually when
    exactly one eigenvalue lies within tolerance of zero and its eigenvector
    overlaps |T><T| by more than ``1 - 1e-6``. A spectrum is flagged
    Jordan-defective when the eigenvector matrix has condition number above
    ``defect_condition``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    G = gen.sector_matrix
    scale = max(1.0, float(np.max(np.sum(np.abs(G), axis=0))))
    atol = tol * scale
    try:
        evals, evecs = linalg.eig(G)
    except (linalg.LinAlgError, ValueError) as exc:
        raise linalg.LinAlgError(
            f"eigen-solver failed on {G.shape[0]}x{G.shape[0]} generator "
            f"(cond={np.linalg.cond(G):.3e}): {exc}"
        ) from exc
    order = np.lexsort((evals.imag, -evals.real))
    evals, evecs = evals[order], evecs[:, order]
    with np.errstate(over="ignore", invalid="ignore"):
        cond = float(np.linalg.cond(evecs))
    if not np.isfinite(cond):
        cond = math.inf

    zero = np.abs(evals) <= atol
    zero_mult = int(zero.sum())
    overlap = 0.0
    if zero_mult >= 1:
        v = evecs[:, np.argmax(zero)]
        overlap = float(abs(v[-1]) ** 2 / np.vdot(v, v).real)
    ticks = zero_mult == 1 and overlap > 1 - 1e-6

    decaying = evals.real[evals.real < -atol]
    delta = float(-decaying.max()) if decaying.size else None
    return SpectralReport(
        eigenvalues=evals,
        delta=delta,
        ticks_eventually=bool(ticks),
        jordan_defect_flag=bool(cond > defect_condition),
        eigenvector_condition=cond,
        stationary_overlap=overlap,
        zero_multiplicity=zero_mult,
    )


def propagate(
    generator: np.ndarray,
    x0: np.ndarray,
    times: Sequence[float],
    *,
    trace_weights: np.ndarray | None = None,
    trace_tol: float = 1e-10,
    max_step: float | None = None,
) -> np.ndarray:
    """Evaluate exp(G t) x0 at each of the sorted ``times``.

    Steps are exact matrix exponentials. When ``trace_weights`` is given the
    functional ``trace_weights . x`` must be conserved; a step that changes
    it by more than ``trace_tol`` is halved and retried.
    """
    G = np.asarray(generator)
    x = np.asarray(x0, dtype=complex).copy()
    times = np.asarray(times, dtype=float)
    if times.ndim != 1:
        raise ValueError("times must be one-dimensional")
    if times.size and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise ValueError("times must be sorted and non-negative")
    if max_step is None:
        norm = float(np.max(np.sum(np.abs(G), axis=0))) if G.size else 0.0
        max_step = 4.0 / norm if norm > 0 else math.inf

    cache: dict[float, np.ndarray] = {}

    def step_matrix(h):
        key = float(f"{h:.12e}")
        if key not in cache:
            cache[key] = linalg.expm(G * key)
        return cache[key]

    out = np.empty((times.size, x.size), dtype=complex)
    t_now = 0.0
    for i, t in enumerate(times):
        span = t - t_now
        if span > 0:
            n_sub = max(1, math.ceil(span / max_step))
            h = span / n_sub
            done = 0
            while done < n_sub:
                y = step_matrix(h) @ x
                if trace_weights is not None:
                    drift = abs(trace_weights @ y - trace_weights @ x)
                    if drift > trace_tol:
                        if h < 1e-12 * max(span, 1e-300):
                            raise StepSizeError(
                                f"trace drift {drift:.2e} persists at step {h:.3e}"
                            )
                        # redo the remaining span with twice as many substeps
                        remaining = (n_sub - done) * h
                        n_sub = done + 2 * (n_sub - done)
                        h = remaining / (n_sub - done)
                        continue
                x = y
                done += 1
            t_now = t
        out[i] = x
    return out


def _initial_sector_vector(gen: ReducedGenerator, rho0: np.ndarray) -> np.ndarray:
    d = gen.clock_dim
    x = np.zeros(d * d + 1, dtype=complex)
    x[: d * d] = _vec(rho0)
    return x


def _sector_trace_weights(d: int) -> np.ndarray:
    w = np.zeros(d * d + 1)
    w[: d * d] = _vec(np.eye(d))
    w[-1] = 1.0
    return w


def _first_tick_evolution(clock, rho0, t_grid):
    gen = build_reduced_generator(clock)
    rho = _validate_state(rho0, clock.dim)
    d = clock.dim
    traj = propagate(
        gen.sector_matrix,
        _initial_sector_vector(gen, rho),
        t_grid,
        trace_weights=_sector_trace_weights(d),
    )
    eta = traj[:, : d * d]
    omega = (eta @ gen.tick_rate_row).real
    survival = (eta @ _vec(np.eye(d))).real
    return omega, survival


def waiting_time_density(clock: LindbladClock, rho0, t_grid) -> np.ndarray:
    """omega(t) = Tr[V rho_t^(0)] at each grid time."""
    omega, _ = _first_tick_evolution(clock, rho0, t_grid)
    return omega


def survival_probability(clock: LindbladClock, rho0, t_grid) -> np.ndarray:
    """Q(t) = Tr[rho_t^(0)], the probability of no tick by time t."""
    _, survival = _first_tick_evolution(clock, rho0, t_grid)
    return survival


def lindblad_moment(clock: LindbladClock, rho0, k: int) -> float:
    """k-th waiting-time moment, k! Tr[V (-G)^{-(k+1)} rho0], by linear solves.

    Requires every no-tick eigenvalue to have negative real part.
    """
    gen = build_reduced_generator(clock)
    rho = _validate_state(rho0, clock.dim)
    G = gen.no_tick_matrix
    lu = linalg.lu_factor(-G)
    y = _vec(rho).astype(complex)
    for _ in range(k + 1):
        y = linalg.lu_solve(lu, y)
    return float(math.factorial(k) * (gen.tick_rate_row @ y).real)


@dataclass(frozen=True)
class EnvelopeCertificate:
    constant: float
    rate: float
    holds: bool
    inconclusive: bool
    t_max: float

    def to_dict(self) -> dict:
        return {
            "constant": self.constant,
            "rate": self.rate,
            "holds": self.holds,
            "inconclusive": self.inconclusive,
            "t_max": self.t_max,
            "units": {"constant": "per_time", "rate": "per_time", "t_max": "time"},
        }


def certify_envelope(
    clock: LindbladClock,
    rho0,
    delta: float,
    t_grid,
    *,
    rate_factor: float = 0.99,
    report: SpectralReport | None = None,
) -> EnvelopeCertificate:
    """Smallest C with omega(t_i) <= C exp(-a t_i) on the grid, a = rate_factor * delta.

    ``holds`` additionally requires omega(t) exp(a t) to be non-increasing
    over the last tenth of the grid span. Grids shorter than ``20/delta``
    are marked inconclusive and never hold.
    """
    if report is None:
        report = spectral_analysis(build_reduced_generator(clock))
    if not report.ticks_eventually:
        raise NotTickingError("envelope certification needs a clock that ticks eventually")
    if not (delta and delta > 0):
        raise ValueError("delta must be positive")
    t = np.asarray(t_grid, dtype=float)
    if t.size < 2:
        raise ValueError("grid needs at least two points")
    a = rate_factor * delta
    omega = waiting_time_density(clock, rho0, t)
    ratio = np.clip(omega, 0.0, None) * np.exp(a * t)
    C = float(ratio.max())
    t_max = float(t[-1])
    inconclusive = t_max < 20.0 / delta
    tail = ratio[t >= t[0] + 0.9 * (t_max - t[0])]
    monotone = tail.size < 2 or bool(np.all(np.diff(tail) <= 1e-9 * C))
    holds = math.isfinite(C) and monotone and not inconclusive
    return EnvelopeCertificate(constant=C, rate=a, holds=holds, inconclusive=inconclusive, t_max=t_max)


# --------------------------------------------------------------------------
# Lindblad-derived waiting-time law
# --------------------------------------------------------------------------


class _SurvivalSampler:
    """Inverse-survival sampler: cubic Hermite interpolation of Q on a grid.

    Node values of Q and dQ/dt = -omega come from exact propagation, so the
    interpolant is accurate to O(h^4) between nodes.
    """

    def __init__(self, clock: LindbladClock, rho0: np.ndarray, report: SpectralReport):
        gen = build_reduced_generator(clock)
        norm = float(np.max(np.sum(np.abs(gen.sector_matrix), axis=0)))
        self.delta = report.delta
        self.ticks = report.ticks_eventually
        h = 0.05 / norm if norm > 0 else 1.0
        horizon = 40.0 / report.delta if report.delta else 1.0
        while True:
            n = int(math.ceil(horizon / h))
            if n > 4_000_000:
                raise StepSizeError("survival table too large; clock too stiff for tabulation")
            t = np.linspace(0.0, horizon, n + 1)
            omega, Q = _first_tick_evolution(clock, rho0, t)
            if not self.ticks or Q[-1] < 1e-15 or horizon > 1e4 / (report.delta or 1.0):
                break
            horizon *= 2
        self.t = t
        self.Q = np.minimum.accumulate(np.clip(Q, 0.0, 1.0))
        self.dQ = -np.clip(omega, 0.0, None)

    def draw(self, u: np.ndarray) -> np.ndarray:
        t, Q, dQ = self.t, self.Q, self.dQ
        beyond = u < Q[-1]
        if np.any(beyond) and not self.ticks:
            raise NonTerminatingSampleError(
                f"survival probability plateaus at {Q[-1]:.3e} above the drawn variate; "
                "the clock does not tick with certainty"
            )
        out = np.empty_like(u)
        if np.any(beyond):
            out[beyond] = t[-1] + np.log(Q[-1] / u[beyond]) / self.delta
        inside = ~beyond
        ui = u[inside]
        # Q is non-increasing: first node with Q <= u closes the bracket
        j = np.searchsorted(-Q, -ui, side="left")
        j = np.clip(j, 1, len(t) - 1)
        t0, t1 = t[j - 1], t[j]
        q0, q1, d0, d1 = Q[j - 1], Q[j], dQ[j - 1], dQ[j]
        h = t1 - t0
        lo = np.zeros_like(ui)
        hi = np.ones_like(ui)
        for _ in range(60):
            s = 0.5 * (lo + hi)
            s2, s3 = s * s, s * s * s
            val = (
                (2 * s3 - 3 * s2 + 1) * q0
                + (s3 - 2 * s2 + s) * h * d0
                + (-2 * s3 + 3 * s2) * q1
                + (s3 - s2) * h * d1
            )
            above = val > ui
            lo = np.where(above, s, lo)
            hi = np.where(above, hi, s)
        out[inside] = t0 + 0.5 * (lo + hi) * h
        return out


@dataclass(frozen=True, eq=False)
class LindbladDerived(WaitingTimeModel):
    """Waiting-time law of the first tick of a clockwork started in ``initial_state``."""

    clock: LindbladClock
    initial_state: np.ndarray
    kind = "lindblad"

    def __post_init__(self):
        rho = _validate_state(self.initial_state, self.clock.dim)
        rho.setflags(write=False)
        object.__setattr__(self, "initial_state", rho)

    @cached_property
    def generator(self) -> ReducedGenerator:
        return build_reduced_generator(self.clock)

    @cached_property
    def spectrum(self) -> SpectralReport:
        return spectral_analysis(self.generator)

    @cached_property
    def _sampler(self) -> _SurvivalSampler:
        return _SurvivalSampler(self.clock, self.initial_state, self.spectrum)

    def pdf(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        order = np.argsort(t)
        vals = np.empty_like(t)
        vals[order] = waiting_time_density(self.clock, self.initial_state, t[order])
        return vals

    def moment(self, k):
        return None

    def numerical_moment(self, k: int) -> float:
        if not self.spectrum.ticks_eventually:
            raise NotTickingError("moments are infinite for a clock that may never tick")
        return lindblad_moment(self.clock, self.initial_state, k)

    def sample(self, rng, size):
        u = 1.0 - rng.random(size)  # (0, 1]
        return self._sampler.draw(u)

    def prepare(self) -> None:
        """Build the sampling table now (before sharing across threads)."""
        self._sampler

    @property
    def mgf_abscissa(self):
        if not self.spectrum.ticks_eventually or self.spectrum.delta is None:
            return 0.0
        return self.spectrum.delta

    def to_dict(self):
        out = self.clock.to_dict()
        out["initial_state"] = matrix_to_json(self.initial_state)
        return out


# --------------------------------------------------------------------------
# model-level operations
# --------------------------------------------------------------------------


def analytic_moment(model: WaitingTimeModel, k: int) -> float | None:
    """Exact k-th raw moment, or None ("unavailable") for clockwork-derived laws."""
    if k < 0:
        raise ValueError("moment order must be non-negative")
    if k == 0:
        return 1.0
    return model.moment(k)


def sample_waiting_time(model: WaitingTimeModel, rng: np.random.Generator, size: int | None = None):
    """Draw from omega(t). Returns a float when ``size`` is None."""
    if size is None:
        return float(model.sample(rng, 1)[0])
    return model.sample(rng, size)


@dataclass(frozen=True)
class MgfResult:
    value: float
    error_estimate: float
    converged: bool
    t_max: float


def _lindblad_mgf(model: LindbladDerived, x: float, t_max: float) -> tuple[float, float]:
    gen = model.generator
    G = gen.no_tick_matrix
    n = G.shape[0]
    # Van Loan block: top-right column of expm([[G + x, eta0], [0, 0]] T) = int_0^T e^{(G+x)s} ds eta0
    B = np.zeros((n + 1, n + 1), dtype=complex)
    B[:n, :n] = G + x * np.eye(n)
    B[:n, n] = _vec(model.initial_state)
    E = linalg.expm(B * t_max)
    value = float((gen.tick_rate_row @ E[:n, n]).real)
    end = float((gen.tick_rate_row @ E[:n, :n] @ _vec(model.initial_state)).real)
    return value, abs(end)


def mgf_quadrature(model: WaitingTimeModel, x: float, t_max: float | None = None) -> MgfResult:
    """Numerical M(x) = int_0^inf e^{x t} omega(t) dt, truncated at ``t_max``.

    The default horizon is 40/(a - x) where a is the model's certified
    abscissa. For x >= a the truncated integral is returned with
    ``converged=False`` and a :class:`DivergenceWarning`.
    """
    a = model.mgf_abscissa
    converged = x < a
    if t_max is None:
        if math.isinf(a):
            t_max = None
        elif converged:
            t_max = 40.0 / (a - x)
        else:
            t_max = 40.0 / a if a > 0 else 40.0
    if not converged:
        warnings.warn(
            f"MGF argument x={x} is outside the certified domain x < {a}",
            DivergenceWarning,
            stacklevel=2,
        )

    if isinstance(model, LindbladDerived):
        value, end_val = _lindblad_mgf(model, x, t_max)
        gap = (a - x) if converged else 0.0
        tail = end_val / gap if gap > 0 else math.inf
        return MgfResult(value, tail, converged, t_max)

    if isinstance(model, UniformShifted):
        lo, hi = model.lo, model.hi
        upper = hi if t_max is None else min(hi, t_max)
        val, err = integrate.quad(lambda s: math.exp(x * s) / (hi - lo), lo, upper)
        return MgfResult(val, err, True, upper)

    if isinstance(model, Mixture):
        parts = [mgf_quadrature(c, x, t_max) for c in model.components]
        val = sum(w * p.value for w, p in zip(model.weights, parts))
        err = sum(w * p.error_estimate for w, p in zip(model.weights, parts))
        return MgfResult(val, err, converged, t_max if t_max is not None else math.inf)

    def integrand(s):
        return float(model.pdf(s)) * math.exp(x * s)

    val, err = integrate.quad(integrand, 0.0, t_max, limit=200)
    end = integrand(t_max)
    tail = end / (a - x) if converged else math.inf
    return MgfResult(val, err + tail, converged, t_max)
