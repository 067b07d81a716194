"""Reconstruction of clock statistics from reference-tick counts.

Reset clocks: the counts n_m between target ticks give relative moments
m_k, and the inverse Stirling transform turns them into waiting-time
moments M_k. Equivalently M~_k = mean(n^(k falling)) / gamma^k, which is
the form used for replicated (2-D) count arrays.

Non-reset clocks: the net register reading k at the n-th reference tick
gives the current J, the variance rate Sigma and, over several n, the
polynomial counting-statistics coefficients alpha.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import combinatorics as comb
from .simulator import TickSample

__all__ = [
    "ConditioningError",
    "InsufficientSampleError",
    "SeriesValue",
    "MomentReport",
    "FcsReport",
    "AlphaFit",
    "relative_moments",
    "reconstruct_clock_moments",
    "estimate_clock_moment",
    "reconstruct_mgf",
    "reconstruct_cf",
    "moment_condition_ok",
    "precision_k",
    "estimator_variance_exact",
    "estimator_variance_first_order",
    "chebyshev_fractional_bound",
    "moment_report",
    "fcs_estimate",
    "relative_moments_from_alpha",
    "fit_alpha_coefficients",
    "fcs_error_bound",
    "sub_poisson_bounds",
    "sub_poisson_relative_moment_bounds",
    "DEFAULT_K_MAX",
    "DEFAULT_GRID_FRACTIONS",
]

DEFAULT_K_MAX = 8
DEFAULT_GRID_FRACTIONS = (0.0, 0.1, -0.1, 0.25, -0.25, 0.5, -0.5)


class ConditioningError(np.linalg.LinAlgError):
    """Least-squares design is rank deficient or too ill-conditioned."""


class InsufficientSampleError(ValueError):
    """Sample too small for the requested statistic."""


def _counts_of(sample) -> np.ndarray:
    if isinstance(sample, TickSample):
        return sample.counts
    return np.asarray(sample)


def _exact_power_means(counts: np.ndarray, k_max: int) -> list[Fraction]:
    """Exact sample means of n^k, k = 1..k_max, for 1-D integer counts."""
    values, mult = np.unique(counts, return_counts=True)
    values = [int(v) for v in values]
    mult = [int(c) for c in mult]
    N = sum(mult)
    out = []
    powers = [1] * len(values)
    for _ in range(k_max):
        powers = [p * v for p, v in zip(powers, values)]
        out.append(Fraction(sum(c * p for c, p in zip(mult, powers)), N))
    return out


def relative_moments(sample, k_max: int) -> np.ndarray:
    """Empirical raw moments mean(n^k), k = 1..k_max.

    1-D counts are summed exactly; for an (R, N) array the moments of each
    replication row are returned with shape (R, k_max).
    """
    counts = _counts_of(sample)
    if isinstance(sample, TickSample) and sample.protocol == "nonreset":
        raise ValueError("relative moments of the reset kind need a reset or perfect-reference sample")
    if counts.size == 0:
        raise InsufficientSampleError("empty sample")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if counts.ndim == 1:
        return np.array([float(x) for x in _exact_power_means(counts, k_max)])
    c = counts.astype(float)
    return np.stack([np.mean(c**k, axis=-1) for k in range(1, k_max + 1)], axis=-1)


def reconstruct_clock_moments(relative, gamma: float | None, k_max: int | None = None, *, exact: bool = False):
    """Clock moments from relative moments by the inverse Stirling transform.

    With ``gamma=None`` (reference rate unknown) the transform runs at
    gamma = 1 and returns the dimensionless gamma^k M_k.
    """
    rel = list(relative)
    if k_max is None:
        k_max = len(rel)
    if len(rel) < k_max:
        raise ValueError(f"need {k_max} relative moments, got {len(rel)}")
    if gamma is not None and not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    return comb.inverse_stirling_transform(rel[:k_max], 1.0 if gamma is None else gamma, exact=exact)


def estimate_clock_moment(counts, gamma: float, k: int, axis: int = -1) -> np.ndarray:
    """M~_k = mean(n (n-1) ... (n-k+1)) / gamma^k along ``axis``.

    Algebraically identical to the inverse transform of the empirical
    relative moments; convenient for replicated arrays.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    return np.mean(comb.falling_factorial(_counts_of(counts), k), axis=axis) / gamma**k


@dataclass(frozen=True)
class SeriesValue:
    value: complex | float
    tail_estimate: float
    in_certified_domain: bool = True


def moment_condition_ok(moments: Sequence[float], x: float) -> bool:
    """Ratio test |x| M_{k+1} / ((k+1) M_k) < 1 over the last three available orders."""
    M = [1.0] + [float(m) for m in moments]
    K = len(M) - 1
    if K < 1 or x == 0:
        return True
    for k in range(max(0, K - 3), K):
        if M[k] == 0:
            if M[k + 1] != 0:
                return False
            continue
        if abs(x) * M[k + 1] / ((k + 1) * M[k]) >= 1:
            return False
    return True


def _series(moments, z, K):
    M = list(moments)
    if K is None:
        K = len(M)
    if K > len(M):
        raise ValueError(f"truncation K={K} exceeds {len(M)} available moments")
    total = 1.0 + 0j
    term = 1.0 + 0j
    last = 1.0
    for j in range(1, K + 1):
        term = term * z / j
        contrib = term * M[j - 1]
        total += contrib
        last = abs(contrib)
    return total, (last if K else 0.0)


def reconstruct_mgf(moments: Sequence[float], x: float, K: int | None = None) -> SeriesValue:
    """Truncated MGF 1 + sum_{j<=K} x^j M_j / j!; tail estimate is the last term's magnitude."""
    total, tail = _series(moments, x, K)
    ok = True if x <= 0 else moment_condition_ok(list(moments)[: (K or len(moments))], x)
    return SeriesValue(float(total.real), float(tail), ok)


def reconstruct_cf(moments: Sequence[float], x: float, K: int | None = None) -> SeriesValue:
    """Truncated characteristic function 1 + sum_{j<=K} (i x)^j M_j / j!."""
    total, tail = _series(moments, 1j * x, K)
    ok = moment_condition_ok(list(moments)[: (K or len(moments))], x)
    return SeriesValue(complex(total), float(tail), ok)


def precision_k(M_k: float, M_2k: float) -> float:
    """P^(k) = M_k^2 / (M_2k - M_k^2); ``inf`` for a degenerate (zero-variance) law."""
    denom = M_2k - M_k**2
    if denom <= 0:
        return math.inf
    return M_k**2 / denom


def _moment_list(clock_moments, order: int) -> list[Fraction]:
    M = comb._as_fractions(clock_moments)
    if len(M) < order:
        raise ValueError(f"need clock moments up to order {order}, got {len(M)}")
    return M


def estimator_variance_exact(clock_moments: Sequence[float], gamma: float, N: int, k: int) -> float:
    """Var[M~_k] to all orders in 1/gamma.

    (1/N) [ gamma^{-2k} sum_{j,r} (-1)^{j+r} c(k,j) c(k,r) m_{j+r} - M_k^2 ],
    with m_{j+r} the forward transform of the clock moments. Evaluated in
    exact rational arithmetic.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    M = _moment_list(clock_moments, 2 * k)
    g = comb._positive_gamma(gamma)
    rel = comb.forward_stirling_transform(M[: 2 * k], g, exact=True)
    c1 = comb._table_for("first_unsigned", k)
    acc = Fraction(0)
    for j in range(1, k + 1):
        for r in range(1, k + 1):
            acc += (-1) ** (j + r) * c1[k, j] * c1[k, r] * rel[j + r - 1]
    return float((acc / g ** (2 * k) - M[k - 1] ** 2) / N)


def estimator_variance_first_order(clock_moments: Sequence[float], gamma: float, N: int, k: int) -> float:
    """Leading terms only: (M_2k - M_k^2 + M_{2k-1}/gamma) / N."""
    M = [float(m) for m in _moment_list(clock_moments, 2 * k)]
    return (M[2 * k - 1] - M[k - 1] ** 2 + M[2 * k - 2] / gamma) / N


def chebyshev_fractional_bound(
    k: int, N: int, theta: float, clock_moments: Sequence[float], gamma: float, *, exact: bool = True
) -> float:
    """Upper bound on Pr(|M~_k / M_k - 1| >= theta) from Chebyshev's inequality.

    For k = 1 this is (1/(N theta^2)) (1/P^(1) + nu/gamma) with nu = 1/M_1.
    Values above 1 are returned as computed.
    """
    if not theta > 0:
        raise ValueError("theta must be positive")
    Mk = float(clock_moments[k - 1])
    if Mk == 0:
        raise ValueError("M_k = 0: fractional error undefined")
    var = (estimator_variance_exact if exact else estimator_variance_first_order)(clock_moments, gamma, N, k)
    return var / (theta**2 * Mk**2)


# --------------------------------------------------------------------------
# full report for a reset-type sample
# --------------------------------------------------------------------------


@dataclass
class MomentReport:
    k_max: int
    sample_size: int
    protocol: str
    gamma: float | None
    relative_mode: bool
    relative_moments: list[float]
    clock_moments: list[float]
    estimator_variance: list[float]
    variance_method: list[str]
    sample_variance: list[float]
    precision: list[float | None]
    mgf: list[dict]
    cf: list[dict]
    flags: list[str] = field(default_factory=list)
    seed: int | None = None
    model_digest: str | None = None

    def chebyshev_bound(self, k: int, theta: float) -> float:
        """Pr(|M~_k/M_k - 1| >= theta) <= Var / (theta^2 M_k^2), with plug-in M_k."""
        if not theta > 0:
            raise ValueError("theta must be positive")
        Mk = self.clock_moments[k - 1]
        return self.estimator_variance[k - 1] / (theta**2 * Mk**2)

    def to_dict(self) -> dict:
        moment_unit = "dimensionless" if self.relative_mode else "time^k"
        arg_unit = "per_reference_time" if self.relative_mode else "per_time"
        return {
            "k_max": self.k_max,
            "sample_size": self.sample_size,
            "protocol": self.protocol,
            "gamma": self.gamma,
            "relative_mode": self.relative_mode,
            "relative_moments": self.relative_moments,
            "clock_moments": self.clock_moments,
            "estimator_variance": self.estimator_variance,
            "variance_method": self.variance_method,
            "sample_variance": self.sample_variance,
            "precision": self.precision,
            "mgf": self.mgf,
            "cf": self.cf,
            "flags": self.flags,
            "seed": self.seed,
            "model_digest": self.model_digest,
            "units": {
                "gamma": "per_time" if self.gamma is not None else "unknown",
                "relative_moments": "dimensionless",
                "clock_moments": moment_unit,
                "estimator_variance": "dimensionless" if self.relative_mode else "time^2k",
                "sample_variance": "dimensionless" if self.relative_mode else "time^2k",
                "precision": "dimensionless",
                "mgf.x": arg_unit,
                "mgf.value": "dimensionless",
                "cf.x": arg_unit,
                "cf.value": "dimensionless",
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, allow_nan=False, default=_json_default)

    @classmethod
    def from_dict(cls, data: dict) -> "MomentReport":
        keys = cls.__dataclass_fields__.keys()
        return cls(**{k: data[k] for k in keys if k in data})


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def moment_report(
    sample: TickSample,
    k_max: int = DEFAULT_K_MAX,
    *,
    gamma_unknown: bool = False,
    grid_fractions: Sequence[float] = DEFAULT_GRID_FRACTIONS,
) -> MomentReport:
    """Moments, variances, precisions and truncated MGF/CF for one sample.

    Reset samples use the inverse Stirling transform. Perfect-reference
    samples use M~_k = tau^k mean(n^k), which is unbiased for k = 1 only.
    ``estimator_variance`` is the exact formula with plug-in moments where
    order 2k is available, and the sample variance of the per-tick
    estimator otherwise; negative plug-in values are clipped to 0 and
    flagged.
    """
    if sample.protocol == "nonreset":
        raise ValueError("moment reconstruction needs a reset or perfect-reference sample")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    comb._table_for("first_unsigned", k_max)
    counts = sample.counts
    N = sample.sample_size
    if N == 0:
        raise InsufficientSampleError("empty sample")
    flags: list[str] = []
    rel_exact = _exact_power_means(counts, k_max)
    rel = [float(x) for x in rel_exact]

    if sample.protocol == "perfect_reference":
        if gamma_unknown:
            scale, gamma = 1.0, None
        else:
            scale, gamma = sample.tau, None
        clock = [float(m * Fraction(scale) ** k) for k, m in enumerate(rel_exact, start=1)]
        per_tick = [counts.astype(float) ** k * scale**k for k in range(1, k_max + 1)]
        flags.append("perfect_reference: moments above k=1 carry O(tau) discretisation bias")
        method_scale = None
    else:
        gamma = None if gamma_unknown else sample.gamma
        g_eff = 1.0 if gamma_unknown else sample.gamma
        clock = [float(x) for x in comb.inverse_stirling_transform(rel_exact, g_eff, exact=True)]
        per_tick = [comb.falling_factorial(counts, k) / g_eff**k for k in range(1, k_max + 1)]
        method_scale = g_eff

    sample_var = [float(np.var(y, ddof=1) / N) if N > 1 else math.inf for y in per_tick]
    est_var, methods, precision = [], [], []
    for k in range(1, k_max + 1):
        if 2 * k <= k_max and method_scale is not None:
            v = estimator_variance_exact(clock[: 2 * k], method_scale, N, k)
            if v < 0:
                flags.append(f"estimator_variance[{k}] negative ({v:.3e}); clipped to 0")
                v = 0.0
            est_var.append(v)
            methods.append("exact_plugin")
        else:
            est_var.append(sample_var[k - 1])
            methods.append("sample")
        if 2 * k <= k_max:
            precision.append(_finite_or_none(precision_k(clock[k - 1], clock[2 * k - 1])))
        else:
            precision.append(None)

    mgf, cf = [], []
    M1 = clock[0]
    if M1 > 0:
        for frac in grid_fractions:
            x = frac / M1
            m = reconstruct_mgf(clock, x)
            c = reconstruct_cf(clock, x)
            mgf.append({"x": x, "value": m.value, "tail_estimate": m.tail_estimate,
                        "certified": m.in_certified_domain})
            cf.append({"x": x, "value": [c.value.real, c.value.imag], "tail_estimate": c.tail_estimate,
                       "certified": c.in_certified_domain})
            if not m.in_certified_domain:
                flags.append(f"mgf at x={x:.6g} outside certified domain")
    else:
        flags.append("first moment is zero; MGF/CF grid skipped")

    return MomentReport(
        k_max=k_max,
        sample_size=N,
        protocol=sample.protocol,
        gamma=gamma,
        relative_mode=gamma_unknown,
        relative_moments=rel,
        clock_moments=clock,
        estimator_variance=est_var,
        variance_method=methods,
        sample_variance=sample_var,
        precision=precision,
        mgf=mgf,
        cf=cf,
        flags=flags,
        seed=int(sample.seed),
        model_digest=sample.model_digest,
    )


# --------------------------------------------------------------------------
# non-reset clocks
# --------------------------------------------------------------------------


@dataclass
class FcsReport:
    J_inf: float
    Sigma_inf: float
    precision: float | None
    J_se: float
    Sigma_se: float
    precision_se: float | None
    gamma: float
    n_ref: int
    M: int
    alpha: dict | None = None
    alpha_residuals: dict | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "J_inf": self.J_inf,
            "Sigma_inf": self.Sigma_inf,
            "precision": self.precision,
            "J_se": self.J_se,
            "Sigma_se": self.Sigma_se,
            "precision_se": self.precision_se,
            "gamma": self.gamma,
            "n_ref": self.n_ref,
            "M": self.M,
            "alpha": self.alpha,
            "alpha_residuals": self.alpha_residuals,
            "flags": self.flags,
            "units": {
                "J_inf": "per_time",
                "J_se": "per_time",
                "Sigma_inf": "per_time",
                "Sigma_se": "per_time",
                "precision": "dimensionless",
                "precision_se": "dimensionless",
                "gamma": "per_time",
                "alpha": "alpha[j][i] in ticks^j per_time^i",
                "alpha_residuals": "dimensionless (relative)",
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1, default=_json_default)


def fcs_estimate(sample: TickSample) -> FcsReport:
    """Current, variance rate and precision from non-reset counts.

    J = gamma m1 / n and Sigma = (gamma/n) (m2 - m1^2 (1 + 1/n)), with
    delta-method standard errors from the sample covariance of (k, k^2).
    A negative Sigma estimate is clipped to 0 and flagged.
    """
    if sample.protocol != "nonreset":
        raise ValueError("FCS estimation needs a nonreset sample")
    k = sample.counts.astype(float)
    M = k.size
    n = sample.n_ref
    g = sample.gamma
    if M < 2:
        raise InsufficientSampleError("need M >= 2 repetitions to estimate the variance rate")
    a = k.mean()
    b = np.mean(k * k)
    c = 1.0 + 1.0 / n
    J = g * a / n
    D = b - a * a * c
    Sigma = g / n * D
    cov = np.cov(np.vstack([k, k * k]), ddof=1) / M
    J_se = g / n * math.sqrt(cov[0, 0])
    grad_S = np.array([-2 * a * c, 1.0]) * g / n
    S_se = math.sqrt(max(grad_S @ cov @ grad_S, 0.0))
    flags = []
    if Sigma < 0:
        flags.append(f"Sigma_inf estimate negative ({Sigma:.3e}); clipped to 0")
        Sigma = 0.0
    if Sigma > 0:
        P = J / Sigma
        grad_P = np.array([(b + a * a * c) / D**2, -a / D**2])
        P_se = math.sqrt(max(grad_P @ cov @ grad_P, 0.0))
    else:
        P, P_se = None, None
    return FcsReport(J, Sigma, P, J_se, S_se, P_se, g, n, M, flags=flags)


def _design(n_values: Sequence[int], gamma: float, j: int) -> np.ndarray:
    return np.array(
        [[math.factorial(i) / gamma**i * math.comb(n + i - 1, i) for i in range(j + 1)] for n in n_values],
        dtype=float,
    )


def relative_moments_from_alpha(alpha: Mapping[int, Sequence[float]], gamma: float, n: int) -> dict[int, float]:
    """m_j(n) = sum_i alpha_i^(j) (i!/gamma^i) binom(n+i-1, i) for each order j in ``alpha``."""
    out = {}
    for j, coeffs in alpha.items():
        coeffs = list(coeffs)
        if len(coeffs) != j + 1:
            raise ValueError(f"order {j} needs {j + 1} coefficients, got {len(coeffs)}")
        out[j] = float(_design([n], gamma, j)[0] @ np.asarray(coeffs, dtype=float))
    return out


@dataclass(frozen=True)
class AlphaFit:
    alpha: dict[int, np.ndarray]
    residuals: dict[int, float]
    condition: dict[int, float]
    n_values: tuple[int, ...]
    gamma: float

    @property
    def current(self) -> float:
        return float(self.alpha[1][1])

    @property
    def variance_rate(self) -> float:
        if 2 not in self.alpha:
            raise KeyError("order 2 coefficients were not fitted")
        return float(self.alpha[2][1] - 2 * self.alpha[1][0] * self.alpha[1][1])

    def to_dict(self) -> dict:
        return {
            "alpha": {str(j): [float(x) for x in a] for j, a in self.alpha.items()},
            "residuals": {str(j): r for j, r in self.residuals.items()},
            "condition": {str(j): c for j, c in self.condition.items()},
            "n_values": list(self.n_values),
            "gamma": self.gamma,
        }


def fit_alpha_coefficients(
    m_table: Mapping[int, Sequence[float]],
    gamma: float,
    j_max: int,
    *,
    max_condition: float = 1e12,
) -> AlphaFit:
    """Least-squares counting-statistics coefficients from relative moments.

    ``m_table`` maps a reference-tick count n to its moments
    [m_1(n), ..., m_jmax(n)]. Order j needs at least j + 1 distinct n.
    Columns are normalised before solving; ``residuals`` are relative
    residual norms.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    n_values = tuple(sorted(int(n) for n in m_table))
    if any(n < 1 for n in n_values):
        raise ValueError("reference tick counts must be >= 1")
    alpha, residuals, condition = {}, {}, {}
    for j in range(1, j_max + 1):
        if len(n_values) < j + 1:
            raise ConditioningError(
                f"order {j} needs at least {j + 1} distinct n values, have {list(n_values)}"
            )
        X = _design(n_values, gamma, j)
        y = np.array([float(m_table[n][j - 1]) for n in n_values])
        scale = np.max(np.abs(X), axis=0)
        Xs = X / scale
        cond = float(np.linalg.cond(Xs))
        rank = np.linalg.matrix_rank(Xs)
        if rank < j + 1 or not cond < max_condition:
            raise ConditioningError(
                f"design for order {j} over n = {list(n_values)} is ill-conditioned (cond={cond:.3e})"
            )
        sol, *_ = np.linalg.lstsq(Xs, y, rcond=None)
        coeffs = sol / scale
        resid = float(np.linalg.norm(X @ coeffs - y))
        ynorm = float(np.linalg.norm(y))
        alpha[j] = coeffs
        residuals[j] = resid / ynorm if ynorm > 0 else resid
        condition[j] = cond
    return AlphaFit(alpha, residuals, condition, n_values, float(gamma))


def fcs_error_bound(
    N_effective: float,
    theta: float,
    J: float,
    Sigma: float,
    gamma: float,
    n_ref: int,
    alpha0: tuple[float, float] = (0.0, 0.0),
) -> float:
    """Chebyshev bound on the fractional error of the relative frequency estimate.

    (1/(N theta^2)) (1/P + nu/gamma + (alpha_0^(2) - (alpha_0^(1))^2) / (n J/gamma)),
    with P = J/Sigma, nu = J and N = M n J / gamma target ticks on average.
    """
    if not (N_effective > 0 and theta > 0 and J > 0 and gamma > 0 and n_ref > 0):
        raise ValueError("N_effective, theta, J, gamma and n_ref must be positive")
    a01, a02 = alpha0
    return (Sigma / J + J / gamma + (a02 - a01**2) / (n_ref * J / gamma)) / (N_effective * theta**2)


# --------------------------------------------------------------------------
# sub-Poissonian references
# --------------------------------------------------------------------------


def sub_poisson_bounds(mu: float, k: int) -> tuple[float, float]:
    """Bounds on the k-th raw moment of a sub-Poissonian variable of mean mu.

    lower = mu^k (Jensen), upper = mu^k ((k/mu) / log(1 + k/mu))^k.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    y = k / mu
    return mu**k, mu**k * (y / math.log1p(y)) ** k


def sub_poisson_relative_moment_bounds(clock_moments: Sequence[float], gamma: float, k: int) -> tuple[float, float]:
    """Interval containing m_k for any sub-Poissonian reference of rate gamma.

    ``clock_moments`` starts at M_0 (= 1). Returns
    (gamma^k M_k, sum_j binom(k, j) gamma^j k^(k-j) M_j).
    """
    M = [float(m) for m in clock_moments]
    if len(M) < k + 1:
        raise ValueError(f"need M_0..M_{k}, got {len(M)} values")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    lower = gamma**k * M[k]
    upper = sum(math.comb(k, j) * gamma**j * k ** (k - j) * M[j] for j in range(k + 1))
    return lower, upper
