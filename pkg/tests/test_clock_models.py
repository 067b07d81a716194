import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, stats

from ticktomo import clock_models as cm
from ticktomo.clock_models import (
    ClockValidationError,
    DivergenceWarning,
    Erlang,
    Exponential,
    Gamma,
    LindbladClock,
    LindbladDerived,
    Mixture,
    NonTerminatingSampleError,
    NotTickingError,
    UniformShifted,
)

from helpers import cascade_clock, cascade_model, emitter_clock, ground, random_clock, random_state


ANALYTIC = [
    Exponential(1.7),
    Erlang(3, 2.0),
    Gamma(0.6, 1.3),
    UniformShifted(0.5, 2.0),
    Mixture((0.3, 0.7), (Exponential(1.0), Erlang(2, 4.0))),
]


# ---------------------------------------------------------------- analytic laws


@pytest.mark.parametrize("model", ANALYTIC, ids=lambda m: m.kind)
def test_density_normalised(model):
    val, _ = integrate.quad(model.pdf, 0, np.inf, limit=200, points=None)
    assert_allclose(val, 1.0, rtol=1e-7)


@pytest.mark.parametrize("model", ANALYTIC, ids=lambda m: m.kind)
@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_analytic_moments_match_quadrature(model, k):
    val, _ = integrate.quad(lambda t: t**k * model.pdf(t), 0, np.inf, limit=400)
    assert_allclose(cm.analytic_moment(model, k), val, rtol=1e-7)


def test_moment_examples():
    nu = 2.5
    for k in range(1, 8):
        assert_allclose(cm.analytic_moment(Exponential(nu), k), math.factorial(k) / nu**k, rtol=1e-14)
    assert_allclose(cm.analytic_moment(Erlang(2, 3.0), 1), 2 / 3.0)
    assert cm.analytic_moment(Exponential(nu), 0) == 1
    assert cm.analytic_moment(cascade_model(1.0), 2) is None


def test_validation_names_field():
    with pytest.raises(ClockValidationError) as exc:
        Exponential(-1.0)
    assert exc.value.field == "rate"
    with pytest.raises(ClockValidationError) as exc:
        Erlang(2.5, 1.0)
    assert exc.value.field == "shape"
    with pytest.raises(ClockValidationError) as exc:
        UniformShifted(2.0, 1.0)
    assert exc.value.field == "hi"
    with pytest.raises(ClockValidationError) as exc:
        Mixture((0.5, 0.6), (Exponential(1.0), Exponential(2.0)))
    assert exc.value.field == "weights"


def test_sampling_exponential_mean():
    nu = 1.3
    x = cm.sample_waiting_time(Exponential(nu), np.random.default_rng(1), 10**6)
    se = (1 / nu) / math.sqrt(x.size)
    assert abs(x.mean() - 1 / nu) < 5 * se


def test_sampling_erlang_variance():
    lam = 2.0
    x = cm.sample_waiting_time(Erlang(2, lam), np.random.default_rng(2), 10**6)
    var = 2 / lam**2
    # Var of the sample variance: (mu4 - sigma^4)/n; Erlang(2) central mu4 = 3*2*(2+2)/lam^4... use empirical
    se = math.sqrt(np.var((x - x.mean()) ** 2) / x.size)
    assert abs(x.var() - var) < 5 * se


def test_sampling_uniform_support():
    eps = 1e-9
    x = cm.sample_waiting_time(UniformShifted(1.0, 1.0 + eps), np.random.default_rng(3), 1000)
    assert np.all((x >= 1.0) & (x <= 1.0 + eps))
    assert isinstance(cm.sample_waiting_time(Exponential(1.0), np.random.default_rng(3)), float)


@pytest.mark.parametrize("model", ANALYTIC, ids=lambda m: m.kind)
def test_sampling_ks(model):
    x = cm.sample_waiting_time(model, np.random.default_rng(4), 20000)
    cdf = lambda t: np.array([integrate.quad(model.pdf, 0, s)[0] for s in np.atleast_1d(t)])
    grid = np.quantile(x, np.linspace(0.05, 0.95, 19))
    emp = np.searchsorted(np.sort(x), grid, side="right") / x.size
    assert np.max(np.abs(emp - cdf(grid))) < 0.015


def test_digest_stable_and_distinct():
    assert Exponential(1.0).digest() == Exponential(1.0).digest()
    assert Exponential(1.0).digest() != Exponential(2.0).digest()
    assert len(cascade_model(1.0).digest()) == 16


# ---------------------------------------------------------------- reduced generator


def test_clock_validation():
    with pytest.raises(ClockValidationError) as exc:
        LindbladClock(np.array([[0, 1], [0, 0]]), (), ())
    assert exc.value.field == "hamiltonian"
    with pytest.raises(ClockValidationError) as exc:
        LindbladClock(np.zeros((2, 2)), (), (np.zeros((3, 3)),))
    assert exc.value.field == "tick_jumps[0]"
    with pytest.raises(ClockValidationError) as exc:
        LindbladDerived(cascade_clock(1.0), np.eye(2))
    assert exc.value.field == "initial_state"


def test_tick_operator_psd(rng):
    for d in (1, 2, 3, 4):
        V = random_clock(rng, d).tick_operator
        assert np.linalg.eigvalsh(V).min() > -1e-12


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_generator_trace_preserving_and_tick_stationary(rng, d):
    gen = cm.build_reduced_generator(random_clock(rng, d))
    n = d + 1
    assert gen.matrix.shape == (n * n, n * n)
    trace_vec = np.eye(n).reshape(-1, order="F")
    assert_allclose(trace_vec @ gen.matrix, 0, atol=1e-12)
    assert_allclose(gen.matrix[:, gen.tick_index], 0, atol=1e-12)


def test_generator_reproduces_split_equations(rng):
    clock = random_clock(rng, 3)
    gen = cm.build_reduced_generator(clock)
    eta = random_state(rng, 3) * 0.7
    rho = np.zeros((4, 4), dtype=complex)
    rho[:3, :3] = eta
    rho[3, 3] = 0.3
    out = gen.apply(rho)
    H, V = clock.hamiltonian, clock.tick_operator
    expect = -1j * (H @ eta - eta @ H) - 0.5 * (V @ eta + eta @ V)
    for L in clock.non_tick_jumps:
        expect += L @ eta @ L.conj().T - 0.5 * (L.conj().T @ L @ eta + eta @ L.conj().T @ L)
    assert_allclose(out[:3, :3], expect, atol=1e-12)
    assert_allclose(out[3, 3], np.trace(V @ eta), atol=1e-12)


@pytest.mark.parametrize("d", [2, 3, 4])
def test_trace_conserved_under_propagation(rng, d):
    clock = random_clock(rng, d)
    gen = cm.build_reduced_generator(clock)
    rep = cm.spectral_analysis(gen)
    rho = np.zeros((d + 1, d + 1), dtype=complex)
    rho[:d, :d] = random_state(rng, d)
    t_end = 10 / rep.delta
    traj = cm.propagate(gen.matrix, rho.reshape(-1, order="F"), np.linspace(0, t_end, 50))
    tr = traj @ np.eye(d + 1).reshape(-1, order="F")
    assert_allclose(tr.real, 1.0, atol=1e-9)


def test_emitter_spectrum_and_density():
    nu = 1.7
    rep = cm.spectral_analysis(cm.build_reduced_generator(emitter_clock(nu)))
    assert rep.ticks_eventually
    assert_allclose(rep.delta, nu, rtol=1e-9)
    t = np.linspace(0, 20 / nu, 300)
    assert_allclose(cm.waiting_time_density(emitter_clock(nu), ground(1), t), nu * np.exp(-nu * t), atol=1e-8)


def test_cascade_spectrum_and_density():
    lam = 1.3
    clock = cascade_clock(lam)
    rep = cm.spectral_analysis(cm.build_reduced_generator(clock))
    assert rep.ticks_eventually
    assert_allclose(rep.delta, lam, atol=1e-6)
    assert np.any(np.abs(rep.eigenvalues + lam) < 1e-6)
    assert rep.jordan_defect_flag
    assert np.all(rep.eigenvalues.real <= 1e-9)
    t = np.linspace(0, 20 / lam, 400)
    omega = cm.waiting_time_density(clock, ground(2), t)
    assert_allclose(omega, lam**2 * t * np.exp(-lam * t), atol=1e-8)
    assert omega[0] == pytest.approx(0.0, abs=1e-14)


def test_zero_jump_clock_never_ticks():
    clock = LindbladClock(np.diag([0.0, 1.0]), (), ())
    rep = cm.spectral_analysis(cm.build_reduced_generator(clock))
    assert not rep.ticks_eventually
    Q = cm.survival_probability(clock, ground(2), np.linspace(0, 10, 11))
    assert_allclose(Q, 1.0, atol=1e-12)
    with pytest.raises(NotTickingError):
        cm.certify_envelope(clock, ground(2), 1.0, np.linspace(0, 10, 11), report=rep)


def test_partial_ticking_clock_raises_on_sampling():
    # state |1> is dark; a 50/50 start never ticks half of the time
    J = np.array([[1.0, 0.0], [0.0, 0.0]])
    clock = LindbladClock(np.zeros((2, 2)), (), (J,))
    model = LindbladDerived(clock, np.eye(2) / 2)
    assert not model.spectrum.ticks_eventually
    with pytest.raises(NonTerminatingSampleError):
        model.sample(np.random.default_rng(0), 200)


def test_density_integrates_to_one(rng):
    for d in (2, 3):
        clock = random_clock(rng, d)
        rho = random_state(rng, d)
        rep = cm.spectral_analysis(cm.build_reduced_generator(clock))
        t = np.linspace(0, 40 / rep.delta, 8001)
        omega = cm.waiting_time_density(clock, rho, t)
        assert omega.min() > -1e-10
        assert_allclose(integrate.simpson(omega, x=t), 1.0, atol=1e-6)
        Q = cm.survival_probability(clock, rho, t)
        assert np.all(np.diff(Q) <= 1e-12)


def test_survival_decay_rate_matches_gap(rng):
    clock = random_clock(rng, 2)
    rep = cm.spectral_analysis(cm.build_reduced_generator(clock))
    assert not rep.jordan_defect_flag
    t = np.linspace(30 / rep.delta, 40 / rep.delta, 50)
    Q = cm.survival_probability(clock, random_state(rng, 2), t)
    rate = -np.polyfit(t, np.log(Q), 1)[0]
    assert abs(rate - rep.delta) / rep.delta < 0.05


def test_lindblad_moments_match_erlang():
    lam = 1.3
    m = cascade_model(lam)
    assert_allclose(m.numerical_moment(1), 2 / lam, rtol=1e-12)
    assert_allclose(m.numerical_moment(2), 6 / lam**2, rtol=1e-12)
    assert_allclose(m.numerical_moment(3), 24 / lam**3, rtol=1e-12)


def test_lindblad_sampling_matches_erlang():
    lam = 1.3
    x = cascade_model(lam).sample(np.random.default_rng(11), 200000)
    ks = stats.kstest(x, stats.gamma(2, scale=1 / lam).cdf)
    assert ks.pvalue > 0.001


def test_convolution_identity():
    # sum of two waiting times of the emitter is Erlang(2): chi-square on a histogram
    nu = 0.8
    model = LindbladDerived(emitter_clock(nu), ground(1))
    rng = np.random.default_rng(5)
    s = model.sample(rng, 100000) + model.sample(rng, 100000)
    edges = stats.gamma(2, scale=1 / nu).ppf(np.linspace(0, 1, 41))
    obs, _ = np.histogram(s, edges)
    assert stats.chisquare(obs).pvalue > 0.001


# ---------------------------------------------------------------- envelope and MGF


def test_envelope_emitter():
    nu = 2.0
    clock = emitter_clock(nu)
    cert = cm.certify_envelope(clock, ground(1), nu, np.linspace(0, 250 / nu, 4001))
    assert cert.holds and not cert.inconclusive
    assert_allclose(cert.constant, nu, rtol=1e-6)


def test_envelope_cascade():
    lam = 1.0
    cert = cm.certify_envelope(cascade_clock(lam), ground(2), lam, np.linspace(0, 250 / lam, 5001))
    assert cert.holds
    # sup_t lam^2 t exp(-0.01 lam t) = 100 lam / e
    assert_allclose(cert.constant, 100 * lam / math.e, rtol=1e-4)


def test_envelope_short_grid_inconclusive():
    cert = cm.certify_envelope(cascade_clock(1.0), ground(2), 1.0, np.linspace(0, 0.5, 20))
    assert cert.inconclusive and not cert.holds


@pytest.mark.parametrize(
    "model,x,expect",
    [
        (Exponential(2.0), 1.0, 2.0),
        (Erlang(2, 2.0), 1.0, 4.0),
        (Gamma(0.5, 1.0), 0.5, math.sqrt(2.0)),
        (UniformShifted(0.0, 1.0), 1.0, math.e - 1),
        (cascade_model(2.0), 1.0, 4.0),
        (LindbladDerived(emitter_clock(2.0), ground(1)), 1.0, 2.0),
    ],
    ids=["exp", "erlang", "gamma", "uniform", "cascade", "emitter"],
)
def test_mgf_quadrature_values(model, x, expect):
    res = cm.mgf_quadrature(model, x)
    assert res.converged
    assert_allclose(res.value, expect, rtol=1e-6)
    assert_allclose(cm.mgf_quadrature(model, 0.0).value, 1.0, rtol=1e-8)


def test_mgf_divergence_flagged():
    with pytest.warns(DivergenceWarning):
        res = cm.mgf_quadrature(cascade_model(1.0), 1.5)
    assert not res.converged
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert cm.mgf_quadrature(Exponential(1.0), -3.0).converged


def test_spectral_report_serialises():
    d = cascade_model(1.0).spectrum.to_dict()
    assert d["units"]["delta"] == "per_time"
    assert d["ticks_eventually"] is True
