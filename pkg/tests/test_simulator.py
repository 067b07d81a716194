import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from ticktomo import simulator as sim
from ticktomo.clock_models import ClockValidationError, Erlang, Exponential, UniformShifted
from ticktomo.simulator import AtRefTick, AtTime, RateMatrixClock, TickSample

from helpers import cascade_model


def walk(fwd, bwd):
    return RateMatrixClock([[0.0]], forward=[[fwd]], backward=[[bwd]])


def pooled_chisquare(obs, expected, min_expected=5.0):
    """Chi-square with the tail merged once expected counts drop below ``min_expected``."""
    cut = int(np.argmax(expected < min_expected)) if np.any(expected < min_expected) else len(expected)
    o = np.append(obs[:cut], obs[cut:].sum())
    e = np.append(expected[:cut], expected[cut:].sum())
    return stats.chisquare(o, e)


# ---------------------------------------------------------------- reset protocol


def test_reset_counts_geometric_law():
    nu = gamma = 1.0
    s = sim.sample_reset_counts(Exponential(nu), gamma, 10**6, seed=1)
    n = np.arange(0, 31)
    p = nu * gamma**n / (nu + gamma) ** (n + 1)
    obs = np.bincount(s.counts, minlength=31)[:31].astype(float)
    obs = np.append(obs, s.sample_size - obs.sum())
    exp = np.append(p, 1 - p.sum()) * s.sample_size
    assert pooled_chisquare(obs, exp).pvalue > 0.001


def test_reset_tiny_gamma_gives_zero_counts():
    s = sim.sample_reset_counts(Exponential(1.0), 1e-9, 1000, seed=2)
    assert np.all(s.counts == 0)


def test_reset_nearly_deterministic_target():
    s = sim.sample_reset_counts(UniformShifted(1.0, 1.0 + 1e-9), 5.0, 20000, seed=3)
    se = math.sqrt(5.0 / s.sample_size)
    assert abs(s.counts.mean() - 5.0) < 5 * se


def test_reset_lindblad_mean():
    lam, gamma = 1.3, 2.0
    s = sim.sample_reset_counts(cascade_model(lam), gamma, 50000, seed=4)
    mean = 2 * gamma / lam
    assert abs(s.counts.mean() - mean) < 5 * s.counts.std() / math.sqrt(s.sample_size)


def test_reset_validation():
    with pytest.raises(ValueError):
        sim.sample_reset_counts(Exponential(1.0), 0.0, 10, seed=1)
    with pytest.raises(ValueError):
        sim.sample_reset_counts(Exponential(1.0), 1.0, 0, seed=1)
    with pytest.raises(ValueError):
        sim.sample_reset_counts(Exponential(1.0), 1.0, 10, seed=-1)


def test_reset_reproducible_and_worker_invariant():
    a = sim.sample_reset_counts(Erlang(2, 1.0), 1.5, 200000, seed=9, workers=1)
    b = sim.sample_reset_counts(Erlang(2, 1.0), 1.5, 200000, seed=9, workers=4)
    c = sim.sample_reset_counts(Erlang(2, 1.0), 1.5, 200000, seed=10)
    assert a.to_csv() == b.to_csv()
    assert a.to_json() == b.to_json()
    assert not np.array_equal(a.counts, c.counts)


def test_prefix_stability():
    # block substreams make a shorter sample a prefix of a longer one
    a = sim.sample_reset_counts(Exponential(1.0), 1.0, 1000, seed=5)
    b = sim.sample_reset_counts(Exponential(1.0), 1.0, 3000, seed=5)
    assert_array_equal(a.counts, b.counts[:1000])


# ---------------------------------------------------------------- Poisson reference


def test_poisson_counts_in_window():
    gamma, t = 2.0, 1.5
    counts = np.array([sim.sample_poisson_ticks(gamma, t, seed=s).size for s in range(20000)])
    k = np.arange(0, 15)
    p = stats.poisson.pmf(k, gamma * t)
    obs = np.append(np.bincount(counts, minlength=15)[:15], np.sum(counts >= 15)).astype(float)
    exp = np.append(p, 1 - p.sum()) * counts.size
    assert pooled_chisquare(obs, exp).pvalue > 0.001


def test_poisson_ticks_sorted_in_range_and_empty():
    ticks = sim.sample_poisson_ticks(3.0, 100.0, seed=1)
    assert np.all(np.diff(ticks) > 0) and ticks[0] >= 0 and ticks[-1] <= 100.0
    assert sim.sample_poisson_ticks(0.0, 10.0, seed=1).size == 0
    with pytest.raises(ValueError):
        sim.sample_poisson_ticks(1.0, 0.0, seed=1)


def test_poisson_gaps_memoryless():
    ticks = sim.sample_poisson_ticks(1.0, 100000.0, seed=12)
    gaps = np.diff(ticks)
    assert stats.kstest(gaps, stats.expon().cdf).pvalue > 0.001
    # residual gaps after waiting 1.0 have the same law
    resid = gaps[gaps > 1.0] - 1.0
    assert stats.kstest(resid, stats.expon().cdf).pvalue > 0.001


def test_merged_streams_rate_adds():
    a = sim.sample_poisson_ticks(0.7, 50000.0, seed=21)
    b = sim.sample_poisson_ticks(1.8, 50000.0, seed=22)
    merged = np.diff(np.sort(np.concatenate([a, b])))
    direct = np.diff(sim.sample_poisson_ticks(2.5, 50000.0, seed=23))
    assert stats.ks_2samp(merged, direct).pvalue > 0.001


# ---------------------------------------------------------------- perfect reference


def test_perfect_reference_deterministic_target():
    m, tau = 7, 0.1
    s = sim.sample_perfect_reference_counts(UniformShifted(0.7, 0.7 + 1e-12), tau, 5000, seed=3)
    assert set(np.unique(s.counts)) <= {m - 1, m}
    assert s.protocol == "perfect_reference"


def test_perfect_reference_huge_period():
    s = sim.sample_perfect_reference_counts(Exponential(1.0), 1e12, 1000, seed=3)
    assert np.all(s.counts == 0)


def test_perfect_reference_mean():
    tau = 0.01
    s = sim.sample_perfect_reference_counts(Exponential(1.0), tau, 100000, seed=8)
    assert abs(tau * s.counts.mean() - 1.0) < 5 / math.sqrt(s.sample_size)


# ---------------------------------------------------------------- rate-matrix clocks


def test_rate_matrix_validation():
    with pytest.raises(ClockValidationError) as exc:
        RateMatrixClock([[0.0, 1.0], [1.0, 0.0]])
    assert exc.value.field == "forward"
    with pytest.raises(ClockValidationError) as exc:
        RateMatrixClock([[0.0, -1.0], [1.0, 0.0]], forward=np.eye(2))
    assert exc.value.field == "rates"
    with pytest.raises(ClockValidationError):
        RateMatrixClock([[0.0]], forward=[[1.0]], initial_state=2)


def test_from_transitions():
    c = RateMatrixClock.from_transitions([[0, 2.0], [3.0, 0]], tick_forward=[(1, 0)])
    assert_allclose(c.rates, [[0, 2.0], [0, 0]])
    assert_allclose(c.forward, [[0, 0], [3.0, 0]])
    assert c.register_monotone
    assert_allclose(c.generator().sum(axis=0), 0)


def test_walk_cumulants_at_fixed_time():
    fwd, bwd, t = 2.0, 1.0, 3.0
    x = sim.simulate_registers(walk(fwd, bwd), AtTime(t), 100000, seed=4)
    mean, var = (fwd - bwd) * t, (fwd + bwd) * t
    assert abs(x.mean() - mean) < 5 * math.sqrt(var / x.size)
    se_var = math.sqrt(np.var((x - x.mean()) ** 2) / x.size)
    assert abs(x.var() - var) < 5 * se_var


def test_pure_birth_is_poisson():
    x = sim.simulate_registers(walk(1.5, 0.0), AtTime(2.0), 50000, seed=5)
    k = np.arange(0, 12)
    p = stats.poisson.pmf(k, 3.0)
    obs = np.append(np.bincount(x, minlength=12)[:12], np.sum(x >= 12)).astype(float)
    assert pooled_chisquare(obs, np.append(p, 1 - p.sum()) * x.size).pvalue > 0.001


def test_stop_at_reference_tick_mean():
    nu, gamma, n = 2.0, 0.5, 10
    x = sim.simulate_registers(walk(nu, 0.0), AtRefTick(n, gamma), 50000, seed=6)
    assert abs(x.mean() - nu * n / gamma) < 5 * x.std() / math.sqrt(x.size)


def test_absorbing_state_flagged():
    c = RateMatrixClock([[0.0, 0.0], [0.0, 0.0]], forward=[[0.0, 1.0], [0.0, 0.0]])
    tr = sim.gillespie_trajectory(c, AtTime(1000.0), seed=1)
    assert tr.absorbed and tr.final_state == 1 and tr.register_net == 1
    assert tr.stop_time == 1000.0


def test_nonreset_counts_examples():
    s = sim.sample_nonreset_counts(walk(1.0, 0.0), 1.0, 100, 4000, seed=7)
    assert s.protocol == "nonreset" and s.n_ref == 100 and s.sample_size == 4000
    assert abs(s.counts.mean() - 100) < 5 * s.counts.std() / math.sqrt(s.sample_size)
    sym = sim.sample_nonreset_counts(walk(1.0, 1.0), 1.0, 50, 4000, seed=8)
    assert abs(sym.counts.mean()) < 5 * sym.counts.std() / math.sqrt(sym.sample_size)
    assert np.any(sym.counts < 0)
    with pytest.raises(ValueError):
        sim.sample_nonreset_counts(walk(1.0, 0.0), 1.0, 0, 10, seed=1)


def test_nonreset_worker_invariant():
    c = RateMatrixClock([[0, 1.0], [0, 0]], forward=[[0, 0], [1.0, 0]])
    a = sim.sample_nonreset_table(c, 1.0, [5, 10, 20], 600, seed=3, workers=1)
    b = sim.sample_nonreset_table(c, 1.0, [5, 10, 20], 600, seed=3, workers=8)
    assert_array_equal(a, b)
    assert np.all(np.diff(a, axis=1) >= 0)
    with pytest.raises(ValueError):
        sim.sample_nonreset_table(c, 1.0, [10, 5], 10, seed=3)


# ---------------------------------------------------------------- serialisation


def test_tick_sample_round_trip(tmp_path):
    s = sim.sample_reset_counts(Exponential(2.0), 1.0, 1000, seed=7)
    s.save(tmp_path / "s.csv", tmp_path / "s.json")
    text = (tmp_path / "s.csv").read_text()
    lines = text.splitlines()
    assert lines[0] == "protocol,gamma_or_tau,n_ref,seed,model_digest"
    assert len(lines) == 1002
    assert TickSample.load(tmp_path / "s.csv") == s
    assert TickSample.load(tmp_path / "s.json") == s
    assert TickSample.from_dict(s.to_dict()).to_json() == s.to_json()


def test_tick_sample_invariants():
    with pytest.raises(ValueError):
        TickSample("reset", 1.0, np.array([1, -1]), 1, "x")
    with pytest.raises(ValueError):
        TickSample("bogus", 1.0, np.array([1]), 1, "x")
    TickSample("nonreset", 1.0, np.array([1, -1]), 1, "x", n_ref=3)
