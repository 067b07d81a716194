"""Shared model builders for the test suite."""
import numpy as np

from ticktomo.clock_models import LindbladClock, LindbladDerived


def cascade_clock(lam):
    """Two sequential decays at rate lam; the second one ticks."""
    s = np.sqrt(lam)
    L = np.array([[0, 0], [s, 0]], dtype=complex)
    J = np.array([[0, s], [0, 0]], dtype=complex)
    return LindbladClock(np.zeros((2, 2)), (L,), (J,))


def emitter_clock(nu):
    return LindbladClock(np.zeros((1, 1)), (), (np.array([[np.sqrt(nu)]]),))


def ground(d):
    rho = np.zeros((d, d), dtype=complex)
    rho[0, 0] = 1.0
    return rho


def cascade_model(lam):
    return LindbladDerived(cascade_clock(lam), ground(2))


def random_clock(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    H = (A + A.conj().T) / 2
    L = [rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(2)]
    J = [0.5 * (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))]
    return LindbladClock(H, tuple(L), tuple(J))


def random_state(rng, d):
    A = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = A @ A.conj().T
    return rho / np.trace(rho).real
