import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from shmrom.integrator import (GenAlphaParams, IntegrationError, LinearPropagator, StateHistory, integrate,
                               sensor_accelerations)

M1 = np.array([[1.0]])
K1 = np.array([[4.0 * np.pi ** 2]])  # 1 Hz oscillator
ZERO = lambda t: np.zeros(1)  # noqa: E731


def _sdof_error(dt, a, b, rho=1.0):
    """|v(1) - exact| for v(0) = a, v'(0) = 2 pi b; exact v(1) = a."""
    h = integrate(M1, K1, ZERO, [a], [2 * np.pi * b], dt, int(round(1 / dt)), GenAlphaParams(rho))
    return abs(h.displacement[0, -1] - a)


def test_parameters_match_closed_forms():
    p = GenAlphaParams(1.0)
    assert (p.alpha_m, p.alpha_f, p.gamma, p.beta) == (0.5, 0.5, 0.5, 0.25)
    p = GenAlphaParams(0.0)
    assert np.isclose(p.alpha_m, -1.0) and p.alpha_f == 0.0 and np.isclose(p.gamma, 1.5) and np.isclose(p.beta, 1.0)
    with pytest.raises(ValueError):
        GenAlphaParams(1.5)


def test_zero_load_stays_at_rest():
    M = np.diag([1.0, 2.0])
    K = np.array([[3.0, -1.0], [-1.0, 2.0]])
    h = integrate(M, K, lambda t: np.zeros(2), dt=1e-2, n_steps=50)
    assert not np.any(h.displacement) and not np.any(h.acceleration)


def test_sdof_accuracy():
    assert _sdof_error(1e-3, 1.0, 1.0) < 1e-3
    h = integrate(M1, K1, ZERO, [1.0], None, 1e-3, 1000)
    np.testing.assert_allclose(h.displacement[0], np.cos(2 * np.pi * h.times), atol=1e-4)
    np.testing.assert_allclose(h.times[[0, -1]], [1e-3, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.3, 1.0), st.sampled_from([-1.0, 1.0]), st.floats(0.0, 1.0))
def test_second_order_convergence(a, b, sign, rho):
    # the velocity component keeps the end-time error off the phase-error zero
    b = sign * max(b, 0.3 * abs(a))
    ratio = _sdof_error(2e-3, a, b, rho) / _sdof_error(1e-3, a, b, rho)
    assert 3.5 <= ratio <= 4.5


def test_cosine_start_is_superconvergent_at_full_period():
    # v(1) sits on a crest where the leading phase error cancels
    assert _sdof_error(2e-3, 1.0, 0.0) / _sdof_error(1e-3, 1.0, 0.0) > 4.5


def test_undamped_energy_conservation():
    dt = 1e-2  # T / 100
    h = integrate(M1, K1, ZERO, [1.0], [0.0], dt, 1000, GenAlphaParams(1.0))
    energy = 0.5 * h.velocity[0] ** 2 + 0.5 * K1[0, 0] * h.displacement[0] ** 2
    e0 = 0.5 * K1[0, 0]
    assert np.abs(energy / e0 - 1).max() < 1e-3
    peaks = np.abs(h.displacement[0]).reshape(10, 100).max(axis=1)
    assert abs(peaks[-1] / peaks[0] - 1) < 1e-3


def test_high_frequency_dissipation():
    # a mode far above 1/dt is damped towards the spectral radius rho_inf per step
    K = np.array([[(2 * np.pi * 1e4) ** 2]])
    for rho, bound in ((0.8, 0.05), (0.5, 1e-6)):
        h = integrate(M1, K, ZERO, [1.0], None, 5e-3, 40, GenAlphaParams(rho))
        assert abs(h.displacement[0, -1]) < bound
    h = integrate(M1, K, ZERO, [1.0], None, 5e-3, 40, GenAlphaParams(1.0))
    assert abs(h.displacement[0, -1]) > 0.5


def test_linearity_in_load():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    M = A @ A.T + 4 * np.eye(4)
    K = 100 * np.diag([1.0, 2.0, 3.0, 4.0])
    f1, f2 = rng.normal(size=4), rng.normal(size=4)
    run = lambda load: integrate(M, K, load, dt=1e-2, n_steps=100, params=GenAlphaParams(0.8))  # noqa: E731
    h1 = run(lambda t: np.sin(3 * t) * f1)
    h2 = run(lambda t: t * f2)
    h12 = run(lambda t: np.sin(3 * t) * f1 + t * f2)
    np.testing.assert_allclose(h12.displacement, h1.displacement + h2.displacement, atol=1e-12)


def test_record_subset_matches_full(coarse_fom):
    f = coarse_fom.load_basis[0]
    K = coarse_fom.undamaged_stiffness()
    load = lambda t: 1e4 * np.sin(2 * np.pi * 60 * t) * f  # noqa: E731
    full = integrate(coarse_fom.mass, K, load, dt=5e-3, n_steps=40)
    rows = np.array([3, 50, 7])
    sub = integrate(coarse_fom.mass, K, load, dt=5e-3, n_steps=40, record=rows)
    np.testing.assert_array_equal(sub.displacement, full.displacement[rows])
    np.testing.assert_array_equal(sub.acceleration, full.acceleration[rows])


@pytest.mark.parametrize("rho", [1.0, 0.8, 0.0])
def test_propagator_matches_integrate(rho):
    rng = np.random.default_rng(1)
    n = 5
    A = rng.normal(size=(n, n))
    M = A @ A.T + n * np.eye(n)
    B = rng.normal(size=(n, n))
    K = 50 * (B @ B.T + np.eye(n))
    F = rng.normal(size=(2, n))
    dt, L = 1e-2, 60
    t = dt * np.arange(L + 1)
    coeffs = np.column_stack([np.sin(5 * t), np.cos(2 * t)])
    v0, vd0 = rng.normal(size=n), rng.normal(size=n)
    p = GenAlphaParams(rho)
    ref = integrate(M, K, lambda s: np.interp(s, t, coeffs[:, 0]) * F[0] + np.interp(s, t, coeffs[:, 1]) * F[1],
                    v0, vd0, dt, L, p)
    got = LinearPropagator(M, K, F, dt, p).run(coeffs, v0, vd0)
    for q in ("displacement", "velocity", "acceleration"):
        np.testing.assert_allclose(getattr(got, q), getattr(ref, q), rtol=1e-9, atol=1e-9 * np.abs(getattr(ref, q)).max())


def test_singular_effective_matrix():
    with pytest.raises(IntegrationError):
        integrate(np.zeros((2, 2)), np.zeros((2, 2)), lambda t: np.ones(2), dt=1e-2, n_steps=3)
    with pytest.raises(IntegrationError):
        integrate(sp.csr_matrix((2, 2)), sp.csr_matrix((2, 2)), lambda t: np.ones(2), dt=1e-2, n_steps=3)


def test_non_finite_state_detected():
    with pytest.raises(IntegrationError):
        integrate(M1, K1, lambda t: np.array([np.nan]), dt=1e-2, n_steps=5)


def test_invalid_step():
    with pytest.raises(ValueError):
        integrate(M1, K1, ZERO, dt=0.0, n_steps=5)


def test_sensor_accelerations_constant_velocity():
    t = 1e-2 * np.arange(1, 11)
    h = StateHistory(displacement=(2.0 + 3.0 * t)[None], dt=1e-2)
    np.testing.assert_allclose(sensor_accelerations(h), 0.0, atol=1e-9)


def test_sensor_accelerations_stored_and_differenced():
    h = integrate(M1, K1, ZERO, [1.0], None, 1e-3, 1000)
    exact = -4 * np.pi ** 2 * np.cos(2 * np.pi * h.times)
    stored = sensor_accelerations(h)
    assert np.abs(stored[0] - exact).max() < 1e-2 * 4 * np.pi ** 2
    diffed = sensor_accelerations(h, prefer_stored=False)
    assert np.abs(diffed[0] - exact).max() < 1e-2 * 4 * np.pi ** 2
    # differencing error shrinks with the step (second order inside the window)
    errs = []
    for dt in (2e-3, 1e-3):
        t = dt * np.arange(1, int(1 / dt) + 1)
        hh = StateHistory(displacement=np.cos(2 * np.pi * t)[None], dt=dt)
        errs.append(np.abs(sensor_accelerations(hh)[0, 1:-1] + 4 * np.pi ** 2 * np.cos(2 * np.pi * t[1:-1])).max())
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_sensor_accelerations_needs_three_samples():
    with pytest.raises(ValueError):
        sensor_accelerations(StateHistory(displacement=np.zeros((1, 2)), dt=1.0))
