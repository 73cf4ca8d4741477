"""Generalized-alpha time integration of M v'' + K v = f(t).

The one-parameter family of Chung and Hulbert, parametrized by the spectral
radius at infinite frequency. The effective matrix is factorized once per
trajectory and reused for every step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenAlphaParams:
    rho_inf: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.rho_inf <= 1.0:
            raise ValueError("rho_inf must lie in [0, 1]")

    @property
    def alpha_m(self) -> float:
        return (2.0 * self.rho_inf - 1.0) / (self.rho_inf + 1.0)

    @property
    def alpha_f(self) -> float:
        return self.rho_inf / (self.rho_inf + 1.0)

    @property
    def gamma(self) -> float:
        return 0.5 - self.alpha_m + self.alpha_f

    @property
    def beta(self) -> float:
        return 0.25 * (1.0 - self.alpha_m + self.alpha_f) ** 2


@dataclass
class StateHistory:
    """Sampled trajectory; column ``l`` holds the state at ``t = (l + 1) * dt``."""

    displacement: np.ndarray  # (n, L)
    dt: float
    velocity: Optional[np.ndarray] = None
    acceleration: Optional[np.ndarray] = None

    @property
    def n_samples(self) -> int:
        return self.displacement.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_samples + 1)


def _factorize(A):
    if sp.issparse(A):
        try:
            lu = spla.splu(sp.csc_matrix(A))
        except RuntimeError as exc:
            raise IntegrationError(f"singular effective matrix: {exc}") from exc
        return lu.solve
    A = np.asarray(A, dtype=np.float64)
    try:
        c = la.cho_factor(A, check_finite=False)
    except la.LinAlgError:
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", la.LinAlgWarning)
                lu = la.lu_factor(A, check_finite=False)
        except la.LinAlgError as exc:
            raise IntegrationError("singular effective matrix") from exc
        if np.any(np.diag(lu[0]) == 0):
            raise IntegrationError("singular effective matrix")
        return lambda b: la.lu_solve(lu, b, check_finite=False)
    return lambda b: la.cho_solve(c, b, check_finite=False)


def integrate(M, K, load: Callable[[float], np.ndarray], v0=None, vd0=None, dt: float = 5e-3,
              n_steps: int = 200, params: GenAlphaParams = GenAlphaParams(),
              record: Optional[np.ndarray] = None) -> StateHistory:
    """Integrate ``M v'' + K v = load(t)`` from rest (or the given initial state).

    ``record`` optionally restricts the stored history to a subset of rows
    (dofs); the full state is still advanced. Returns displacements,
    velocities and accelerations at ``t_l = l * dt, l = 1..n_steps``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    n = M.shape[0]
    v = np.zeros(n) if v0 is None else np.array(v0, dtype=np.float64).reshape(n)
    vd = np.zeros(n) if vd0 is None else np.array(vd0, dtype=np.float64).reshape(n)
    am, af, beta, gamma = params.alpha_m, params.alpha_f, params.beta, params.gamma

    f_prev = np.asarray(load(0.0), dtype=np.float64).reshape(n)
    a = _factorize(M)(f_prev - K @ v)
    solve = _factorize((1.0 - am) * M + ((1.0 - af) * beta * dt * dt) * K)

    rows = slice(None) if record is None else np.asarray(record)
    n_rec = n if record is None else len(rows)
    V = np.empty((n_rec, n_steps))
    Vd = np.empty((n_rec, n_steps))
    A = np.empty((n_rec, n_steps))
    c1, c2 = dt * dt * (0.5 - beta), dt * dt * beta
    for step in range(n_steps):
        f_next = np.asarray(load((step + 1) * dt), dtype=np.float64).reshape(n)
        pred = v + dt * vd + c1 * a
        rhs = (1.0 - af) * f_next + af * f_prev - am * (M @ a) - K @ ((1.0 - af) * pred + af * v)
        a_next = solve(rhs)
        vd = vd + dt * ((1.0 - gamma) * a + gamma * a_next)
        v = pred + c2 * a_next
        a = a_next
        f_prev = f_next
        V[:, step] = v[rows]
        Vd[:, step] = vd[rows]
        A[:, step] = a[rows]
    if not (np.isfinite(V[:, -1]).all() and np.isfinite(A[:, -1]).all()):
        bad = np.flatnonzero(~np.isfinite(V).all(axis=0))
        raise IntegrationError(f"non-finite state at step {int(bad[0]) + 1 if bad.size else n_steps}")
    return StateHistory(displacement=V, dt=dt, velocity=Vd, acceleration=A)


class LinearPropagator:
    """Generalized-alpha step for small dense systems, condensed into one matrix.

    For a load of the form ``f(t) = sum_j psi_j(t) f_j`` the step
    ``z_{n+1} = P z_n + Q (c_{n+1}, c_n)`` on ``z = (v, v', v'')`` is exactly
    the scheme of :func:`integrate`, with the factorized solve folded into
    ``P`` and ``Q``.
    """

    def __init__(self, M, K, load_basis, dt, params: GenAlphaParams = GenAlphaParams()):
        M = np.asarray(M, dtype=np.float64)
        K = np.asarray(K, dtype=np.float64)
        F = np.atleast_2d(np.asarray(load_basis, dtype=np.float64))  # (P_f, n)
        n = M.shape[0]
        am, af, beta, gamma = params.alpha_m, params.alpha_f, params.beta, params.gamma
        S = (1.0 - am) * M + ((1.0 - af) * beta * dt * dt) * K
        try:
            cS = la.cho_factor(S)
            Sinv = lambda B: la.cho_solve(cS, B)  # noqa: E731
        except la.LinAlgError as exc:
            raise IntegrationError("singular effective matrix") from exc
        Id = np.eye(n)
        # a_{n+1} = Sinv(-(1-af) K v_pred - af K v - am M a + (1-af) f_{n+1} + af f_n)
        # v_pred = v + dt v' + dt^2 (1/2 - beta) a
        Kp = (1.0 - af) * K
        Av = Sinv(-(Kp + af * K))
        Avd = Sinv(-dt * Kp)
        Aa = Sinv(-(dt * dt * (0.5 - beta)) * Kp - am * M)
        Gn1 = Sinv((1.0 - af) * F.T)  # (n, P_f)
        Gn = Sinv(af * F.T)
        P = np.zeros((3 * n, 3 * n))
        P[2 * n:, :n], P[2 * n:, n:2 * n], P[2 * n:, 2 * n:] = Av, Avd, Aa
        # v' update
        P[n:2 * n, :n] = dt * gamma * Av
        P[n:2 * n, n:2 * n] = Id + dt * gamma * Avd
        P[n:2 * n, 2 * n:] = dt * (1.0 - gamma) * Id + dt * gamma * Aa
        # v update
        c1, c2 = dt * dt * (0.5 - beta), dt * dt * beta
        P[:n, :n] = Id + c2 * Av
        P[:n, n:2 * n] = dt * Id + c2 * Avd
        P[:n, 2 * n:] = c1 * Id + c2 * Aa
        Q1 = np.vstack([c2 * Gn1, dt * gamma * Gn1, Gn1])
        Q0 = np.vstack([c2 * Gn, dt * gamma * Gn, Gn])
        self.n = n
        self.dt = dt
        self.P = P
        self.Q = np.hstack([Q1, Q0])  # acts on (c_{n+1}, c_n)
        self._M = M
        self._K = K
        self._F = F

    def run(self, coeffs: np.ndarray, v0=None, vd0=None) -> StateHistory:
        """Advance through load coefficients ``coeffs[l, j]`` at ``t = l * dt``, l = 0..L."""
        c = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
        if c.shape[0] == 1 and self._F.shape[0] != 1:
            c = c.T
        if c.shape[1] != self._F.shape[0]:
            c = c.reshape(-1, self._F.shape[0])
        n_steps = c.shape[0] - 1
        n = self.n
        v = np.zeros(n) if v0 is None else np.asarray(v0, dtype=np.float64)
        vd = np.zeros(n) if vd0 is None else np.asarray(vd0, dtype=np.float64)
        a = la.solve(self._M, c[0] @ self._F - self._K @ v, assume_a="pos")
        z = np.concatenate([v, vd, a])
        drive = np.hstack([c[1:], c[:-1]]) @ self.Q.T  # (L, 3n)
        Z = np.empty((n_steps, 3 * n))
        P = self.P
        for step in range(n_steps):
            z = P @ z + drive[step]
            Z[step] = z
        if not np.isfinite(Z[-1]).all():
            raise IntegrationError("non-finite reduced state")
        return StateHistory(displacement=Z[:, :n].T, dt=self.dt,
                            velocity=Z[:, n:2 * n].T, acceleration=Z[:, 2 * n:].T)


def sensor_accelerations(history: StateHistory, prefer_stored: bool = True) -> np.ndarray:
    """Acceleration samples aligned with the displacement columns.

    Uses stored accelerations when present; otherwise second differences
    (central inside, second-order one-sided at the ends when L >= 4).
    """
    if prefer_stored and history.acceleration is not None:
        return history.acceleration
    V = history.displacement
    L = V.shape[1]
    if L < 3:
        raise ValueError("at least 3 samples are needed to difference accelerations")
    dt2 = history.dt ** 2
    A = np.empty_like(V)
    A[:, 1:-1] = (V[:, 2:] - 2.0 * V[:, 1:-1] + V[:, :-2]) / dt2
    if L >= 4:
        A[:, 0] = (2.0 * V[:, 0] - 5.0 * V[:, 1] + 4.0 * V[:, 2] - V[:, 3]) / dt2
        A[:, -1] = (2.0 * V[:, -1] - 5.0 * V[:, -2] + 4.0 * V[:, -3] - V[:, -4]) / dt2
    else:
        A[:, 0], A[:, -1] = A[:, 1], A[:, -2]
    return A
