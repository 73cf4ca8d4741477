"""Proper orthogonal decomposition, Galerkin projection and reduced solves."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.linalg as la

from .fem import FomArrays, ParamPoint, damage_coefficients
from .integrator import GenAlphaParams, LinearPropagator, StateHistory

log = logging.getLogger(__name__)


class ReductionError(RuntimeError):
    pass


@dataclass
class PodBasis:
    basis: np.ndarray  # (M, W), orthonormal columns
    singular_values: np.ndarray  # all singular values of the last decomposed matrix
    error: float  # achieved normalized reconstruction error
    tol: float
    svd_path: str = "svd"

    @property
    def size(self) -> int:
        return self.basis.shape[1]


def truncation_errors(singular_values) -> np.ndarray:
    """``e[w] = sqrt(sum_{s>w} sigma_s^2 / sum_s sigma_s^2)`` for ``w = 0..r``."""
    s2 = np.asarray(singular_values, dtype=np.float64) ** 2
    total = s2.sum()
    tail = np.concatenate([np.cumsum(s2[::-1])[::-1], [0.0]])
    return np.sqrt(np.clip(tail / total, 0.0, None))


def pod(S: np.ndarray, eps_tol: float) -> PodBasis:
    """Smallest left singular basis whose normalized truncation error is below ``eps_tol``."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[1] < 1:
        raise ValueError("snapshot matrix must be 2-D with at least one column")
    if not 0.0 < eps_tol < 1.0:
        raise ValueError("eps_tol must lie in (0, 1)")
    if not np.isfinite(S).all():
        raise ValueError("snapshot matrix contains non-finite entries")
    if not np.any(S):
        raise ValueError("all-zero snapshot matrix")
    U, sig, _ = la.svd(S, full_matrices=False, check_finite=False)
    err = truncation_errors(sig)
    # err is non-increasing; first w >= 1 with err[w] < eps_tol
    w = int(np.argmax(err[1:] < eps_tol)) + 1 if np.any(err[1:] < eps_tol) else sig.size
    return PodBasis(basis=U[:, :w].copy(), singular_values=sig, error=float(err[w]), tol=eps_tol)


def incremental_pod(blocks: Iterable[np.ndarray], eps_tol: float,
                    on_update: Optional[Callable[[int, PodBasis], None]] = None) -> PodBasis:
    """Sequential basis update: ``W <- POD([W | POD(S_tau)])`` over snapshot blocks.

    ``blocks`` may be a lazy iterable so that only one block lives in memory.
    The same tolerance is used for the per-block and the merged decompositions.
    """
    it = iter(blocks)
    try:
        first = next(it)
    except StopIteration:
        raise ValueError("no snapshot blocks") from None
    basis = pod(first, eps_tol)
    if on_update:
        on_update(1, basis)
    for tau, block in enumerate(it, start=2):
        local = pod(block, eps_tol)
        basis = pod(np.hstack([basis.basis, local.basis]), eps_tol)
        if on_update:
            on_update(tau, basis)
    return basis


@dataclass
class RomArrays:
    mass: np.ndarray  # (W, W)
    stiffness: list  # reduced K_p
    load_basis: np.ndarray  # (P_f, W)
    basis: np.ndarray  # (M, W), kept for lifting

    @property
    def size(self) -> int:
        return self.mass.shape[0]

    def stiffness_at(self, g: int, delta: float) -> np.ndarray:
        psi = damage_coefficients(len(self.stiffness), g, delta)
        K = psi[0] * self.stiffness[0]
        for p in range(1, len(self.stiffness)):
            K = K + psi[p] * self.stiffness[p]
        return K


def project(fom: FomArrays, basis) -> RomArrays:
    """Galerkin projection of every affine component onto ``basis``."""
    W = basis.basis if isinstance(basis, PodBasis) else np.asarray(basis, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != fom.n_dofs:
        raise ValueError(f"basis has {W.shape[0]} rows, FOM has {fom.n_dofs} dofs")
    if np.linalg.matrix_rank(W) < W.shape[1]:
        raise ReductionError("rank-deficient reduction basis")
    sym = lambda A: 0.5 * (A + A.T)  # noqa: E731
    MR = sym(W.T @ (fom.mass @ W))
    KR = [sym(W.T @ (K @ W)) for K in fom.stiffness]
    fR = np.asarray(fom.load_basis) @ W
    return RomArrays(mass=np.ascontiguousarray(MR), stiffness=[np.ascontiguousarray(K) for K in KR],
                     load_basis=np.atleast_2d(fR), basis=W)


@dataclass
class ReducedSolution:
    reduced: StateHistory
    basis: np.ndarray

    def lift(self, rows=None, quantity: str = "displacement") -> np.ndarray:
        """``W V_R`` restricted to ``rows`` (reduced-dof indices), shape ``(len(rows), L)``."""
        W = self.basis if rows is None else self.basis[np.asarray(rows)]
        return W @ getattr(self.reduced, quantity)

    def lifted_history(self, rows=None) -> StateHistory:
        return StateHistory(displacement=self.lift(rows), dt=self.reduced.dt,
                            velocity=self.lift(rows, "velocity"), acceleration=self.lift(rows, "acceleration"))


def rom_solve(rom: RomArrays, coeffs: np.ndarray, g: int, delta: float, dt: float,
              params: GenAlphaParams = GenAlphaParams(), v0=None, vd0=None) -> ReducedSolution:
    """Integrate the reduced system for load coefficients ``coeffs[l, j]`` at ``t = l dt``.

    Full-order initial conditions, when given, are projected with ``W^T``.
    """
    K = rom.stiffness_at(g, delta)
    prop = LinearPropagator(rom.mass, K, rom.load_basis, dt, params)
    r0 = None if v0 is None else rom.basis.T @ np.asarray(v0)
    rd0 = None if vd0 is None else rom.basis.T @ np.asarray(vd0)
    return ReducedSolution(reduced=prop.run(coeffs, r0, rd0), basis=rom.basis)


def _rel_l2(ref, approx):
    num = np.linalg.norm(ref - approx, axis=-1)
    den = np.linalg.norm(ref, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))


def _rel_max(ref, approx):
    num = np.abs(ref - approx).max(axis=-1)
    den = np.abs(ref).max(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), np.where(num > 0, np.inf, 0.0))


def reconstruction_report(fom: StateHistory, rom: StateHistory, rows=None) -> dict:
    """Per-sensor relative L2 and max errors of a lifted ROM history against the FOM.

    ``rows`` selects sensor rows present in both histories (default: all).
    Returns arrays keyed ``{quantity}_{l2|max}``.
    """
    if fom.displacement.shape[1] != rom.displacement.shape[1]:
        raise ValueError("histories have different sample counts")
    sel = slice(None) if rows is None else np.asarray(rows)
    out = {}
    for q in ("displacement", "acceleration"):
        a, b = getattr(fom, q), getattr(rom, q)
        if a is None or b is None:
            continue
        a, b = a[sel], b[sel]
        if a.shape != b.shape:
            raise ValueError(f"{q} histories have mismatched shapes {a.shape} vs {b.shape}")
        out[f"{q}_l2"] = _rel_l2(a, b)
        out[f"{q}_max"] = _rel_max(a, b)
    return out


def collect_snapshots(solve: Callable[[ParamPoint], np.ndarray], points, time_indices) -> Iterable[np.ndarray]:
    """Lazily yield one snapshot block ``S_tau`` (M x X) per parameter point."""
    for tau, p in enumerate(points, start=1):
        try:
            V = solve(p)
        except Exception as exc:
            raise ReductionError(f"FOM solve failed for snapshot sample {tau} ({p.as_dict()}): {exc}") from exc
        yield V[:, time_indices]
