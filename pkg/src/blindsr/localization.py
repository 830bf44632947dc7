"""Spike locations and masses from a Toeplitz moment matrix.

``T = sum_k c_k w(theta_k) w(theta_k)^H`` with ``w(theta) = [1, e^{j theta},
..., e^{j d theta}]``.  Frequencies come from the shift invariance of the
signal subspace (matrix pencil), masses from nonnegative least squares, and
delays from ``tau = theta d / (2 pi B_max)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, nnls

__all__ = [
    "LocalizationResult",
    "MatchResult",
    "DegenerateSpectrumError",
    "estimate_rank",
    "vandermonde_recover",
    "prony_recover",
    "localize",
    "match_spikes",
    "theta_to_tau",
    "tau_to_theta",
    "vandermonde",
]

ABS_FLOOR = 1e-12
CLUSTER_TOL = 1e-9


@dataclass
class LocalizationResult:
    taus: np.ndarray
    masses: np.ndarray
    thetas: np.ndarray
    rank_used: int
    residual: float
    clipped: np.ndarray

    @property
    def k(self):
        return len(self.taus)

    @property
    def any_clipped(self):
        return bool(np.any(self.clipped))


class DegenerateSpectrumError(ValueError):
    """Pencil eigenvalues collided; ``partial`` holds what was recovered."""

    def __init__(self, message, partial):
        super().__init__(message)
        self.partial = partial


def tau_to_theta(tau, b_max, d):
    return 2 * math.pi * np.asarray(tau, float) * b_max / d


def theta_to_tau(theta, b_max, d):
    return np.asarray(theta, float) * d / (2 * math.pi * b_max)


def vandermonde(thetas, d):
    """Columns ``w(theta_k)``, shape (d+1, K)."""
    return np.exp(1j * np.outer(np.arange(d + 1), np.atleast_1d(thetas)))


def _hermitian(t):
    t = np.asarray(t, complex)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError("T must be square")
    return 0.5 * (t + t.conj().T)


def estimate_rank(t, rel_tol=1e-6, abs_floor=ABS_FLOOR):
    """Number of eigenvalues at or above ``rel_tol * lambda_max``.

    Returns 0 when ``lambda_max`` is below ``abs_floor``.  Capped at ``d``, the
    largest rank a Vandermonde decomposition of a singular T can have.
    """
    lam = np.linalg.eigvalsh(_hermitian(t))
    top = lam[-1]
    if top < abs_floor:
        return 0
    return int(min(np.sum(lam >= rel_tol * top), len(lam) - 1))


def _fit_masses(t, thetas):
    """Nonnegative masses for ``T ~ sum c_k w w^H`` and the relative residual."""
    d = t.shape[0] - 1
    v = vandermonde(thetas, d)
    atoms = np.einsum("ik,jk->ijk", v, v.conj()).reshape(-1, len(thetas))
    a = np.vstack([atoms.real, atoms.imag])
    b = np.concatenate([t.real.ravel(), t.imag.ravel()])
    masses, _ = nnls(a, b)
    fit = (v * masses) @ v.conj().T
    residual = np.linalg.norm(t - fit) / max(np.linalg.norm(t), 1e-300)
    return masses, float(residual)


def _finish(t, thetas, b_max, rank):
    d = t.shape[0] - 1
    thetas = np.asarray(thetas, float)
    masses, residual = _fit_masses(t, thetas)
    taus = theta_to_tau(thetas, b_max, d)
    clipped = np.abs(taus) > 0.5
    taus = np.clip(taus, -0.5, 0.5)
    order = np.argsort(taus, kind="stable")
    return LocalizationResult(
        taus=taus[order],
        masses=masses[order],
        thetas=thetas[order],
        rank_used=rank,
        residual=residual,
        clipped=clipped[order],
    )


def _check_clusters(thetas):
    if len(thetas) < 2:
        return math.inf
    z = np.exp(1j * np.asarray(thetas))
    gaps = np.abs(z[:, None] - z[None, :]) + 4 * np.eye(len(z))
    return float(gaps.min())


def vandermonde_recover(t, k, b_max, cluster_tol=CLUSTER_TOL):
    """Matrix-pencil decomposition of T with ``k`` components.

    The top-``k`` eigenvectors span ``range(V)`` and satisfy
    ``U[1:] = U[:-1] Psi`` with ``Psi`` similar to ``diag(e^{j theta})``.
    """
    t = _hermitian(t)
    d = t.shape[0] - 1
    if not 1 <= k <= d:
        raise ValueError(f"rank {k} outside [1, {d}]")
    _, vec = np.linalg.eigh(t)
    u = vec[:, -k:]
    psi = np.linalg.lstsq(u[:-1], u[1:], rcond=None)[0]
    z = np.linalg.eigvals(psi)
    thetas = np.angle(z)
    result = _finish(t, thetas, b_max, k)
    gap = _check_clusters(thetas)
    if gap < cluster_tol:
        raise DegenerateSpectrumError(f"pencil eigenvalues {gap:.2e} apart", result)
    return result


def prony_recover(t, k, b_max):
    """Classical Prony on the first row of T (cross-check for the pencil).

    ``v_n = sum c e^{-j n theta}`` obeys a length-``k`` linear recurrence whose
    characteristic roots are ``e^{-j theta}``.
    """
    t = _hermitian(t)
    d = t.shape[0] - 1
    if not 1 <= k <= d // 2:
        raise ValueError(f"Prony needs 1 <= k <= d/2, got k={k}, d={d}")
    v = t[0]
    # sum_{i<k} p_i v_{n+i} = -v_{n+k}, n = 0..d-k
    rows = np.array([v[n : n + k] for n in range(d - k + 1)])
    rhs = -v[k : d + 1]
    p = np.linalg.lstsq(rows, rhs, rcond=None)[0]
    roots = np.roots(np.concatenate([[1.0], p[::-1]]))
    thetas = -np.angle(roots)
    return _finish(t, thetas, b_max, k)


def localize(t, b_max, rel_tol=1e-6, k=None):
    """Rank estimate plus pencil recovery; ``None`` when T is numerically zero."""
    if k is None:
        k = estimate_rank(t, rel_tol)
    if k == 0:
        return None
    return vandermonde_recover(t, k, b_max)


@dataclass
class MatchResult:
    pairing: list
    max_error: float
    errors: np.ndarray
    matched_all: bool


def _bottleneck(cost):
    """Smallest threshold that still allows a full assignment."""
    levels = np.unique(cost)
    lo, hi = 0, len(levels) - 1
    n_pairs = min(cost.shape)
    while lo < hi:
        mid = (lo + hi) // 2
        blocked = (cost > levels[mid]).astype(float)
        r, c = linear_sum_assignment(blocked)
        if blocked[r, c].sum() == 0 and len(r) == n_pairs:
            hi = mid
        else:
            lo = mid + 1
    return levels[lo]


def match_spikes(taus_hat, taus_true):
    """Assignment minimizing the largest |tau_hat - tau|, ties broken by total error.

    Unmatched spikes (different counts) leave ``matched_all`` false.
    """
    th = np.atleast_1d(np.asarray(taus_hat, float))
    tt = np.atleast_1d(np.asarray(taus_true, float))
    if th.size == 0 or tt.size == 0:
        return MatchResult([], math.inf, np.zeros(0), th.size == tt.size == 0)
    cost = np.abs(th[:, None] - tt[None, :])
    limit = _bottleneck(cost)
    masked = np.where(cost <= limit, cost, cost.max() * 10 + 1)
    rows, cols = linear_sum_assignment(masked)
    errors = cost[rows, cols]
    pairing = [(int(i), int(j)) for i, j in zip(rows, cols)]
    return MatchResult(pairing, float(errors.max()), errors, th.size == tt.size)
