"""Spectrum, PSF coefficients and amplitudes from a recovered lifted matrix.

``Z = x h^T`` is only identifiable up to ``(x / s, s h)``.  The convention
used throughout: ``||h||_2 = 1`` and the largest-modulus entry of ``h`` is
real and positive, so the phase and scale both live in ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal_model import steering_matrix

__all__ = [
    "Rank1Factors",
    "AmplitudeFit",
    "factor_rank1",
    "normalize_h",
    "solve_amplitudes",
    "reconstruct_psf",
    "correlation",
    "COND_WARN",
]

COND_WARN = 1e8


@dataclass
class Rank1Factors:
    x: np.ndarray
    h: np.ndarray
    s1: float
    s2_ratio: float


@dataclass
class AmplitudeFit:
    amps: np.ndarray
    residual: float
    cond: float
    warnings: list = field(default_factory=list)


def normalize_h(h):
    """Unit norm with the largest-modulus entry real positive; returns (h, s) with h = s * h_in."""
    h = np.asarray(h, complex)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValueError("h is zero")
    top = h[np.argmax(np.abs(h))]
    s = np.conj(top) / (abs(top) * norm)
    return h * s, s


def factor_rank1(z_hat):
    """Best rank-one factorization ``x h^T`` under the normalization convention."""
    z_hat = np.asarray(z_hat, complex)
    u, sv, vh = np.linalg.svd(z_hat, full_matrices=False)
    if sv[0] == 0:
        raise ValueError("Z is the zero matrix")
    # Z ~ s1 u1 conj(v1)^T, so h is proportional to conj(v1) = row 0 of vh
    h, s = normalize_h(vh[0])
    x = sv[0] * u[:, 0] / s
    ratio = float(sv[1] / sv[0]) if sv.size > 1 else 0.0
    return Rank1Factors(x=x, h=h, s1=float(sv[0]), s2_ratio=ratio)


def solve_amplitudes(x_hat, taus_hat, scheme):
    """Least-squares ``x_hat ~ sum_k a_k c(tau_k)``."""
    taus = np.atleast_1d(np.asarray(taus_hat, float))
    if taus.size == 0:
        raise ValueError("need at least one delay")
    if np.unique(taus).size != taus.size:
        raise ValueError("delays must be distinct")
    c = steering_matrix(taus, scheme)
    x_hat = np.asarray(x_hat, complex)
    amps, *_ = np.linalg.lstsq(c, x_hat, rcond=None)
    sv = np.linalg.svd(c, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    warnings = []
    if cond > COND_WARN:
        warnings.append(f"steering matrix condition number {cond:.2e} exceeds {COND_WARN:.0e}")
    resid = float(np.linalg.norm(c @ amps - x_hat))
    return AmplitudeFit(amps=amps, residual=resid, cond=cond, warnings=warnings)


def reconstruct_psf(s_matrix, h_hat):
    s_matrix = np.asarray(s_matrix)
    h_hat = np.asarray(h_hat)
    if s_matrix.shape[1] != h_hat.shape[0]:
        raise ValueError("S and h dimensions differ")
    return s_matrix @ h_hat


def correlation(a, b):
    """|<a, b>| / (||a|| ||b||), insensitive to scale and global phase."""
    a = np.ravel(a)
    b = np.ravel(b)
    den = np.linalg.norm(a) * np.linalg.norm(b)
    if den == 0:
        raise ValueError("zero vector")
    return float(abs(np.vdot(a, b)) / den)
