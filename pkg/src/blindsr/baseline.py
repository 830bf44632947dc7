"""Grid-based comparator: the lifted atomic-norm SDP for uniform samples.

With ``f_m = m * step`` the Gram matrix of the steering vectors is itself
Toeplitz, so the moment matrix is an ``M x M`` Toeplitz variable and no
PSWF interpolation or arc constraint is involved:

    minimize  (tr W + tr Toep(u) / M) / 2
    s.t.      [[W, Z^H], [Z, Toep(u)]] >= 0,   y = Upsilon(Z)

Spikes come out of ``Toep(u)`` through the same matrix-pencil code as the
PSWF method, with ``d = M - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .atomic_sdp import SdpFailure, _hermitian_count, _hermitian_var, _measurement_matrix, _unpack_hermitian, _z_expr
from .conic import DEFAULT_TOL, AffineExpr, ConicProgram, bmat, solve_conic
from .localization import localize
from .signal_model import SamplingScheme

__all__ = [
    "build_uniform_scheme",
    "is_uniform",
    "build_grid_program",
    "GridSolution",
    "solve_grid_blind_sr",
    "localize_grid",
]


def build_uniform_scheme(m, b_max):
    """``m`` equispaced samples on [0, b_max], endpoints included."""
    if m < 2:
        raise ValueError("need at least two samples")
    freqs = np.linspace(0.0, float(b_max), int(m))
    freqs[-1] = float(b_max)
    return SamplingScheme(freqs=freqs, b_max=float(b_max))


def is_uniform(scheme, tol=1e-12):
    steps = np.diff(scheme.freqs)
    return bool(np.max(np.abs(steps - steps.mean())) <= tol * max(1.0, scheme.b_max))


def _toeplitz_expr(m, start, n_vars):
    """``T[p, q] = v_{q-p}`` from reals ``[v_0, Re v_1, Im v_1, ...]``."""
    rows, cols, vals = [], [], []
    for p in range(m):
        for q in range(m):
            k = q - p
            r = p * m + q
            if k == 0:
                rows.append(r), cols.append(start), vals.append(1.0)
                continue
            base = start + 2 * abs(k) - 1
            rows += [r, r]
            cols += [base, base + 1]
            vals += [1.0, 1j if k > 0 else -1j]
    return AffineExpr.from_triplets((m, m), n_vars, rows, cols, np.asarray(vals, complex))


def build_grid_program(y, s_matrix, gamma=None):
    """The comparator SDP; with ``gamma`` the equality becomes a ``|y - Upsilon(Z)|^2 / gamma`` penalty."""
    s_matrix = np.asarray(s_matrix)
    y = np.asarray(y, complex)
    mm, ll = s_matrix.shape
    if y.shape != (mm,):
        raise ValueError("y and S disagree on M")
    prog = ConicProgram(meta={"m": mm, "l": ll, "method": "baseline"})
    w_sl = prog.add_variable("W", _hermitian_count(ll, False))
    u_sl = prog.add_variable("u", 2 * mm - 1)
    z_sl = prog.add_variable("Z", 2 * mm * ll)
    n = prog.n
    w_expr, _ = _hermitian_var(ll, w_sl.start, n)
    t_expr = _toeplitz_expr(mm, u_sl.start, n)
    z_expr = _z_expr(mm, ll, z_sl.start, n)
    prog.add_psd("lifted", bmat([[w_expr, z_expr.H], [z_expr, t_expr]]))

    tr_w, _ = w_expr.trace_coeffs()
    c = 0.5 * tr_w.real
    c[u_sl.start] += 0.5  # tr Toep(u) / M = v_0
    prog.add_linear_objective(c)

    a = _measurement_matrix(s_matrix, z_sl.start, n)
    b = np.concatenate([y.real, y.imag])
    if gamma is None:
        prog.add_equality(a, b)
    else:
        if not gamma > 0:
            raise ValueError(f"gamma must be positive, got {gamma}")
        prog.add_quadratic_objective((2.0 / gamma) * (a.T @ a), q=-(2.0 / gamma) * (a.T @ b), const=b @ b / gamma)
        prog.meta["gamma"] = gamma
    return prog


@dataclass
class GridSolution:
    z: np.ndarray
    u: np.ndarray  # v_0 .. v_{M-1}, first row of Toep(u)
    w: np.ndarray
    objective: float
    status: str
    report: dict
    checks: dict = field(default_factory=dict)

    @property
    def t(self):
        return la.toeplitz(np.conj(self.u), self.u)

    @property
    def ok(self):
        return self.status == "optimal"


def solve_grid_blind_sr(y, s_matrix, scheme, gamma=None, tol_gap=DEFAULT_TOL, tol_feas=DEFAULT_TOL, max_iter=200, strict=True):
    """Solve the comparator SDP on a uniform scheme."""
    if not is_uniform(scheme):
        raise ValueError("the grid baseline needs equispaced samples")
    if scheme.m != np.shape(s_matrix)[0]:
        raise ValueError("scheme and S disagree on M")
    prog = build_grid_program(y, s_matrix, gamma)
    sol = solve_conic(prog, tol_gap=tol_gap, tol_feas=tol_feas, max_iter=max_iter)
    if strict and sol.status not in ("optimal", "near-optimal"):
        raise SdpFailure(sol.status, sol.report)
    mm, ll = np.shape(s_matrix)
    p = sol.values["u"]
    u = np.concatenate([[p[0]], p[1::2] + 1j * p[2::2]])
    zp = sol.values["Z"]
    z = (zp[: mm * ll] + 1j * zp[mm * ll :]).reshape(mm, ll)
    w = _unpack_hermitian(sol.values["W"], ll, False)
    out = GridSolution(z, u, w, sol.objective, sol.status, sol.report)
    out.checks = {"trace_identity_gap": abs(np.trace(w).real - u[0].real) / max(abs(sol.objective), 1e-300)}
    return out


def localize_grid(sol, scheme, rel_tol=1e-6, k=None):
    """Spikes from ``Toep(u)``.

    ``Toep(u) = sum c_k c(tau_k) c(tau_k)^H`` has entries
    ``e^{-j 2 pi step (p - q) tau}``, the conjugate of the pencil code's
    ``w(theta) w(theta)^H`` at ``theta = 2 pi step tau``.  The pencil code maps
    ``theta`` back to ``tau`` with ``d / (2 pi b_max) = 1 / (2 pi step)``.
    """
    return localize(np.conj(sol.t), scheme.b_max, rel_tol=rel_tol, k=k)


def grid_resolution(scheme):
    """Largest |tau| the grid can represent without aliasing."""
    step = scheme.b_max / (scheme.m - 1)
    return 1.0 / (2.0 * step) if step > 0 else math.inf
