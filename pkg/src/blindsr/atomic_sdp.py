"""Lifted atomic-norm SDP over arbitrarily sampled frequencies.

The unknown rank-one matrix ``Z`` (M x L) is recovered by

    minimize   1/2 (tr W + e^H Q e)
    subject to [[W, Z^H], [Z, Q]] >= 0,   y = Upsilon(Z),
               T = toep(v) >= 0,          Psi(T) >= 0,

where ``Q`` is tied to the moment vector ``v`` through the PSWF
interpolation ``Q_jl = h(delta_jl)^T Phi^{-1} [v_d^*, ..., v_0, ..., v_d]``.
Moments follow ``v_k = sum_i c_i exp(-1j k theta_i)`` with
``theta = 2 pi tau B_max / d`` and ``T[p, q] = v_{q-p}`` (first row ``v``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .conic import DEFAULT_TOL, AffineExpr, ConicProgram, bmat, solve_conic
from .pswf import phi_matrix
from .signal_model import encode_complex

__all__ = [
    "MomentVector",
    "SdpSolution",
    "SdpFailure",
    "moments_from_measure",
    "q_coefficients",
    "q_from_moments",
    "psi_operator",
    "build_noiseless",
    "build_noisy",
    "default_gamma",
    "solve",
    "atomic_norm",
    "solution_to_dict",
]


class SdpFailure(RuntimeError):
    """Raised when the solver does not return a usable point."""

    def __init__(self, status, report):
        super().__init__(f"SDP solve ended with status {status!r}")
        self.status = status
        self.report = report


@dataclass(frozen=True)
class MomentVector:
    """Generalized trigonometric moments ``v_0 .. v_d``; ``v_0`` is real."""

    v: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.v, dtype=complex).ravel()
        if v.size < 1:
            raise ValueError("moment vector is empty")
        v = v.copy()
        v[0] = v[0].real
        object.__setattr__(self, "v", v)

    @property
    def d(self):
        return self.v.size - 1

    def toeplitz(self):
        return la.toeplitz(np.conj(self.v), self.v)

    def stacked(self):
        """``[v_d^*, ..., v_1^*, v_0, v_1, ..., v_d]``."""
        return np.concatenate([np.conj(self.v[:0:-1]), self.v])


def moments_from_measure(taus, masses, basis):
    """Moments of ``sum_i c_i delta(theta - theta_i)`` for delays ``taus``."""
    thetas = 2 * math.pi * np.asarray(taus, float) * basis.b_max / basis.d
    k = np.arange(basis.d + 1)
    v = np.exp(-1j * np.outer(k, thetas)) @ np.asarray(masses, float)
    return MomentVector(v)


# ---------------------------------------------------------------- Q(v)

_Q_CACHE: dict = {}
_Q_CACHE_MAX = 32


def _pair_coefficients(basis, scheme):
    """Rows ``m_jl`` for j <= l, solved from Phi^T m = h (one LU, many rhs)."""
    if not math.isclose(basis.b_max, scheme.b_max):
        raise ValueError("basis and sampling scheme disagree on B_max")
    f = scheme.freqs
    jj, ll = np.triu_indices(scheme.m)
    delta = (f[jj] - f[ll]) / basis.b_max
    if np.any(np.abs(delta) > 1 + 1e-12):
        raise ValueError("frequency pair wider than B_max")
    delta = np.clip(delta, -1.0, 1.0)
    phi = phi_matrix(basis)
    rhs = basis.values(delta).T  # (n, pairs)
    m = phi.solve(rhs, trans=True).T  # (pairs, n)
    # exact identity m(0) = reverse(m(0)); enforce it on the diagonal
    diag = jj == ll
    m[diag] = 0.5 * (m[diag] + m[diag][:, ::-1])
    return jj, ll, m


def q_coefficients(basis, scheme):
    """Linear map ``v -> Q`` as a dense complex array of shape (M*M, 2d+1).

    The real parameter vector is ``[v_0, Re v_1, Im v_1, ..., Re v_d, Im v_d]``.
    Entries below the diagonal are conjugates of those above, so the map
    produces an exactly Hermitian matrix for every parameter vector.
    """
    key = (basis.b_max, basis.epsilon, basis.d, scheme.freqs.tobytes())
    hit = _Q_CACHE.get(key)
    if hit is not None:
        return hit
    d, mm = basis.d, scheme.m
    jj, ll, m = _pair_coefficients(basis, scheme)
    plus = m[:, d + 1 :]  # weights of v_1..v_d
    minus = m[:, d - 1 :: -1]  # weights of v_1^*..v_d^*
    coeff = np.empty((len(jj), 2 * d + 1), dtype=complex)
    coeff[:, 0] = m[:, d]
    coeff[:, 1::2] = plus + minus
    coeff[:, 2::2] = 1j * (plus - minus)
    out = np.zeros((mm * mm, 2 * d + 1), dtype=complex)
    out[jj * mm + ll] = coeff
    out[ll * mm + jj] = np.conj(coeff)
    out[jj[jj == ll] * (mm + 1)] = coeff[jj == ll].real
    out.setflags(write=False)
    if len(_Q_CACHE) >= _Q_CACHE_MAX:
        _Q_CACHE.pop(next(iter(_Q_CACHE)))
    _Q_CACHE[key] = out
    return out


def _moment_params(v):
    v = np.asarray(v, complex)
    out = np.empty(2 * v.size - 1)
    out[0] = v[0].real
    out[1::2] = v[1:].real
    out[2::2] = v[1:].imag
    return out


def _params_to_moments(p):
    return MomentVector(np.concatenate([[p[0]], p[1::2] + 1j * p[2::2]]))


def q_from_moments(moments, basis, scheme):
    """Evaluate ``Q(v)`` for a concrete moment vector."""
    coeff = q_coefficients(basis, scheme)
    mm = scheme.m
    return (coeff @ _moment_params(moments.v)).reshape(mm, mm)


def psi_operator(t, theta0):
    """``tan^2(theta0/2) (J1+J2) T (J1+J2)^H - (J1-J2) T (J1-J2)^H``."""
    if not 0 < theta0 < math.pi:
        raise ValueError(f"theta0 = {theta0} must lie in (0, pi)")
    t = np.asarray(t)
    s = t[:-1, :-1] + t[1:, 1:]
    x = t[1:, :-1] + t[:-1, 1:]
    tan2 = math.tan(theta0 / 2) ** 2
    return tan2 * (s + x) - (s - x)


def _psi_expr(t_expr, theta0):
    n = t_expr.shape[0] - 1
    eye = np.eye(n)
    j1 = np.hstack([eye, np.zeros((n, 1))])
    j2 = np.hstack([np.zeros((n, 1)), eye])
    tan2 = math.tan(theta0 / 2) ** 2
    return t_expr.congruence(j1 + j2) * tan2 - t_expr.congruence(j1 - j2)


# ---------------------------------------------------------------- assembly


def _hermitian_var(n, start, n_vars, real_only=False):
    """Expression for a Hermitian n x n block; returns (expr, count)."""
    rows, cols, vals = [], [], []
    k = start
    for i in range(n):
        rows.append(i * n + i)
        cols.append(k)
        vals.append(1.0)
        k += 1
    for i in range(n):
        for j in range(i + 1, n):
            rows += [i * n + j, j * n + i]
            cols += [k, k]
            vals += [1.0, 1.0]
            k += 1
            if not real_only:
                rows += [i * n + j, j * n + i]
                cols += [k, k]
                vals += [1j, -1j]
                k += 1
    vals = np.asarray(vals, complex)
    return AffineExpr.from_triplets((n, n), n_vars, rows, cols, vals), k - start


def _hermitian_count(n, real_only):
    return n * n if not real_only else n * (n + 1) // 2


def _z_expr(mm, ll, start, n_vars):
    size = mm * ll
    idx = np.arange(size)
    rows = np.concatenate([idx, idx])
    cols = np.concatenate([start + idx, start + size + idx])
    vals = np.concatenate([np.ones(size), 1j * np.ones(size)])
    return AffineExpr.from_triplets((mm, ll), n_vars, rows, cols, vals)


def _measurement_matrix(s_matrix, start, n_vars):
    """Real system ``[Re y; Im y] = A x`` for ``y_m = sum_l Z_ml S_ml``."""
    mm, ll = s_matrix.shape
    size = mm * ll
    sel = sp.kron(sp.identity(mm), np.ones((1, ll)), format="csr")
    s_re = sel @ sp.diags(s_matrix.real.ravel())
    s_im = sel @ sp.diags(s_matrix.imag.ravel())
    block = sp.bmat([[s_re, -s_im], [s_im, s_re]], format="csr")
    left = sp.csr_matrix((2 * mm, start))
    right = sp.csr_matrix((2 * mm, n_vars - start - 2 * size))
    return sp.hstack([left, block, right], format="csr")


def _alpha_maps(basis, scheme):
    """Linear maps from PSWF coefficients to ``Q`` and to ``v``.

    The solver works with ``u = Phi alpha`` instead of the node values
    ``u = [v_d^*, ..., v_d]`` directly.  Since Phi is invertible this is the
    same feasible set, but it keeps every coefficient O(1) where
    ``Phi^{-1}`` would inflate them by the Lebesgue constant.  Conjugate
    symmetry of ``u`` makes ``alpha_n`` real for even n and imaginary for
    odd n, so the real parameters are ``r_n`` with ``alpha_n = i^(n mod 2) r_n``.
    """
    key = ("alpha", basis.b_max, basis.epsilon, basis.d, scheme.freqs.tobytes())
    hit = _Q_CACHE.get(key)
    if hit is not None:
        return hit
    d, mm = basis.d, scheme.m
    n = basis.n_functions
    unit = np.where(np.arange(n) % 2 == 0, 1.0, 1j)
    f = scheme.freqs
    jj, ll = np.triu_indices(mm)
    delta = np.clip((f[jj] - f[ll]) / basis.b_max, -1.0, 1.0)
    h = basis.values(delta) * unit
    q_map = np.zeros((mm * mm, n), dtype=complex)
    q_map[jj * mm + ll] = h
    q_map[ll * mm + jj] = np.conj(h)
    diag = np.arange(mm) * (mm + 1)
    q_map[diag] = q_map[diag].real
    v_map = basis.values(np.arange(d + 1) / d) * unit
    v_map[0] = v_map[0].real
    q_map.setflags(write=False)
    v_map.setflags(write=False)
    if len(_Q_CACHE) >= _Q_CACHE_MAX:
        _Q_CACHE.pop(next(iter(_Q_CACHE)))
    _Q_CACHE[key] = (q_map, v_map)
    return q_map, v_map


def _embed(dense, start, n_vars):
    rows = dense.shape[0]
    return sp.hstack(
        [sp.csr_matrix((rows, start)), sp.csr_matrix(dense), sp.csr_matrix((rows, n_vars - start - dense.shape[1]))],
        format="csr",
    )


def _toeplitz_map(v_map):
    """Rows of ``T[p, q] = v_{q-p}`` as a dense (size^2, n) array."""
    size = v_map.shape[0]
    p, q = np.divmod(np.arange(size * size), size)
    k = q - p
    rows = v_map[np.abs(k)]
    return np.where((k < 0)[:, None], np.conj(rows), rows)


def _lifted_program(basis, scheme, ll, z_fixed=None, real_w=False, e_index=0):
    """Variables, the three LMIs and the objective shared by every variant."""
    mm, d = scheme.m, basis.d
    if not 0 <= e_index < mm:
        raise ValueError("e_index outside the sample range")
    prog = ConicProgram(meta={"d": d, "b_max": basis.b_max, "m": mm, "l": ll})
    w_sl = prog.add_variable("W", _hermitian_count(ll, real_w))
    a_sl = prog.add_variable("alpha", basis.n_functions)
    z_sl = prog.add_variable("Z", 2 * mm * ll) if z_fixed is None else None
    n = prog.n
    w_expr, _ = _hermitian_var(ll, w_sl.start, n, real_only=real_w)
    if z_fixed is None:
        z_expr = _z_expr(mm, ll, z_sl.start, n)
    else:
        z_expr = AffineExpr.constant(np.asarray(z_fixed, complex), n)
    q_map, v_map = _alpha_maps(basis, scheme)
    q_expr = AffineExpr((mm, mm), _embed(q_map, a_sl.start, n))
    t_expr = AffineExpr((d + 1, d + 1), _embed(_toeplitz_map(v_map), a_sl.start, n))

    prog.add_psd("lifted", bmat([[w_expr, z_expr.H], [z_expr, q_expr]]))
    prog.add_psd("toeplitz", t_expr)
    prog.add_psd("arc", _psi_expr(t_expr, basis.theta0))

    tr_w, _ = w_expr.trace_coeffs()
    q_ee, _ = q_expr.entry_coeffs(e_index, e_index)
    prog.add_linear_objective(0.5 * (tr_w.real + q_ee.real))
    prog.meta.update(real_w=real_w, e_index=e_index, z_fixed=z_fixed is not None)
    return prog


def _check_instance(instance, basis):
    if not math.isclose(instance.scheme.b_max, basis.b_max):
        raise ValueError("instance and basis disagree on B_max")
    if instance.subspace.s_matrix.shape != (instance.m, instance.l):
        raise ValueError("subspace matrix does not match the sampling scheme")
    if np.shape(instance.y) != (instance.m,):
        raise ValueError("measurement vector has the wrong length")


def build_noiseless(instance, basis, real_w=False, e_index=0):
    _check_instance(instance, basis)
    prog = _lifted_program(basis, instance.scheme, instance.l, real_w=real_w, e_index=e_index)
    z_sl = prog.blocks["Z"]
    a = _measurement_matrix(instance.subspace.s_matrix, z_sl.start, prog.n)
    y = np.asarray(instance.y, complex)
    prog.add_equality(a, np.concatenate([y.real, y.imag]))
    prog.meta["variant"] = "noiseless"
    return prog


def default_gamma(sigma, m, b_max):
    return sigma * math.sqrt(m * math.log(b_max))


def build_noisy(instance, basis, gamma=None, real_w=False, e_index=0):
    """Noiseless program with ``y = Upsilon(Z)`` traded for ``|y - Upsilon(Z)|^2 / gamma``."""
    _check_instance(instance, basis)
    if gamma is None:
        if not instance.sigma > 0:
            raise ValueError("noisy program needs sigma > 0 or an explicit gamma")
        gamma = default_gamma(instance.sigma, instance.m, instance.scheme.b_max)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    prog = _lifted_program(basis, instance.scheme, instance.l, real_w=real_w, e_index=e_index)
    z_sl = prog.blocks["Z"]
    a = _measurement_matrix(instance.subspace.s_matrix, z_sl.start, prog.n)
    y = np.asarray(instance.y, complex)
    b = np.concatenate([y.real, y.imag])
    prog.add_quadratic_objective((2.0 / gamma) * (a.T @ a), q=-(2.0 / gamma) * (a.T @ b), const=b @ b / gamma)
    prog.meta.update(variant="noisy", gamma=gamma)
    return prog


# ---------------------------------------------------------------- solving


@dataclass
class SdpSolution:
    w: np.ndarray
    moments: MomentVector
    q: np.ndarray
    z: np.ndarray
    objective: float
    status: str
    report: dict
    checks: dict = field(default_factory=dict)

    @property
    def t(self):
        return self.moments.toeplitz()

    @property
    def ok(self):
        return self.status == "optimal"


def _unpack_hermitian(p, n, real_only):
    out = np.diag(p[:n]).astype(complex)
    k = n
    for i in range(n):
        for j in range(i + 1, n):
            val = p[k]
            k += 1
            if not real_only:
                val = val + 1j * p[k]
                k += 1
            out[i, j] = val
            out[j, i] = np.conj(val)
    return out


def solve(program, basis, scheme, z_fixed=None, tol_gap=DEFAULT_TOL, tol_feas=DEFAULT_TOL, max_iter=200, strict=True):
    """Solve a program from this module and unpack it into an :class:`SdpSolution`.

    With ``strict`` set, infeasible, unbounded and failed solves raise
    :class:`SdpFailure`; near-optimal points are returned with their status.
    """
    sol = solve_conic(program, tol_gap=tol_gap, tol_feas=tol_feas, max_iter=max_iter)
    if strict and sol.status not in ("optimal", "near-optimal"):
        raise SdpFailure(sol.status, sol.report)
    meta = program.meta
    ll, mm = meta["l"], meta["m"]
    q_map, v_map = _alpha_maps(basis, scheme)
    objective = sol.objective
    if sol.status in ("optimal", "near-optimal"):
        objective = _rebalance(program, sol, q_map, mm, meta["e_index"])
    w = _unpack_hermitian(sol.values["W"], ll, meta["real_w"])
    alpha = sol.values["alpha"]
    moments = MomentVector(v_map @ alpha)
    q = (q_map @ alpha).reshape(mm, mm)
    if "Z" in sol.values:
        zp = sol.values["Z"]
        z = (zp[: mm * ll] + 1j * zp[mm * ll :]).reshape(mm, ll)
    else:
        z = np.asarray(z_fixed, complex)
    out = SdpSolution(w, moments, q, z, objective, sol.status, sol.report)
    out.checks = _invariant_checks(out, basis, meta["e_index"])
    return out


def _rebalance(program, sol, q_map, mm, e_index):
    """Exact minimization over the scaling ``W -> s W, Q -> Q / s``.

    The congruence ``diag(sqrt(s) I, I / sqrt(s))`` keeps the lifted block
    PSD, T and Psi(T) only scale, and Z is untouched.  So every constraint
    survives, and ``s = sqrt(e'Qe / tr W)`` turns the objective into
    ``sqrt(tr W * e'Qe)``, never above the solver's value.  Interior-point
    solutions are only balanced to about the square root of the gap, and this
    makes the optimality identity ``tr W = e'Qe`` hold to rounding.
    """
    x = sol.x
    w_sl, a_sl = program.blocks["W"], program.blocks["alpha"]
    ll = program.meta["l"]
    tr_w = float(np.sum(x[w_sl][:ll]))
    q_ee = float((q_map[e_index * (mm + 1)] @ x[a_sl]).real)
    if not (tr_w > 0 and q_ee > 0):
        return sol.objective
    scale = math.sqrt(q_ee / tr_w)
    x = x.copy()
    x[w_sl] *= scale
    x[a_sl] /= scale
    sol.x = x
    sol.values = {name: x[sl] for name, sl in program.blocks.items()}
    sol.report["rebalance_scale"] = scale
    return program.objective_value(x)


def _invariant_checks(sol, basis, e_index):
    q_diag = np.diag(sol.q)
    tr_w = float(np.trace(sol.w).real)
    q_ee = float(sol.q[e_index, e_index].real)
    t = sol.t
    lam_t = np.linalg.eigvalsh(t)
    lam_psi = np.linalg.eigvalsh(psi_operator(t, basis.theta0))
    scale = max(abs(sol.objective), 1e-300)
    return {
        "q_diag_spread": float(np.max(np.abs(q_diag - q_diag[0])) / max(abs(q_diag[0]), 1e-300)),
        "trace_identity_gap": abs(tr_w - q_ee) / scale,
        "trace_w": tr_w,
        "q_ee": q_ee,
        "t_min_eig": float(lam_t[0]),
        "psi_min_eig": float(lam_psi[0]),
        "t_trace": float(np.trace(t).real),
    }


def atomic_norm(z, basis, scheme, tol_gap=DEFAULT_TOL, tol_feas=DEFAULT_TOL, return_solution=False):
    """Atomic norm of a fixed lifted matrix ``z`` (M x L)."""
    z = np.asarray(z, complex)
    if z.ndim != 2 or z.shape[0] != scheme.m:
        raise ValueError("z must be M x L")
    if not np.all(np.isfinite(z)):
        raise ValueError("z has non-finite entries")
    prog = _lifted_program(basis, scheme, z.shape[1], z_fixed=z)
    sol = solve(prog, basis, scheme, z_fixed=z, tol_gap=tol_gap, tol_feas=tol_feas)
    return sol if return_solution else sol.objective


def solution_to_dict(sol):
    rep = {k: v for k, v in sol.report.items() if k != "psd_min_eig"}
    rep["psd_min_eig"] = dict(sol.report.get("psd_min_eig", {}))
    return {
        "schema": "blindsr.solution/1",
        "status": sol.status,
        "objective": sol.objective,
        "W": encode_complex(sol.w),
        "v": encode_complex(sol.moments.v),
        "Z": encode_complex(sol.z),
        "report": rep,
        "checks": sol.checks,
    }


def save_solution(sol, path, extra=None):
    doc = solution_to_dict(sol)
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
