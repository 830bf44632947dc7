"""Small semidefinite-program container and solver adapter.

Programs are written over a single real decision vector ``x`` split into
named blocks.  Matrix-valued constraints are :class:`AffineExpr` objects,
``vec(E) = offset + coeffs @ x`` in row-major order.  Complex Hermitian
blocks are lowered to real symmetric ones with :func:`lower_hermitian`
before they reach the solver, so callers can think in complex arithmetic.

The numerical work is delegated to the CVXOPT cone solver.
"""

from __future__ import annotations

import contextlib
import io
import math
import re
import sys
import time
from dataclasses import dataclass, field

import cvxopt
import cvxopt.misc
import cvxopt.solvers
import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

__all__ = [
    "AffineExpr",
    "bmat",
    "lower_hermitian",
    "ConicProgram",
    "ConicSolution",
    "solve_conic",
    "dump_program",
    "NonHermitianError",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-8
HERMITIAN_TOL = 1e-10


class NonHermitianError(ValueError):
    pass


class AffineExpr:
    """Matrix-valued affine function of the decision vector."""

    def __init__(self, shape, coeffs, offset=None):
        self.shape = tuple(shape)
        size = self.shape[0] * self.shape[1]
        self.coeffs = sp.csr_matrix(coeffs)
        if self.coeffs.shape[0] != size:
            raise ValueError("coefficient rows do not match the expression shape")
        if offset is None:
            offset = np.zeros(size, dtype=self.coeffs.dtype)
        self.offset = np.asarray(offset).reshape(size)

    @classmethod
    def constant(cls, value, n_vars):
        value = np.atleast_2d(np.asarray(value))
        return cls(value.shape, sp.csr_matrix((value.size, n_vars), dtype=value.dtype), value.ravel())

    @classmethod
    def from_triplets(cls, shape, n_vars, rows, cols, vals):
        """Purely linear expression with ``coeffs[rows[i], cols[i]] += vals[i]``."""
        vals = np.asarray(vals)
        dtype = complex if np.iscomplexobj(vals) else float
        coeffs = sp.coo_matrix(
            (vals.astype(dtype), (np.asarray(rows), np.asarray(cols))),
            shape=(shape[0] * shape[1], n_vars),
        )
        return cls(shape, coeffs)

    @property
    def n_vars(self):
        return self.coeffs.shape[1]

    @property
    def is_complex(self):
        return np.iscomplexobj(self.coeffs.data) or np.iscomplexobj(self.offset)

    def value(self, x):
        return (self.offset + self.coeffs @ np.asarray(x)).reshape(self.shape)

    def _transpose_perm(self):
        p, q = self.shape
        return np.arange(p * q).reshape(p, q).T.ravel()

    @property
    def T(self):
        perm = self._transpose_perm()
        return AffineExpr(self.shape[::-1], self.coeffs[perm], self.offset[perm])

    @property
    def H(self):
        t = self.T
        return AffineExpr(t.shape, t.coeffs.conj(), np.conj(t.offset))

    @property
    def real(self):
        return AffineExpr(self.shape, self.coeffs.real, self.offset.real)

    @property
    def imag(self):
        return AffineExpr(self.shape, self.coeffs.imag, self.offset.imag)

    def _check(self, other):
        if self.shape != other.shape or self.n_vars != other.n_vars:
            raise ValueError("incompatible affine expressions")

    def __add__(self, other):
        if isinstance(other, AffineExpr):
            self._check(other)
            return AffineExpr(self.shape, self.coeffs + other.coeffs, self.offset + other.offset)
        other = np.broadcast_to(np.asarray(other), self.shape)
        return AffineExpr(self.shape, self.coeffs, self.offset + other.ravel())

    def __neg__(self):
        return AffineExpr(self.shape, -self.coeffs, -self.offset)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        return AffineExpr(self.shape, self.coeffs * scalar, self.offset * scalar)

    __rmul__ = __mul__

    def left(self, a):
        """``a @ E`` for a constant matrix ``a``."""
        a = np.atleast_2d(a)
        op = sp.kron(sp.csr_matrix(a), sp.identity(self.shape[1]), format="csr")
        return AffineExpr((a.shape[0], self.shape[1]), op @ self.coeffs, op @ self.offset)

    def right(self, b):
        """``E @ b`` for a constant matrix ``b``."""
        b = np.atleast_2d(b)
        op = sp.kron(sp.identity(self.shape[0]), sp.csr_matrix(b.T), format="csr")
        return AffineExpr((self.shape[0], b.shape[1]), op @ self.coeffs, op @ self.offset)

    def congruence(self, a):
        """``a @ E @ a^H``."""
        return self.left(a).right(np.conj(np.atleast_2d(a)).T)

    def trace_coeffs(self):
        """Linear coefficients and constant of tr(E)."""
        n = min(self.shape)
        idx = np.arange(n) * self.shape[1] + np.arange(n)
        return np.asarray(self.coeffs[idx].sum(axis=0)).ravel(), self.offset[idx].sum()

    def entry_coeffs(self, i, j):
        row = i * self.shape[1] + j
        return self.coeffs[row].toarray().ravel(), self.offset[row]


def bmat(blocks):
    """Assemble a block matrix from a nested list of expressions."""
    n_vars = blocks[0][0].n_vars
    row_heights = [row[0].shape[0] for row in blocks]
    col_widths = [b.shape[1] for b in blocks[0]]
    p, q = sum(row_heights), sum(col_widths)
    coeff_parts, offset = [], np.zeros(p * q, dtype=complex)
    r0 = 0
    any_complex = False
    for row, h in zip(blocks, row_heights):
        c0 = 0
        for blk, w in zip(row, col_widths):
            if blk.shape != (h, w) or blk.n_vars != n_vars:
                raise ValueError("block shapes do not line up")
            any_complex |= blk.is_complex
            ii, jj = np.divmod(np.arange(h * w), w)
            target = (r0 + ii) * q + (c0 + jj)
            perm = sp.csr_matrix(
                (np.ones(h * w), (target, np.arange(h * w))), shape=(p * q, h * w)
            )
            coeff_parts.append(perm @ blk.coeffs)
            offset[target] = blk.offset
            c0 += w
        r0 += h
    coeffs = sum(coeff_parts[1:], coeff_parts[0])
    if not any_complex:
        coeffs = coeffs.real
        offset = offset.real
    return AffineExpr((p, q), coeffs, offset)


def _absmax(m):
    return float(abs(m).max()) if m.nnz else 0.0


def lower_hermitian(block, tol=HERMITIAN_TOL):
    """Real symmetric embedding ``[[Re, -Im], [Im, Re]]`` of a Hermitian block.

    Works on numeric arrays and on :class:`AffineExpr`.  The embedding is
    positive semidefinite exactly when the block is, with every eigenvalue
    duplicated.
    """
    if isinstance(block, AffineExpr):
        if block.shape[0] != block.shape[1]:
            raise NonHermitianError("block must be square")
        h = block.H
        scale = 1.0 + max(_absmax(block.coeffs), np.max(np.abs(block.offset), initial=0.0))
        diff = max(
            _absmax(block.coeffs - h.coeffs),
            np.max(np.abs(block.offset - h.offset), initial=0.0),
        )
        if diff > tol * scale:
            raise NonHermitianError(f"block is not Hermitian (asymmetry {diff:.2e})")
        if not block.is_complex:
            return block
        re, im = block.real, block.imag
        return bmat([[re, -im], [im, re]])

    a = np.atleast_2d(np.asarray(block))
    if a.shape[0] != a.shape[1]:
        raise NonHermitianError("block must be square")
    if np.max(np.abs(a - a.conj().T), initial=0.0) > tol * (1.0 + np.max(np.abs(a), initial=0.0)):
        raise NonHermitianError("block is not Hermitian")
    if not np.iscomplexobj(a):
        return np.block([[a, np.zeros_like(a)], [np.zeros_like(a), a]])
    return np.block([[a.real, -a.imag], [a.imag, a.real]])


@dataclass
class PsdConstraint:
    name: str
    expr: AffineExpr  # real symmetric


@dataclass
class ConicProgram:
    """minimize c.x + x'Px/2 + const  s.t.  A_eq x = b_eq,  every PSD block >= 0.

    Declare all variable blocks before building expressions against them.
    """

    blocks: dict = field(default_factory=dict)
    n: int = 0
    c: np.ndarray = None
    const: float = 0.0
    quad: sp.spmatrix = None
    eq_rows: list = field(default_factory=list)
    psd: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_variable(self, name, size):
        if name in self.blocks:
            raise ValueError(f"variable {name!r} already declared")
        if self.eq_rows or self.psd:
            raise RuntimeError("declare variables before adding constraints")
        self.blocks[name] = slice(self.n, self.n + size)
        self.n += size
        return self.blocks[name]

    def add_linear_objective(self, coeffs, const=0.0):
        coeffs = np.asarray(coeffs, dtype=float)
        self.c = coeffs.copy() if self.c is None else self.c + coeffs
        self.const += float(const)

    def add_quadratic_objective(self, p, q=None, const=0.0):
        """Adds ``x' p x / 2 + q.x + const`` with ``p`` symmetric PSD."""
        p = sp.csc_matrix(p, shape=(self.n, self.n))
        self.quad = p if self.quad is None else self.quad + p
        if q is not None:
            self.add_linear_objective(q)
        self.const += float(const)

    def add_equality(self, a, b):
        a = sp.csr_matrix(a, shape=(np.size(b), self.n))
        self.eq_rows.append((a, np.asarray(b, dtype=float).ravel()))

    def add_psd(self, name, expr):
        """Require ``expr >= 0``; complex expressions are lowered here."""
        if expr.n_vars != self.n:
            raise ValueError("expression built against a different variable layout")
        self.psd.append(PsdConstraint(name, lower_hermitian(expr)))

    @property
    def linear_objective(self):
        return np.zeros(self.n) if self.c is None else self.c

    def objective_value(self, x):
        x = np.asarray(x, dtype=float)
        val = self.linear_objective @ x + self.const
        if self.quad is not None:
            val += 0.5 * x @ (self.quad @ x)
        return float(val)

    def equality_system(self):
        if not self.eq_rows:
            return sp.csr_matrix((0, self.n)), np.zeros(0)
        return (
            sp.vstack([a for a, _ in self.eq_rows], format="csr"),
            np.concatenate([b for _, b in self.eq_rows]),
        )


@dataclass
class ConicSolution:
    """Solver outcome.

    ``status`` is one of ``optimal``, ``near-optimal``, ``infeasible``,
    ``unbounded`` or ``numerical-failure``.
    """

    x: np.ndarray
    values: dict
    objective: float
    status: str
    report: dict

    @property
    def ok(self):
        return self.status == "optimal"


_STATUS = {
    "optimal": "optimal",
    "primal infeasible": "infeasible",
    "dual infeasible": "unbounded",
}

def _operator(mat, s_offsets=()):
    """CVXOPT-style callable ``y := alpha * op(A) x + beta * y`` for a sparse A.

    Building a cvxopt.spmatrix with a million entries takes seconds, while
    scipy's matvec is all conelp needs once the KKT solver is custom.
    """
    mat = sp.csr_matrix(mat)
    mat_t = mat.T.tocsr()

    def apply(x, y, alpha=1.0, beta=0.0, trans="N"):
        xv = np.array(x).ravel()
        if trans == "N":
            out = alpha * (mat @ xv)
        else:
            # conelp hands over PSD blocks with only the lower triangle valid
            out = alpha * (mat_t @ _sym_from_lower(xv, s_offsets))
        if beta != 0.0:
            out += beta * np.array(y).ravel()
        y[:] = cvxopt.matrix(out)

    return apply


def _quad_factor(quad, n):
    """``R`` with ``x'Px / 2 = |R x|^2 / 2`` for the PSD quadratic term."""
    lam, vec = np.linalg.eigh(quad.toarray())
    if lam[0] < -1e-9 * max(1.0, lam[-1]):
        raise ValueError("quadratic objective is not positive semidefinite")
    keep = lam > 1e-14 * max(1.0, lam[-1])
    return (np.sqrt(lam[keep])[:, None] * vec[:, keep].T).reshape(-1, n)


def _assemble(program):
    """Cone data ``G x + s = h`` with the quadratic term moved to an epigraph.

    With a quadratic term an extra scalar ``s`` is appended to ``x``.  The
    part of the linear objective in the range of R' is folded into the
    square, ``x'Px/2 + c.x = |R x + r|^2 / 2 + c_rest.x - |r|^2 / 2``, so
    the large constants of a least-squares penalty cancel before the solver
    sees them.  ``|R x + r|^2 <= 2 s`` becomes the second-order cone
    ``|(2 R x + 2 r, 2 s - 1)| <= 2 s + 1``.  The last return value is the
    constant dropped from the objective.
    """
    n = program.n
    extra = 1 if program.quad is not None else 0
    n_tot = n + extra
    lin = np.array(program.linear_objective, dtype=float)
    shift = 0.0
    g_parts, h_parts, dims = [], [], {"l": 0, "q": [], "s": []}
    if extra:
        r = _quad_factor(program.quad, n)
        k = r.shape[0]
        # rows of r are orthogonal, so this is the least-squares split of lin
        rr = (r @ lin) / np.einsum("ij,ij->i", r, r)
        lin = lin - r.T @ rr
        shift = -0.5 * float(rr @ rr)
        g = np.zeros((k + 2, n_tot))
        g[0, n] = -2.0
        g[1 : k + 1, :n] = -2.0 * r
        g[k + 1, n] = -2.0
        h = np.zeros(k + 2)
        h[0], h[k + 1] = 1.0, -1.0
        h[1 : k + 1] = 2.0 * rr
        g_parts.append(sp.csr_matrix(g))
        h_parts.append(h)
        dims["q"].append(k + 2)
    for con in program.psd:
        m = con.expr.shape[0]
        tr = np.arange(m * m).reshape(m, m).T.ravel()
        coeffs = con.expr.coeffs.real
        sym = 0.5 * (coeffs + coeffs[tr])
        off = con.expr.offset.real
        if extra:
            sym = sp.hstack([sym, sp.csr_matrix((m * m, 1))], format="csr")
        g_parts.append(-sym)
        h_parts.append(0.5 * (off + off[tr]))
        dims["s"].append(m)
    a_eq, b_eq = program.equality_system()
    if extra:
        a_eq = sp.hstack([a_eq, sp.csr_matrix((a_eq.shape[0], 1))], format="csr")
    g_all = sp.vstack(g_parts, format="csr") if g_parts else sp.csr_matrix((0, n_tot))
    h_all = np.concatenate(h_parts) if h_parts else np.zeros(0)
    c = np.concatenate([lin, np.ones(extra)])
    return c, g_all, h_all, dims, a_eq, b_eq, shift


def _sym_from_lower(vec, offsets):
    """Mirror the lower triangle of each column-major PSD block in ``vec``."""
    for off, n in offsets:
        blk = vec[off : off + n * n].reshape(n, n, order="F")
        low = np.tril(blk)
        vec[off : off + n * n] = (low + np.tril(blk, -1).T).ravel(order="F")
    return vec


class _ProgressMonitor(io.TextIOBase):
    """Reads CVXOPT's iteration log and flags a stall.

    Near the precision floor CVXOPT keeps iterating and the iterate drifts
    away again.  Once the merit has not halved for ``patience`` iterations
    the KKT solver raises, and conelp returns the current point.
    """

    LINE = re.compile(r"^\s*(\d+):\s+(\S+)\s+(\S+)\s+(\S+)\s+(\S+)\s+(\S+)")

    def __init__(self, tol_gap, tol_feas, echo=False, patience=4):
        self.tol_gap, self.tol_feas = tol_gap, tol_feas
        self.echo, self.patience = echo, patience
        self.best, self.since_best, self.stop = math.inf, 0, False
        self.history = []
        self._buf = ""

    def write(self, text):
        if self.echo:
            sys.__stdout__.write(text)
        self._buf += text
        *lines, self._buf = self._buf.split("\n")
        for line in lines:
            m = self.LINE.match(line)
            if m:
                self._update(*(float(v) for v in m.groups()[1:]))
        return len(text)

    def _update(self, pcost, dcost, gap, pres, dres):
        relgap = gap / max(1.0, abs(pcost))
        merit = max(pres / self.tol_feas, dres / self.tol_feas, relgap / self.tol_gap)
        self.history.append(merit)
        if merit < 0.5 * self.best:
            self.best, self.since_best = merit, 0
        else:
            self.since_best += 1
        # only near convergence; early plateaus are normal
        if self.best < 1e4 and self.since_best >= self.patience:
            self.stop = True


class _StructuredKKT:
    """KKT solver for ``conelp`` that exploits sparse PSD-block columns.

    Same elimination as ``cvxopt.misc.kkt_chol``: scale G by the inverse NT
    scaling, form ``H = Gs' Gs``, remove the equalities with a QR
    factorization of A' and Cholesky-factor what is left.  The gain is in
    building ``Gs``.  For a PSD block ``W^{-T}(U) = rti' U rti``; columns with
    a few nonzeros (the W and Z variables) are sums of a few rank-one terms
    ``rti[p] rti[q]'`` and never need the O(s^3) congruence.
    """

    DENSE_FACTOR = 4  # columns with more than DENSE_FACTOR * s entries count as dense

    def __init__(self, g, dims, a, monitor=None):
        self.monitor = monitor
        g = sp.csr_matrix(g)
        self.n = g.shape[1]
        self.n_lq = dims["l"] + sum(dims["q"])
        self.g_lq = g[: self.n_lq].toarray()
        self.blocks = []
        off = self.n_lq
        for n in dims["s"]:
            blk = g[off : off + n * n].tocsc()
            nnz = np.diff(blk.indptr)
            dense = np.flatnonzero(nnz > self.DENSE_FACTOR * n)
            sparse_cols = np.flatnonzero((nnz > 0) & (nnz <= self.DENSE_FACTOR * n))
            # pad the sparse columns to a common entry count for batched products
            width = int(nnz[sparse_cols].max(initial=0))
            pad_p = np.zeros((len(sparse_cols), width), dtype=int)
            pad_q = np.zeros_like(pad_p)
            pad_v = np.zeros(pad_p.shape)
            for i, j in enumerate(sparse_cols):
                lo, hi = blk.indptr[j], blk.indptr[j + 1]
                pad_p[i, : hi - lo], pad_q[i, : hi - lo] = np.divmod(blk.indices[lo:hi], n)
                pad_v[i, : hi - lo] = blk.data[lo:hi]
            ia, ib = np.tril_indices(n)
            self.blocks.append(
                {
                    "n": n,
                    "off": off,
                    "flat": ia * n + ib,
                    "ia": ia,
                    "ib": ib,
                    "wgt": np.where(ia == ib, 1.0, math.sqrt(2.0)),
                    "dense": dense,
                    "dense_mats": blk[:, dense].toarray().T.reshape(len(dense), n, n),
                    "sparse": sparse_cols,
                    "pad": (pad_p, pad_q, pad_v),
                }
            )
            off += n * n
        self.s_offsets = [(b["off"], b["n"]) for b in self.blocks]
        a = sp.csr_matrix(a).toarray() if a is not None else np.zeros((0, self.n))
        self.p = a.shape[0]
        q_full, r_full = np.linalg.qr(a.T, mode="complete")
        self.qa = q_full
        self.ra = r_full[: self.p]

    def scaled_g(self, w):
        """``Gs' = (W^{-T} G)'`` with PSD rows in packed, sqrt2-weighted storage."""
        parts = []
        if self.n_lq:
            gs = cvxopt.matrix(self.g_lq)
            w_lq = {k: w[k] for k in ("d", "di", "v", "beta")}
            w_lq["r"], w_lq["rti"] = [], []
            cvxopt.misc.scale(gs, w_lq, trans="T", inverse="I")
            parts.append(np.array(gs).T)
        for blk, rti in zip(self.blocks, w["rti"]):
            rti = np.array(rti)
            n, flat, wgt = blk["n"], blk["flat"], blk["wgt"]
            gst = np.zeros((self.n, len(flat)))
            if len(blk["dense"]):
                scaled = rti.T @ blk["dense_mats"] @ rti
                gst[blk["dense"]] = scaled.reshape(len(scaled), -1)[:, flat] * wgt
            if len(blk["sparse"]):
                pad_p, pad_q, pad_v = blk["pad"]
                u = rti[pad_p] * pad_v[..., None]
                scaled = np.matmul(u.transpose(0, 2, 1), rti[pad_q])
                gst[blk["sparse"]] = scaled.reshape(len(scaled), -1)[:, flat] * wgt
            parts.append(gst)
        return np.hstack(parts) if parts else np.zeros((self.n, 0))

    def schur(self, w):
        gst = self.scaled_g(w)
        return gst @ gst.T

    def _pack(self, v):
        out = [v[: self.n_lq]]
        for blk in self.blocks:
            n, off = blk["n"], blk["off"]
            out.append(v[off : off + n * n].reshape(n, n, order="F")[blk["ia"], blk["ib"]] * blk["wgt"])
        return np.concatenate(out)

    def _unpack(self, v):
        out = [v[: self.n_lq]]
        pos = self.n_lq
        for blk in self.blocks:
            n, ia, ib = blk["n"], blk["ia"], blk["ib"]
            m = np.zeros((n, n))
            vals = v[pos : pos + len(ia)] / blk["wgt"]
            m[ia, ib] = vals
            m[ib, ia] = vals
            out.append(m.ravel(order="F"))
            pos += len(ia)
        return np.concatenate(out)

    def __call__(self, w):
        if self.monitor is not None and self.monitor.stop:
            raise ArithmeticError("stalled")
        gst = self.scaled_g(w)
        p = self.p
        h = gst @ gst.T
        k = self.qa.T @ h @ self.qa if p else h
        try:
            k22 = la.cho_factor(k[p:, p:])
        except la.LinAlgError as exc:
            # CVXOPT stops cleanly on ArithmeticError and keeps the last iterate
            raise ArithmeticError(str(exc)) from exc

        def solve(x, y, z):
            bz = cvxopt.matrix(np.array(z))
            cvxopt.misc.scale(bz, w, trans="T", inverse="I")
            # CVXOPT only keeps the lower triangle of PSD blocks meaningful
            bzp = self._pack(_sym_from_lower(np.array(bz).ravel(), self.s_offsets))
            rhs = np.array(x).ravel() + gst @ bzp
            if p:
                rhs = self.qa.T @ rhs
                v = la.solve_triangular(self.ra, np.array(y).ravel(), trans="T")
                wv = la.cho_solve(k22, rhs[p:] - k[p:, :p] @ v)
                uy = la.solve_triangular(self.ra, rhs[:p] - k[:p, :p] @ v - k[:p, p:] @ wv)
                ux = self.qa @ np.concatenate([v, wv])
                y[:] = cvxopt.matrix(uy)
            else:
                ux = la.cho_solve(k22, rhs)
            x[:] = cvxopt.matrix(ux)
            z[:] = cvxopt.matrix(self._unpack(gst.T @ ux - bzp))

        return solve


def solve_conic(program, tol_gap=DEFAULT_TOL, tol_feas=DEFAULT_TOL, max_iter=100, verbose=False):
    """Solve ``program`` with CVXOPT and check the returned point."""
    c, g, h, dims, a_eq, b_eq, shift = _assemble(program)
    monitor = _ProgressMonitor(tol_gap, tol_feas, echo=verbose)
    kkt = _StructuredKKT(g, dims, a_eq if a_eq.shape[0] else None, monitor)
    args = [cvxopt.matrix(c), _operator(g, kkt.s_offsets), cvxopt.matrix(h), dims]
    if a_eq.shape[0]:
        args += [_operator(a_eq), cvxopt.matrix(b_eq)]
    else:
        args += [_operator(sp.csr_matrix((0, g.shape[1]))), cvxopt.matrix(np.zeros(0))]
    opts = {
        "show_progress": True,
        "abstol": tol_gap,
        "reltol": tol_gap,
        # CVXOPT's feastol also bounds the dual residual, which sits near 2e-8
        # on the larger lifted programs; the checks below hold the primal side
        # to tol_feas
        "feastol": 10.0 * tol_feas,
        "maxiters": max_iter,
        "refinement": 3,
    }
    t0 = time.perf_counter()
    try:
        with contextlib.redirect_stdout(monitor):
            sol = cvxopt.solvers.conelp(*args, kktsolver=kkt, options=opts)
    except (ArithmeticError, ValueError) as exc:
        # singular KKT systems surface as exceptions
        elapsed = time.perf_counter() - t0
        report = {"solver": "cvxopt", "solver_status": f"error: {exc}", "solve_time": elapsed}
        x = np.full(program.n, np.nan)
        values = {name: x[sl] for name, sl in program.blocks.items()}
        return ConicSolution(x, values, math.nan, "numerical-failure", report)
    elapsed = time.perf_counter() - t0

    raw = sol["status"]
    pres = sol.get("primal infeasibility")
    dres = sol.get("dual infeasibility")
    # 'unknown' covers the iteration cap and stalls; the residuals tell them apart
    status = _STATUS.get(raw, "near-optimal")
    if status in ("infeasible", "unbounded") or sol["x"] is None:
        x = np.full(program.n, np.nan)
    else:
        x = np.array(sol["x"]).ravel()[: program.n]
    finite = bool(np.all(np.isfinite(x)))
    if status == "near-optimal" and not finite:
        status = "numerical-failure"
    objective = program.objective_value(x) if finite else math.nan
    dual = sol.get("dual objective")
    dual_objective = float(dual) + program.const + shift if dual is not None else math.nan

    eq_res, min_eigs, worst_psd = math.nan, {}, math.nan
    if finite:
        eq_res = float(np.max(np.abs(program.equality_system()[0] @ x - b_eq), initial=0.0))
        worst_psd = 0.0
        for con in program.psd:
            s = con.expr.value(x).real
            ev = np.linalg.eigvalsh(0.5 * (s + s.T))
            min_eigs[con.name] = float(ev[0])
            worst_psd = max(worst_psd, float(-ev[0] / (1.0 + np.max(np.abs(ev)))))
    gap = abs(objective - dual_objective)
    report = {
        "solver": "cvxopt",
        "solver_status": raw,
        "iterations": int(sol.get("iterations", 0)),
        "stalled": monitor.stop,
        "solve_time": elapsed,
        "primal_residual": pres,
        "dual_residual": dres,
        "dual_objective": dual_objective,
        "duality_gap": gap,
        "equality_residual": eq_res,
        "psd_violation": worst_psd,
        "psd_min_eig": min_eigs,
    }
    if status in ("optimal", "near-optimal") and finite:
        # the returned point is judged by these checks, whatever the exit reason
        checks_ok = (
            worst_psd <= tol_feas
            and eq_res <= tol_feas * (1.0 + np.max(np.abs(b_eq), initial=0.0))
            and gap <= tol_gap * (1.0 + abs(objective))
        )
        status = "optimal" if checks_ok else "near-optimal"
    values = {name: x[sl] for name, sl in program.blocks.items()}
    return ConicSolution(x=x, values=values, objective=objective, status=status, report=report)


def dump_program(program, fh):
    """Write a program as plain-text sparse triplets.

    Format, one record per line, indices zero-based::

        blindsr-conic 1
        vars <n>
        block <name> <start> <stop>
        const <value>
        c <j> <value>
        P <i> <j> <value>                       (upper triangle)
        eq <row> <j> <value>                    (A_eq)
        eqb <row> <value>                       (b_eq)
        psd <name> <dim>                        (starts a PSD block)
        F <entry> <j> <value>                   (row-major entry of the block)
        F0 <entry> <value>                      (constant part)
    """
    fh.write("blindsr-conic 1\n")
    fh.write(f"vars {program.n}\n")
    for name, sl in program.blocks.items():
        fh.write(f"block {name} {sl.start} {sl.stop}\n")
    fh.write(f"const {float(program.const)!r}\n")
    for j, v in enumerate(program.linear_objective):
        if v != 0:
            fh.write(f"c {j} {float(v)!r}\n")
    if program.quad is not None:
        pu = sp.triu(program.quad, format="coo")
        for i, j, v in zip(pu.row, pu.col, pu.data):
            fh.write(f"P {i} {j} {float(v)!r}\n")
    a_eq, b_eq = program.equality_system()
    ac = a_eq.tocoo()
    for i, j, v in zip(ac.row, ac.col, ac.data):
        fh.write(f"eq {i} {j} {float(v)!r}\n")
    for i, v in enumerate(b_eq):
        fh.write(f"eqb {i} {float(v)!r}\n")
    for con in program.psd:
        fh.write(f"psd {con.name} {con.expr.shape[0]}\n")
        fc = con.expr.coeffs.real.tocoo()
        for i, j, v in zip(fc.row, fc.col, fc.data):
            if v != 0:
                fh.write(f"F {i} {j} {float(v)!r}\n")
        for i, v in enumerate(con.expr.offset.real):
            if v != 0:
                fh.write(f"F0 {i} {float(v)!r}\n")
