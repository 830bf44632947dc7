"""Prolate spheroidal wave functions for the band-limited lifting SDP.

The functions are the eigenfunctions of the finite Fourier transform

    (xi r)(f) = integral_{-1}^{1} exp(1j * c * z * f) r(z) dz,   f in [-1, 1],

with bandwidth parameter ``c = pi * b_max``.  They are computed as Legendre
series from the commuting Sturm-Liouville operator

    L = -(1 - x^2) d^2/dx^2 + 2 x d/dx + c^2 x^2,

whose matrix in the normalized Legendre basis is tridiagonal and splits by
parity.  Every ``phi_j`` is real and orthonormal on [-1, 1], with sign fixed
by ``phi_j(0) > 0`` (even ``j``) or ``phi_j'(0) > 0`` (odd ``j``).

The eigenvalue ``lambda_0`` comes from the integral relation evaluated at
``f = 0``.  Higher eigenvalues use the ratio identity

    lambda_{n+1} / lambda_n = <phi_n', phi_{n+1}> / (1j c <x phi_n, phi_{n+1}>),

which keeps full relative precision far into the super-exponential decay,
where a fixed-point evaluation would only give absolute accuracy.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import legendre as leg

__all__ = [
    "METHOD_VERSION",
    "PswfBasis",
    "PhiMatrix",
    "PswfConvergenceError",
    "SingularPhiError",
    "build_basis",
    "evaluate_pswf",
    "phi_matrix",
    "h_vector",
    "select_order",
    "save_basis",
    "load_basis",
    "cached_basis",
]

METHOD_VERSION = "legendre-tridiagonal/1"
DEFAULT_EPSILON = 1e-10

# Legendre tail below this (relative to the largest coefficient) is treated
# as converged.
_TAIL_TOL = 1e-16


class PswfConvergenceError(RuntimeError):
    """Eigenvalues did not drop below the working precision in time."""


class SingularPhiError(np.linalg.LinAlgError):
    """The node matrix is singular to working precision."""

    def __init__(self, cond):
        super().__init__(f"node matrix is numerically singular (cond = {cond:.3e})")
        self.cond = cond


def _frozen(a):
    a = np.array(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class PswfBasis:
    """Truncated PSWF system phi_0 .. phi_{2d} for one bandlimit.

    ``coeffs[:, j]`` holds the ordinary Legendre-series coefficients of
    ``phi_j`` and ``eigenvalues[j]`` the complex eigenvalue of ``xi``.
    Instances compare and hash by identity and never mutate.
    """

    b_max: float
    epsilon: float
    d: int
    coeffs: np.ndarray
    eigenvalues: np.ndarray
    method_version: str = METHOD_VERSION
    # Eigenvalues beyond order 2d that were computed while selecting d.
    spectrum: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _frozen(self.coeffs))
        object.__setattr__(self, "eigenvalues", _frozen(self.eigenvalues))
        if self.spectrum is None:
            object.__setattr__(self, "spectrum", self.eigenvalues)
        else:
            object.__setattr__(self, "spectrum", _frozen(self.spectrum))
        if self.d < 1 or self.coeffs.shape[1] != 2 * self.d + 1:
            raise ValueError("basis must carry 2d+1 functions with d >= 1")

    @property
    def c(self):
        return math.pi * self.b_max

    @property
    def n_functions(self):
        return 2 * self.d + 1

    @property
    def theta0(self):
        """Half-width of the arc that carries the moment measure, c/d."""
        return self.c / self.d

    @property
    def n_legendre(self):
        return self.coeffs.shape[0]

    def values(self, f, orders=None):
        """Evaluate phi_j(f) for all requested orders.

        Returns an array of shape ``np.shape(f) + (n_orders,)``.
        """
        f = np.asarray(f, dtype=float)
        if np.any(np.abs(f) > 1.0 + 1e-12):
            raise ValueError("PSWF arguments must lie in [-1, 1]")
        c = self.coeffs if orders is None else self.coeffs[:, orders]
        out = leg.legval(f, c, tensor=True)
        return np.moveaxis(np.asarray(out), 0, -1)

    def derivatives(self, f, orders=None):
        f = np.asarray(f, dtype=float)
        c = self.coeffs if orders is None else self.coeffs[:, orders]
        out = leg.legval(f, leg.legder(c, axis=0), tensor=True)
        return np.moveaxis(np.asarray(out), 0, -1)


@dataclass(frozen=True, eq=False)
class PhiMatrix:
    """Node matrix ``entries[k, j] = phi_j((k - d) / d)``, k, j = 0..2d.

    The LU factorization is computed once and shared by every solve.
    """

    entries: np.ndarray
    lu: tuple
    cond: float

    def solve(self, rhs, trans=False):
        """Solve ``Phi x = rhs`` (or ``Phi^T x = rhs`` with ``trans``)."""
        return sla.lu_solve(self.lu, rhs, trans=1 if trans else 0)


def _tridiagonal(c, n):
    k = np.arange(n, dtype=float)
    diag = k * (k + 1) + c**2 * (2 * k * (k + 1) - 1) / ((2 * k + 3) * (2 * k - 1))
    off = c**2 * (k + 2) * (k + 1) / ((2 * k + 3) * np.sqrt((2 * k + 1) * (2 * k + 5)))
    return diag, off


def _legendre_eigensystem(c, n_orders, n_legendre):
    """Normalized-Legendre eigenvectors of the commuting operator.

    Returns ``beta`` of shape (n_legendre, n_orders); column ``n`` expands
    phi_n in the orthonormal Legendre functions sqrt(k + 1/2) P_k.
    """
    diag, off = _tridiagonal(c, n_legendre)
    beta = np.zeros((n_legendre, n_orders))
    for parity in (0, 1):
        idx = np.arange(parity, n_legendre, 2)
        orders = np.arange(parity, n_orders, 2)
        # eigenvalues of each parity block come out ascending, i.e. in order n
        _, vecs = sla.eigh_tridiagonal(
            diag[idx], off[idx][:-1], select="i", select_range=(0, len(orders) - 1)
        )
        beta[np.ix_(idx, orders)] = vecs
    return beta


def _eigensystem(c, n_orders):
    """Legendre coefficients and eigenvalues for orders 0..n_orders-1."""
    n_legendre = n_orders + int(1.5 * c) + 60
    for _ in range(6):
        beta = _legendre_eigensystem(c, n_orders, n_legendre)
        if np.max(np.abs(beta[-8:, :])) < _TAIL_TOL:
            break
        n_legendre = int(1.5 * n_legendre)
    else:
        raise PswfConvergenceError("Legendre expansion did not converge")

    k = np.arange(n_legendre)
    coeffs = beta * np.sqrt(k + 0.5)[:, None]

    at0 = leg.legval(0.0, coeffs)
    dat0 = leg.legval(0.0, leg.legder(coeffs, axis=0))
    lead = np.where(np.arange(n_orders) % 2 == 0, at0, dat0)
    sign = np.where(lead < 0, -1.0, 1.0)
    coeffs = coeffs * sign
    beta = beta * sign

    # Gauss rule exact for products of two series of this length
    x, w = leg.leggauss(n_legendre + 1)
    vals = leg.legval(x, coeffs, tensor=True).T
    dvals = leg.legval(x, leg.legder(coeffs, axis=0), tensor=True).T

    lam = np.empty(n_orders, dtype=complex)
    # integral of the normalized P_0 over [-1, 1] is sqrt(2)
    lam[0] = math.sqrt(2.0) * beta[0, 0] / leg.legval(0.0, coeffs[:, 0])
    for n in range(n_orders - 1):
        num = np.sum(w * dvals[:, n] * vals[:, n + 1])
        den = 1j * c * np.sum(w * x * vals[:, n] * vals[:, n + 1])
        lam[n + 1] = lam[n] * num / den
    return coeffs, lam


def select_order(eigenvalues, epsilon, b_max):
    """Truncation order d from the decay of |lambda_j|.

    ``d = min{ceil(j/2) : |lambda_j| < epsilon}``, raised to at least
    ``floor(b_max) + 1`` so that ``theta0 = c/d`` stays below pi.
    Returns None when no eigenvalue is below ``epsilon``.
    """
    below = np.flatnonzero(np.abs(eigenvalues) < epsilon)
    if below.size == 0:
        return None
    return max(math.ceil(below[0] / 2), math.floor(b_max) + 1)


def build_basis(b_max, epsilon=DEFAULT_EPSILON, max_order=None):
    """Build the PSWF basis for bandlimit ``b_max``.

    Parameters
    ----------
    b_max : float
        Bandlimit; the bandwidth parameter is ``c = pi * b_max``.
    epsilon : float
        Working precision used by the truncation rule.
    max_order : int, optional
        Highest eigenfunction order to try before giving up.

    Raises
    ------
    PswfConvergenceError
        If no eigenvalue up to ``max_order`` falls below ``epsilon``.
    """
    if not b_max > 0:
        raise ValueError("b_max must be positive")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    c = math.pi * b_max
    if max_order is None:
        max_order = int(2 * b_max) + 40 + int(4 * math.log10(1 / epsilon))

    coeffs, lam = _eigensystem(c, max_order + 1)
    d = select_order(lam, epsilon, b_max)
    if d is None:
        raise PswfConvergenceError(
            f"|lambda_j| >= {epsilon:g} for all j <= {max_order}; "
            "b_max too large for the configured maximum order"
        )
    if 2 * d > max_order:
        coeffs, lam = _eigensystem(c, 2 * d + 1)
    n = 2 * d + 1
    return PswfBasis(
        b_max=float(b_max),
        epsilon=float(epsilon),
        d=d,
        coeffs=coeffs[:, :n],
        eigenvalues=lam[:n],
        spectrum=lam,
    )


def evaluate_pswf(basis, j, f):
    """phi_j(f) for a single order and point."""
    if not 0 <= j < basis.n_functions:
        raise ValueError(f"order {j} outside 0..{basis.n_functions - 1}")
    if abs(f) > 1.0:
        raise ValueError("f must lie in [-1, 1]")
    return float(leg.legval(f, basis.coeffs[:, j]))


def phi_matrix(basis):
    """Node matrix with rows at the 2d+1 equispaced points of [-1, 1]."""
    d = basis.d
    nodes = np.arange(-d, d + 1) / d
    entries = basis.values(nodes)
    cond = np.linalg.cond(entries)
    if not np.isfinite(cond) or cond * np.finfo(float).eps >= 1.0:
        raise SingularPhiError(cond)
    lu = sla.lu_factor(entries)
    entries.flags.writeable = False
    return PhiMatrix(entries=entries, lu=lu, cond=float(cond))


def h_vector(basis, delta):
    """``h(k) = phi_k(delta)`` for k = 0..2d.

    ``delta`` is a normalized frequency difference ``(f_j - f_l) / b_max``.
    """
    if abs(delta) > 1.0 + 1e-12:
        raise ValueError(
            f"normalized frequency difference {delta!r} lies outside [-1, 1]"
        )
    return basis.values(float(np.clip(delta, -1.0, 1.0)))


# -- on-disk cache -----------------------------------------------------------


def save_basis(basis, path):
    meta = {
        "method_version": basis.method_version,
        "b_max": basis.b_max,
        "epsilon": basis.epsilon,
        "d": basis.d,
    }
    with open(path, "wb") as fh:
        np.savez(
            fh,
            meta=np.array(json.dumps(meta)),
            coeffs=basis.coeffs,
            eigenvalues=basis.eigenvalues,
            spectrum=basis.spectrum,
        )


def load_basis(path):
    """Load a cached basis, or None if it was written by another method version."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("method_version") != METHOD_VERSION:
            return None
        return PswfBasis(
            b_max=meta["b_max"],
            epsilon=meta["epsilon"],
            d=meta["d"],
            coeffs=data["coeffs"],
            eigenvalues=data["eigenvalues"],
            spectrum=data["spectrum"],
        )


def cached_basis(b_max, epsilon=DEFAULT_EPSILON, cache_dir=None):
    """build_basis with an optional directory cache keyed by (b_max, epsilon, version)."""
    if cache_dir is None:
        return build_basis(b_max, epsilon)
    key = f"pswf_{float(b_max)!r}_{float(epsilon)!r}_{METHOD_VERSION.replace('/', '-')}.npz"
    path = os.path.join(cache_dir, key)
    if os.path.exists(path):
        try:
            basis = load_basis(path)
        except (OSError, ValueError, KeyError):
            basis = None
        if basis is not None:
            return basis
    basis = build_basis(b_max, epsilon)
    os.makedirs(cache_dir, exist_ok=True)
    tmp = f"{path}.{os.getpid()}.tmp"
    save_basis(basis, tmp)
    os.replace(tmp, path)
    return basis
