"""Independent reference computations used by the test-suite.

Nothing in here imports the code under test.
"""

import mpmath as mp
import numpy as np
from numpy.polynomial import legendre as leg
from scipy.optimize import linear_sum_assignment


def dense_pswf_eigenvalues(c, n_nodes=2000):
    """Eigenvalues of the finite Fourier transform by Gauss-Legendre Nystrom.

    The kernel exp(1j c x t) is split into its cosine (even functions) and
    sine (odd functions) parts; each part is a real symmetric matrix on the
    positive half of a symmetric ``n_nodes`` rule.  Returned in no
    particular order.
    """
    x, w = leg.leggauss(n_nodes)
    half = n_nodes // 2
    x, w = x[half:], w[half:]
    sw = np.sqrt(w)
    xx = np.outer(x, x)
    even = np.linalg.eigvalsh(sw[:, None] * 2 * np.cos(c * xx) * sw[None, :])
    odd = np.linalg.eigvalsh(sw[:, None] * 2 * np.sin(c * xx) * sw[None, :])
    return np.concatenate([even.astype(complex), 1j * odd])


def _mp_gauss_legendre(n):
    """Positive nodes/weights of the n-point rule, refined in mpmath."""
    x0, _ = leg.leggauss(n)
    nodes, weights = [], []
    for xi in x0[n // 2 :]:
        x = mp.mpf(float(xi))
        for _ in range(4):
            p0, p1 = mp.mpf(1), x
            for k in range(2, n + 1):
                p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
            dp = n * (x * p1 - p0) / (x**2 - 1)
            x -= p1 / dp
        p0, p1 = mp.mpf(1), x
        for k in range(2, n + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = n * (x * p1 - p0) / (x**2 - 1)
        nodes.append(x)
        weights.append(2 / ((1 - x**2) * dp**2))
    return nodes, weights


def mp_pswf_eigenvalues(c, n_nodes, dps=30):
    """Same Nystrom discretization as ``dense_pswf_eigenvalues`` in extended precision.

    Needed to check tiny eigenvalues (~1e-10) to 1e-8 relative accuracy,
    which double-precision eigensolvers cannot deliver.
    """
    with mp.workdps(dps):
        nodes, weights = _mp_gauss_legendre(n_nodes)
        n = len(nodes)
        cc = mp.mpf(c)
        a_even = mp.matrix(n, n)
        a_odd = mp.matrix(n, n)
        for i in range(n):
            for k in range(i, n):
                s = 2 * mp.sqrt(weights[i] * weights[k])
                arg = cc * nodes[i] * nodes[k]
                a_even[i, k] = a_even[k, i] = s * mp.cos(arg)
                a_odd[i, k] = a_odd[k, i] = s * mp.sin(arg)
        even = mp.eigsy(a_even, eigvals_only=True)
        odd = mp.eigsy(a_odd, eigvals_only=True)
        out = [complex(float(e)) for e in even] + [1j * float(e) for e in odd]
    return np.array(out)


def match_eigenvalues(reference, candidates):
    """Relative error of each reference eigenvalue against its assigned candidate.

    Assignment minimizes total relative distance, so plateau eigenvalues
    that tie in modulus still pair up by sign/phase.
    """
    reference = np.asarray(reference)
    cost = np.abs(reference[:, None] - candidates[None, :]) / np.abs(reference)[:, None]
    rows, cols = linear_sum_assignment(cost)
    return cost[rows, cols]


def dense_d_rule(c, epsilon, b_max, n_nodes=2000):
    mags = np.sort(np.abs(dense_pswf_eigenvalues(c, n_nodes)))[::-1]
    j = int(np.flatnonzero(mags < epsilon)[0])
    return max(int(np.ceil(j / 2)), int(np.floor(b_max)) + 1)


def apply_finite_fourier(func, c, f, n_nodes=400):
    """(xi r)(f) by Gauss-Legendre quadrature for a vectorized callable r."""
    x, w = leg.leggauss(n_nodes)
    r = func(x)
    return np.exp(1j * c * np.outer(np.atleast_1d(f), x)) @ (w[:, None] * r)


def quadrature_gram(func, n_nodes=400):
    """Gram matrix of the columns returned by ``func(x)`` on [-1, 1]."""
    x, w = leg.leggauss(n_nodes)
    v = func(x)
    return v.T @ (w[:, None] * v)


def arc_measure_moments(thetas, masses, d):
    """First row of sum_k c_k omega(theta_k) omega(theta_k)^H, by direct sums."""
    return np.array(
        [sum(m * np.exp(-1j * k * t) for t, m in zip(thetas, masses)) for k in range(d + 1)]
    )


def toeplitz_by_loops(row):
    """Hermitian Toeplitz matrix T[p, q] = row[q - p], conj for q < p."""
    n = len(row)
    out = np.empty((n, n), dtype=complex)
    for p in range(n):
        for q in range(n):
            out[p, q] = row[q - p] if q >= p else np.conj(row[p - q])
    return out
