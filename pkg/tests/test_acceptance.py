"""Acceptance suite, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) and then
asserts the criterion at its stated tolerance.
"""

import math
import time

import numpy as np
import pytest

from blindsr.atomic_sdp import atomic_norm, moments_from_measure, psi_operator, q_from_moments
from blindsr.experiments import CSV_COLUMNS, preset, run_monte_carlo, trend_ok, trials_csv, write_results
from blindsr.localization import tau_to_theta, vandermonde_recover
from blindsr.pswf import build_basis
from blindsr.signal_model import sample_frequencies, steering_matrix

from oracles import (
    apply_finite_fourier,
    arc_measure_moments,
    match_eigenvalues,
    mp_pswf_eigenvalues,
    quadrature_gram,
    toeplitz_by_loops,
)

NON_TIMING = [c for c in CSV_COLUMNS if c != "solve_ms"]


def test_criterion_1_pswf_correctness(acceptance_report):
    t0 = time.perf_counter()
    worst = {"gram": 0.0, "residual": 0.0, "eig": 0.0}
    for b_max in (4.0, 8.0, 16.0):
        basis = build_basis(b_max)
        gram = quadrature_gram(basis.values, n_nodes=400)
        worst["gram"] = max(worst["gram"], np.max(np.abs(gram - np.eye(basis.n_functions))))
        grid = np.linspace(-1, 1, 201)
        applied = apply_finite_fourier(basis.values, basis.c, grid, n_nodes=400)
        res = np.max(np.abs(applied - basis.values(grid) * basis.eigenvalues)) / abs(basis.eigenvalues[0])
        worst["residual"] = max(worst["residual"], res)
        # extended-precision Nystrom reference, so eigenvalues near epsilon are resolved
        n_nodes = 2 * (int(basis.c) // 2 + 30)
        ref = mp_pswf_eigenvalues(basis.c, n_nodes, dps=30)
        keep = np.abs(basis.eigenvalues) > basis.epsilon
        worst["eig"] = max(worst["eig"], match_eigenvalues(basis.eigenvalues[keep], ref).max())
    elapsed = time.perf_counter() - t0
    ok = worst["gram"] < 1e-8 and worst["residual"] < 1e-6 and worst["eig"] < 1e-8 and elapsed < 30
    acceptance_report(1, ok, "PSWF correctness",
                      f"|G-I|={worst['gram']:.1e} residual={worst['residual']:.1e} eig={worst['eig']:.1e} t={elapsed:.1f}s")
    assert ok


def test_criterion_2_forward_oracle(acceptance_report):
    t0 = time.perf_counter()
    basis = build_basis(8.0)
    tol = 10 * basis.epsilon
    rng = np.random.default_rng(20)
    worst_q, worst_psd = 0.0, 0.0
    for _ in range(20):
        k = int(rng.integers(1, 5))
        taus = rng.uniform(-0.5, 0.5, k)
        masses = rng.uniform(0.1, 2.0, k)
        scheme = sample_frequencies(12, 8.0, rng)
        mv = moments_from_measure(taus, masses, basis)
        q = q_from_moments(mv, basis, scheme)
        c = steering_matrix(taus, scheme)
        direct = (c * masses) @ c.conj().T
        worst_q = max(worst_q, np.max(np.abs(q - direct)) / masses.sum())
        t = mv.toeplitz()
        tr = np.trace(t).real
        low = min(np.linalg.eigvalsh(t)[0], np.linalg.eigvalsh(psi_operator(t, basis.theta0))[0]) / tr
        worst_psd = min(worst_psd, low)
    elapsed = time.perf_counter() - t0
    ok_q = worst_q <= tol
    ok_psd = worst_psd >= -1e-8
    ok = ok_q and ok_psd and elapsed < 60
    acceptance_report(2, ok, "forward oracle for Q",
                      f"max|Q-direct|/sum(c)={worst_q:.2e} vs {tol:.0e}; min eig/trace={worst_psd:.1e}; t={elapsed:.1f}s")
    assert ok_psd
    assert ok_q, f"entrywise error {worst_q:.2e} * sum(c) exceeds 10 eps = {tol:.0e}"


def test_criterion_3_arc_support_separation(acceptance_report):
    rng = np.random.default_rng(30)
    basis = build_basis(8.0)
    hits, worst = 0, -np.inf
    for _ in range(20):
        k = int(rng.integers(1, 4))
        mag = rng.uniform(basis.theta0, math.pi, k)
        thetas = mag * rng.choice([-1.0, 1.0], k)
        t = toeplitz_by_loops(arc_measure_moments(thetas, rng.uniform(0.5, 2.0, k), basis.d))
        low = np.linalg.eigvalsh(psi_operator(t, basis.theta0))[0] / np.trace(t).real
        worst = max(worst, low)
        hits += low < -1e-6
    ok = hits == 20
    acceptance_report(3, ok, "arc-support separation", f"{hits}/20 negative, largest min eig/trace={worst:.2e}")
    assert ok


def _separated(rng, k, lo, hi, gap):
    while True:
        x = np.sort(rng.uniform(lo, hi, k))
        if k == 1 or np.min(np.diff(x)) >= gap:
            return x


def test_criterion_4_vandermonde_exactness(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(40)
    bases = {b: build_basis(b) for b in (4.0, 8.0, 16.0)}
    tau_err = mass_err = 0.0
    for _ in range(100):
        b_max = float(rng.choice(list(bases)))
        d = bases[b_max].d
        k = int(rng.integers(1, min(d // 2, int(b_max // 2)) + 1))
        # separation 2 pi / d in theta is 1 / b_max in tau
        taus = _separated(rng, k, -0.5, 0.5, 1.0 / b_max)
        masses = rng.uniform(0.5, 2.0, k)
        t = toeplitz_by_loops(arc_measure_moments(tau_to_theta(taus, b_max, d), masses, d))
        res = vandermonde_recover(t, k, b_max)
        tau_err = max(tau_err, np.max(np.abs(res.taus - taus)))
        mass_err = max(mass_err, np.max(np.abs(res.masses - masses)))
    elapsed = time.perf_counter() - t0
    ok = tau_err < 1e-9 and mass_err < 1e-9 and elapsed < 10
    acceptance_report(4, ok, "Vandermonde exactness", f"tau err={tau_err:.1e} mass err={mass_err:.1e} t={elapsed:.1f}s")
    assert ok


def test_criterion_5_single_atom_identity(acceptance_report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(50)
    bases = {8.0: build_basis(8.0), 16.0: build_basis(16.0)}
    rel_err = trace_gap = 0.0
    for i in range(20):
        b_max = (8.0, 16.0)[i % 2]
        scheme = sample_frequencies(10, b_max, rng)
        tau = rng.uniform(-0.5, 0.5)
        a = rng.standard_normal() + 1j * rng.standard_normal()
        h = rng.standard_normal(2)
        z = a * np.outer(steering_matrix([tau], scheme)[:, 0], h)
        sol = atomic_norm(z, bases[b_max], scheme, return_solution=True)
        coeff = abs(a) * np.linalg.norm(h)
        rel_err = max(rel_err, abs(sol.objective - coeff) / coeff)
        trace_gap = max(trace_gap, abs(np.trace(sol.w).real - sol.q[0, 0].real) / sol.objective)
    elapsed = time.perf_counter() - t0
    ok = rel_err < 1e-4 and trace_gap <= 1e-6 and elapsed < 120
    acceptance_report(5, ok, "single-atom identity",
                      f"rel err={rel_err:.1e} |TrW-e'Qe|/obj={trace_gap:.1e} t={elapsed:.1f}s")
    assert ok


@pytest.fixture(scope="module")
def noiseless_run():
    return run_monte_carlo(preset("noiseless", seed=600))


def test_criterion_6_noiseless_recovery(acceptance_report, noiseless_run):
    a = noiseless_run.aggregates[0]
    ok = a["success_rate"] >= 0.9 and a["median_nmse"] < 1e-4
    acceptance_report(6, ok, "noiseless end-to-end recovery (B=16, M=14, K=3, L=2)",
                      f"success={a['success_rate']:.2f} median NMSE={a['median_nmse']:.1e} over {a['n']} trials")
    assert a["n"] == 20
    assert ok


@pytest.mark.slow
def test_criterion_7_noisy_trend(acceptance_report, tmp_path):
    cfg = preset("noisy_snr", seed=700)
    res = run_monte_carlo(cfg)
    write_results(res, tmp_path)
    aggs = res.aggregates
    means = [a["spike_mse"] for a in aggs]
    ses = [a["spike_mse_se"] for a in aggs]
    at30 = aggs[-1]["spike_mse"]
    ok = all(a["n"] >= 30 for a in aggs) and trend_ok(means, ses) and at30 <= 0.05
    curve = " ".join(f"{a['snr_db']:g}dB:{m:.4f}" for a, m in zip(aggs, means))
    acceptance_report(7, ok, "noisy MSE trend (B=32, K=4, L=3, M=50)", curve)
    assert ok


@pytest.fixture(scope="module")
def baseline_run():
    return run_monte_carlo(preset("baseline", seed=800))


def test_criterion_8_baseline_comparability(acceptance_report, baseline_run, tmp_path):
    paths = write_results(baseline_run, tmp_path)
    good = {}
    for method in ("pswf", "baseline"):
        recs = [r for r in baseline_run.records if r["method"] == method]
        assert len(recs) == 10
        good[method] = sum(r["nmse"] < 1e-3 for r in recs)
    # same instances for both methods
    by_method = {m: [r["taus_true"] for r in baseline_run.records if r["method"] == m] for m in good}
    same = by_method["pswf"] == by_method["baseline"]
    header = open(paths["comparison"]).readline().strip().split(",")
    ok = same and all(v >= 8 for v in good.values()) and "baseline_mean_nmse" in header
    acceptance_report(8, ok, "baseline comparability",
                      f"NMSE<1e-3: pswf {good['pswf']}/10, baseline {good['baseline']}/10; comparison.csv written")
    assert ok


def test_criterion_9_determinism(acceptance_report, noiseless_run, baseline_run):
    again = run_monte_carlo(preset("noiseless", seed=600))
    same_6 = trials_csv(again.records, NON_TIMING) == trials_csv(noiseless_run.records, NON_TIMING)
    pooled = run_monte_carlo(preset("baseline", seed=800), jobs=2)
    same_8 = trials_csv(pooled.records, NON_TIMING) == trials_csv(baseline_run.records, NON_TIMING)
    ok = same_6 and same_8
    acceptance_report(9, ok, "determinism", f"noiseless rerun identical={same_6}, baseline rerun in a 2-process pool identical={same_8}")
    assert ok
