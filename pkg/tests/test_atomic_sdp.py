import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from blindsr.atomic_sdp import (
    MomentVector,
    SdpFailure,
    _alpha_maps,
    atomic_norm,
    build_noiseless,
    build_noisy,
    default_gamma,
    moments_from_measure,
    psi_operator,
    q_coefficients,
    q_from_moments,
    solution_to_dict,
    solve,
)
from blindsr.pswf import build_basis, phi_matrix
from blindsr.signal_model import (
    Instance,
    SpikeTrain,
    SubspaceModel,
    generate_instance,
    sample_frequencies,
    steering_matrix,
)

from oracles import arc_measure_moments, toeplitz_by_loops


@pytest.fixture(scope="module")
def basis8():
    return build_basis(8.0)


@pytest.fixture(scope="module")
def basis4():
    return build_basis(4.0)


def direct_q(taus, masses, scheme):
    f = scheme.freqs
    return sum(c * np.exp(-2j * np.pi * np.subtract.outer(f, f) * t) for t, c in zip(taus, masses))


def alpha_params(moments, basis):
    """Real solver parameters for a moment vector: alpha = Phi^{-1} u, unit phase removed."""
    alpha = phi_matrix(basis).solve(moments.stacked())
    unit = np.where(np.arange(basis.n_functions) % 2 == 0, 1.0, 1j)
    r = alpha / unit
    assert np.max(np.abs(r.imag)) <= 1e-9 * max(1.0, np.max(np.abs(r)))
    return r.real


def ground_truth_point(prog, inst, basis):
    """Solver vector for the feasible point built from the true atoms."""
    x = np.zeros(prog.n)
    amps = inst.spikes.amps
    h = inst.subspace.h
    hn = np.linalg.norm(h)
    chat = np.abs(amps) * hn
    w = np.zeros((inst.l, inst.l), complex)
    for a, c in zip(amps, chat):
        u = np.conj(a / abs(a)) * np.conj(h) / hn
        w += c * np.outer(u, np.conj(u))
    ll = inst.l
    k = prog.blocks["W"].start
    x[k : k + ll] = np.diag(w).real
    k += ll
    for i in range(ll):
        for j in range(i + 1, ll):
            x[k], x[k + 1] = w[i, j].real, w[i, j].imag
            k += 2
    moments = moments_from_measure(inst.spikes.taus, chat, basis)
    x[prog.blocks["alpha"]] = alpha_params(moments, basis)
    z = inst.z_true.ravel()
    zs = prog.blocks["Z"]
    x[zs] = np.concatenate([z.real, z.imag])
    return x, w, chat


class TestMoments:
    def test_toeplitz_convention(self):
        rng = np.random.default_rng(0)
        v = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        mv = MomentVector(v)
        assert mv.v[0].imag == 0
        np.testing.assert_array_equal(mv.toeplitz(), toeplitz_by_loops(mv.v))
        np.testing.assert_array_equal(mv.stacked()[5:], mv.v)
        np.testing.assert_array_equal(mv.stacked()[:5], np.conj(mv.v[:0:-1]))

    def test_moments_match_arc_oracle(self, basis8):
        taus = np.array([-0.31, 0.05, 0.44])
        masses = np.array([0.7, 1.3, 2.0])
        mv = moments_from_measure(taus, masses, basis8)
        thetas = 2 * np.pi * taus * basis8.b_max / basis8.d
        np.testing.assert_allclose(mv.v, arc_measure_moments(thetas, masses, basis8.d), atol=1e-13)

    def test_zero_frequency_measure_gives_all_ones(self, basis8):
        scheme = sample_frequencies(9, 8.0, 1)
        mv = moments_from_measure([0.0], [1.0], basis8)
        np.testing.assert_allclose(mv.v, 1.0)
        np.testing.assert_allclose(q_from_moments(mv, basis8, scheme), np.ones((9, 9)), atol=1e-8)


class TestQParametrization:
    def test_forward_oracle_in_double_precision(self, basis8):
        # the interpolation error of the node-value form sits near 3e-9 sum(c)
        # at B_max = 8, above the 10 eps target (see the acceptance suite)
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(10):
            k = rng.integers(1, 5)
            taus = rng.uniform(-0.5, 0.5, k)
            masses = rng.uniform(0.1, 2.0, k)
            scheme = sample_frequencies(12, 8.0, rng)
            q = q_from_moments(moments_from_measure(taus, masses, basis8), basis8, scheme)
            err = np.max(np.abs(q - direct_q(taus, masses, scheme))) / masses.sum()
            worst = max(worst, err)
        assert worst < 1e-7

    def test_alpha_map_agrees_with_node_form(self, basis8):
        rng = np.random.default_rng(4)
        scheme = sample_frequencies(10, 8.0, rng)
        mv = moments_from_measure(rng.uniform(-0.5, 0.5, 3), rng.uniform(0.5, 1.5, 3), basis8)
        q_map, v_map = _alpha_maps(basis8, scheme)
        r = alpha_params(mv, basis8)
        np.testing.assert_allclose(v_map @ r, mv.v, atol=1e-10)
        np.testing.assert_allclose((q_map @ r).reshape(10, 10), q_from_moments(mv, basis8, scheme), atol=1e-8)

    def test_diagonal_uses_symmetric_part_only(self, basis8):
        scheme = sample_frequencies(7, 8.0, 2)
        coeff = q_coefficients(basis8, scheme)
        diag = coeff[np.arange(7) * 8]
        # imaginary parts of v never reach the diagonal
        np.testing.assert_array_equal(diag[:, 2::2], 0)
        # delta = 0 is a node, so every diagonal entry is v_0 itself
        expected = np.zeros(diag.shape[1])
        expected[0] = 1.0
        np.testing.assert_allclose(diag, np.tile(expected, (7, 1)), atol=1e-10)

    def test_hermitian_for_any_parameters(self, basis8):
        scheme = sample_frequencies(6, 8.0, 5)
        rng = np.random.default_rng(5)
        v = rng.standard_normal(basis8.d + 1) + 1j * rng.standard_normal(basis8.d + 1)
        q = q_from_moments(MomentVector(v), basis8, scheme)
        np.testing.assert_array_equal(q, q.conj().T)

    def test_pair_wider_than_bandwidth(self, basis8):
        scheme = sample_frequencies(5, 16.0, 0)
        with pytest.raises(ValueError):
            q_coefficients(basis8, scheme)


class TestPsi:
    def test_inside_arc_is_psd(self, basis8):
        t = moments_from_measure([0.0], [1.0], basis8).toeplitz()
        assert np.linalg.eigvalsh(psi_operator(t, basis8.theta0))[0] >= -1e-10

    @pytest.mark.parametrize("factor", [1.2, 1.5, 1.9])
    def test_outside_arc_has_negative_eigenvalue(self, basis8, factor):
        theta = basis8.theta0 * factor
        assert theta < np.pi
        row = arc_measure_moments([theta], [1.0], basis8.d)
        t = toeplitz_by_loops(row)
        assert np.linalg.eigvalsh(psi_operator(t, basis8.theta0))[0] < -1e-6 * np.trace(t).real

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_linear(self, seed):
        rng = np.random.default_rng(seed)
        t1 = MomentVector(rng.standard_normal(7) + 1j * rng.standard_normal(7)).toeplitz()
        t2 = MomentVector(rng.standard_normal(7) + 1j * rng.standard_normal(7)).toeplitz()
        th = rng.uniform(0.1, 3.0)
        np.testing.assert_allclose(psi_operator(t1 + t2, th), psi_operator(t1, th) + psi_operator(t2, th), atol=1e-12)
        out = psi_operator(t1, th)
        np.testing.assert_allclose(out, out.conj().T, atol=1e-12)

    def test_matches_selector_formula(self):
        rng = np.random.default_rng(9)
        t = MomentVector(rng.standard_normal(5) + 1j * rng.standard_normal(5)).toeplitz()
        j1 = np.hstack([np.eye(4), np.zeros((4, 1))])
        j2 = np.hstack([np.zeros((4, 1)), np.eye(4)])
        th = 1.1
        ref = np.tan(th / 2) ** 2 * (j1 + j2) @ t @ (j1 + j2).T - (j1 - j2) @ t @ (j1 - j2).T
        np.testing.assert_allclose(psi_operator(t, th), ref, atol=1e-12)

    def test_theta0_range(self):
        with pytest.raises(ValueError):
            psi_operator(np.eye(3), math.pi)
        with pytest.raises(ValueError):
            psi_operator(np.eye(3), 0.0)


class TestNoiseless:
    @pytest.mark.parametrize("seed", range(3))
    def test_ground_truth_is_feasible(self, basis8, seed):
        inst = generate_instance(3, 2, 12, 8.0, seed=seed)
        prog = build_noiseless(inst, basis8)
        x, w, chat = ground_truth_point(prog, inst, basis8)
        lifted = prog.psd[0].expr.value(x)
        np.testing.assert_allclose(lifted[:2, :2], w, atol=1e-12)
        for con in prog.psd:
            s = con.expr.value(x)
            assert np.linalg.eigvalsh(0.5 * (s + s.conj().T))[0] >= -1e-8 * max(1.0, np.abs(s).max())
        a, b = prog.equality_system()
        assert np.max(np.abs(a @ x - b)) <= 1e-8 * max(1.0, np.abs(b).max())
        assert prog.objective_value(x) == pytest.approx(chat.sum(), rel=1e-8)

    def test_zero_measurements(self, basis4):
        inst = generate_instance(1, 2, 6, 4.0, seed=0)
        inst = Instance(inst.spikes, inst.scheme, inst.subspace, np.zeros_like(inst.z_true), np.zeros(6, complex), 0.0)
        sol = solve(build_noiseless(inst, basis4), basis4, inst.scheme)
        assert abs(sol.objective) <= 1e-7
        assert np.abs(sol.z).max() <= 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_objective_below_atomic_decomposition(self, basis8, seed):
        inst = generate_instance(2, 2, 10, 8.0, seed=seed)
        sol = solve(build_noiseless(inst, basis8), basis8, inst.scheme)
        bound = np.sum(np.abs(inst.spikes.amps)) * np.linalg.norm(inst.subspace.h)
        assert sol.objective <= bound * (1 + 1e-7)
        assert sol.checks["q_diag_spread"] <= 1e-6
        assert sol.checks["trace_identity_gap"] <= 1e-6

    def test_single_atom_recovery(self, basis8):
        inst = generate_instance(1, 2, 10, 8.0, seed=11)
        sol = solve(build_noiseless(inst, basis8), basis8, inst.scheme)
        assert sol.ok
        lam = np.linalg.eigvalsh(sol.t)
        assert lam[-2] / lam[-1] < 1e-6
        expected = abs(inst.spikes.amps[0]) * np.linalg.norm(inst.subspace.h)
        assert sol.objective == pytest.approx(expected, rel=1e-4)
        np.testing.assert_allclose(sol.z, inst.z_true, atol=1e-5 * np.abs(inst.z_true).max())

    def test_real_w_option(self, basis8):
        inst = generate_instance(1, 2, 10, 8.0, seed=11)
        prog = build_noiseless(inst, basis8, real_w=True)
        assert prog.blocks["W"].stop - prog.blocks["W"].start == 3
        sol = solve(prog, basis8, inst.scheme)
        assert np.all(sol.w.imag == 0)

    def test_dimension_errors(self, basis8):
        inst = generate_instance(2, 2, 10, 8.0, seed=0)
        with pytest.raises(ValueError):
            build_noiseless(inst, build_basis(4.0))
        bad = Instance(inst.spikes, inst.scheme, SubspaceModel(np.ones((9, 2)), inst.subspace.h), inst.z_true, inst.y, 0.0)
        with pytest.raises(ValueError):
            build_noiseless(bad, basis8)
        with pytest.raises(ValueError):
            build_noiseless(inst, basis8, e_index=10)

    def test_solution_json(self, basis4, tmp_path):
        inst = generate_instance(1, 1, 5, 4.0, seed=2)
        sol = solve(build_noiseless(inst, basis4), basis4, inst.scheme)
        doc = json.loads(json.dumps(solution_to_dict(sol)))
        assert doc["schema"] == "blindsr.solution/1"
        assert doc["status"] == sol.status
        assert len(doc["v"]) == basis4.d + 1


class TestNoisy:
    def test_noisy_sweep_configuration_assembles(self):
        basis = build_basis(32.0)
        for snr in (5, 10, 15, 20, 25, 30):
            inst = generate_instance(4, 3, 50, 32.0, snr_db=snr, seed=snr)
            prog = build_noisy(inst, basis)
            assert prog.quad is not None
            assert "Z" in prog.blocks and prog.equality_system()[0].shape[0] == 0

    def test_penalty_identity(self, basis8):
        inst = generate_instance(2, 2, 10, 8.0, snr_db=10.0, seed=1)
        gamma = default_gamma(inst.sigma, 10, 8.0)
        prog = build_noisy(inst, basis8)
        x = np.zeros(prog.n)
        z = inst.z_true.ravel()
        x[prog.blocks["Z"]] = np.concatenate([z.real, z.imag])
        noise = inst.y - np.sum(inst.z_true * inst.subspace.s_matrix, axis=1)
        assert prog.objective_value(x) == pytest.approx(np.vdot(noise, noise).real / gamma, rel=1e-10)

    def test_gamma_validation(self, basis8):
        clean = generate_instance(2, 2, 10, 8.0, seed=1)
        with pytest.raises(ValueError):
            build_noisy(clean, basis8)
        with pytest.raises(ValueError):
            build_noisy(clean, basis8, gamma=0.0)
        build_noisy(clean, basis8, gamma=0.1)

    def test_approaches_noiseless_as_snr_grows(self, basis8):
        base = generate_instance(2, 2, 10, 8.0, seed=6)
        ref = solve(build_noiseless(base, basis8), basis8, base.scheme).objective
        gaps = []
        for snr in (20.0, 40.0, 60.0):
            inst = generate_instance(2, 2, 10, 8.0, snr_db=snr, seed=6)
            np.testing.assert_array_equal(inst.z_true, base.z_true)
            gaps.append(abs(solve(build_noisy(inst, basis8), basis8, inst.scheme).objective - ref))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-2 * ref


class TestAtomicNorm:
    def test_zero(self, basis4):
        scheme = sample_frequencies(6, 4.0, 0)
        assert abs(atomic_norm(np.zeros((6, 2)), basis4, scheme)) <= 1e-7

    @pytest.mark.parametrize("seed", range(4))
    def test_single_atom_and_trace_identity(self, seed):
        rng = np.random.default_rng(seed)
        b_max = (8.0, 16.0)[seed % 2]
        basis = build_basis(b_max)
        scheme = sample_frequencies(10, b_max, rng)
        tau = rng.uniform(-0.5, 0.5)
        a = rng.standard_normal() + 1j * rng.standard_normal()
        h = rng.standard_normal(2)
        z = a * np.outer(steering_matrix([tau], scheme)[:, 0], h)
        sol = atomic_norm(z, basis, scheme, return_solution=True)
        assert sol.objective == pytest.approx(abs(a) * np.linalg.norm(h), rel=1e-4)
        assert abs(np.trace(sol.w).real - sol.q[0, 0].real) <= 1e-6 * sol.objective

    def test_homogeneity_and_triangle(self, basis8):
        rng = np.random.default_rng(12)
        scheme = sample_frequencies(10, 8.0, rng)

        def random_z():
            taus = rng.uniform(-0.5, 0.5, 2)
            x = steering_matrix(taus, scheme) @ (rng.standard_normal(2) + 1j * rng.standard_normal(2))
            return np.outer(x, rng.standard_normal(2))

        z1, z2 = random_z(), random_z()
        n1 = atomic_norm(z1, basis8, scheme)
        n2 = atomic_norm(z2, basis8, scheme)
        alpha = 0.3 - 1.7j
        assert atomic_norm(alpha * z1, basis8, scheme) == pytest.approx(abs(alpha) * n1, rel=1e-6)
        assert atomic_norm(z1 + z2, basis8, scheme) <= n1 + n2 + 1e-6

    def test_schur_complement_bound(self, basis8):
        # any feasible point has tr W >= tr(Z^H Q^-1 Z); perturb Q to make it definite
        inst = generate_instance(2, 2, 10, 8.0, seed=4)
        sol = atomic_norm(inst.z_true, basis8, inst.scheme, return_solution=True)
        q = sol.q + 1e-6 * np.eye(10)
        bound = np.trace(sol.z.conj().T @ np.linalg.solve(q, sol.z)).real
        assert np.trace(sol.w).real >= bound - 1e-6

    def test_bad_input(self, basis4):
        scheme = sample_frequencies(6, 4.0, 0)
        with pytest.raises(ValueError):
            atomic_norm(np.zeros((5, 2)), basis4, scheme)
        with pytest.raises(ValueError):
            atomic_norm(np.full((6, 1), np.nan), basis4, scheme)


def test_sdp_failure_carries_report():
    err = SdpFailure("infeasible", {"solver": "cvxopt"})
    assert err.status == "infeasible" and err.report["solver"] == "cvxopt"
