import numpy as np
import pytest
import scipy.linalg as la

from blindsr.baseline import (
    _toeplitz_expr,
    build_grid_program,
    build_uniform_scheme,
    grid_resolution,
    is_uniform,
    localize_grid,
    solve_grid_blind_sr,
)
from blindsr.localization import estimate_rank, match_spikes
from blindsr.signal_model import (
    SpikeTrain,
    SubspaceModel,
    draw_subspace,
    forward_operator,
    generate_instance,
    sample_frequencies,
    steering_matrix,
    synthesize,
)


class TestScheme:
    def test_unit_spacing(self):
        s = build_uniform_scheme(9, 8.0)
        np.testing.assert_allclose(np.diff(s.freqs), 1.0, atol=1e-12)

    def test_endpoints(self):
        s = build_uniform_scheme(13, 7.3)
        assert s.freqs[0] == 0.0 and s.freqs[-1] == 7.3

    def test_spacing_uniform(self):
        s = build_uniform_scheme(50, 32.0)
        steps = np.diff(s.freqs)
        assert np.ptp(steps) < 1e-12
        assert is_uniform(s)
        assert not is_uniform(sample_frequencies(50, 32.0, 0))

    def test_too_small(self):
        with pytest.raises(ValueError):
            build_uniform_scheme(1, 4.0)

    def test_resolution(self):
        assert grid_resolution(build_uniform_scheme(9, 8.0)) == pytest.approx(0.5)


def test_toeplitz_variable_layout():
    rng = np.random.default_rng(0)
    m = 6
    v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    v[0] = v[0].real
    x = np.concatenate([[v[0].real], np.column_stack([v[1:].real, v[1:].imag]).ravel()])
    t = _toeplitz_expr(m, 0, x.size).value(x)
    np.testing.assert_allclose(t, la.toeplitz(np.conj(v), v), atol=1e-15)


def test_gram_of_uniform_steering_is_toeplitz():
    scheme = build_uniform_scheme(7, 4.0)
    c = steering_matrix([-0.2, 0.3], scheme)
    gram = c @ np.diag([1.5, 0.5]) @ c.conj().T
    np.testing.assert_allclose(gram, la.toeplitz(gram[:, 0], gram[0]), atol=1e-12)


def test_single_atom_at_zero():
    scheme = build_uniform_scheme(10, 8.0)
    sub = draw_subspace(10, 2, seed=1)
    spikes = SpikeTrain(taus=[0.0], amps=[1.0])
    z, _ = synthesize(spikes, sub, scheme)
    y = forward_operator(z, sub)
    sol = solve_grid_blind_sr(y, sub.s_matrix, scheme)
    assert sol.ok
    assert estimate_rank(sol.t) == 1
    loc = localize_grid(sol, scheme)
    assert loc.k == 1 and abs(loc.taus[0]) < 1e-6
    assert np.linalg.norm(sol.z - z) / np.linalg.norm(z) < 1e-6


def test_objective_homogeneous_in_y():
    inst = generate_instance(k=2, l=2, m=12, b_max=8.0, seed=3, scheme="uniform")
    a = solve_grid_blind_sr(inst.y, inst.subspace.s_matrix, inst.scheme)
    b = solve_grid_blind_sr(3.0 * inst.y, inst.subspace.s_matrix, inst.scheme)
    assert b.objective == pytest.approx(3.0 * a.objective, rel=1e-6)


def test_rejects_nonuniform_scheme():
    inst = generate_instance(k=1, l=2, m=10, b_max=8.0, seed=0)
    with pytest.raises(ValueError):
        solve_grid_blind_sr(inst.y, inst.subspace.s_matrix, inst.scheme)


def test_noisy_penalty_variant_runs():
    inst = generate_instance(k=2, l=2, m=16, b_max=8.0, seed=4, scheme="uniform", snr_db=30)
    sol = solve_grid_blind_sr(inst.y, inst.subspace.s_matrix, inst.scheme, gamma=1.0)
    assert sol.status in ("optimal", "near-optimal")
    with pytest.raises(ValueError):
        build_grid_program(inst.y, inst.subspace.s_matrix, gamma=0.0)


def test_well_separated_recovery_rate():
    """Noiseless, uniform samples, separation 2/M: NMSE < 1e-3 in at least 80% of trials."""
    hits = 0
    for seed in range(10):
        inst = generate_instance(k=3, l=2, m=20, b_max=16.0, min_sep=2 / 20, seed=seed, scheme="uniform")
        sol = solve_grid_blind_sr(inst.y, inst.subspace.s_matrix, inst.scheme)
        nmse = np.linalg.norm(sol.z - inst.z_true) ** 2 / np.linalg.norm(inst.z_true) ** 2
        loc = localize_grid(sol, inst.scheme)
        ok = nmse < 1e-3 and match_spikes(loc.taus, inst.spikes.taus).max_error < 3e-4
        hits += ok
    assert hits >= 8
