"""One noiseless instance, end to end.

Draw spikes, a Gaussian PSF subspace and arbitrary frequency samples; solve
the lifted SDP; read the delays off the Toeplitz moment matrix; split Z into
spectrum and PSF; and fit amplitudes.

Run:  python3 demos/02_single_recovery.py [seed]
"""

import sys

import numpy as np

from blindsr import atomic_sdp
from blindsr.demixing import correlation, factor_rank1, normalize_h, reconstruct_psf, solve_amplitudes
from blindsr.localization import estimate_rank, localize, match_spikes
from blindsr.pswf import build_basis
from blindsr.signal_model import generate_instance

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
inst = generate_instance(k=3, l=2, m=20, b_max=16.0, seed=seed)
print("true delays     ", np.round(inst.spikes.taus, 6))
print("sample freqs    ", np.round(inst.scheme.freqs, 2))

basis = build_basis(16.0)
sol = atomic_sdp.solve(atomic_sdp.build_noiseless(inst, basis), basis, inst.scheme)
print(f"solver status    {sol.status}, objective {sol.objective:.6f}, "
      f"{sol.report['iterations']} iterations, {sol.report['solve_time']:.2f} s")

t = sol.t
print("rank of T        ", estimate_rank(t), "eigenvalues", np.round(np.linalg.eigvalsh(t)[::-1][:5], 6))
loc = localize(t, 16.0)
print("recovered delays", np.round(loc.taus, 6))
m = match_spikes(loc.taus, inst.spikes.taus)
print(f"max delay error  {m.max_error:.2e}")

nm = np.linalg.norm(sol.z - inst.z_true) ** 2 / np.linalg.norm(inst.z_true) ** 2
print(f"NMSE of Z        {nm:.2e}")

# Z = x h^T is only known up to a scale; fix ||h|| = 1 with its largest entry real
f = factor_rank1(sol.z)
print(f"sigma2/sigma1    {f.s2_ratio:.1e}")
g_hat = reconstruct_psf(inst.subspace.s_matrix, f.h)
print(f"PSF correlation  {correlation(g_hat, inst.subspace.g):.8f}")
fit = solve_amplitudes(f.x, loc.taus, inst.scheme)
_, s = normalize_h(inst.subspace.h)
print("amplitudes      ", np.round(fit.amps * s, 6))
print("true amplitudes ", np.round(inst.spikes.amps, 6))
