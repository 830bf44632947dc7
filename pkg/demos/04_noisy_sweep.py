"""Spike MSE against SNR for K=4, L=3, M=50 at B_max=32.

This is the desk-scale version of the noisy experiment (30 trials per SNR,
about half an hour on one core).  Pass --quick for 5 trials per SNR.

Run:  python3 demos/04_noisy_sweep.py [--quick]
"""

import sys

from blindsr.experiments import preset, run_monte_carlo, trend_ok, write_results

trials = 5 if "--quick" in sys.argv else 30
cfg = preset("noisy_snr", trials=trials, out="results/noisy")
result = run_monte_carlo(cfg, progress=lambda i, n: print(f"\r{i}/{n}", end="", flush=True))
print()
write_results(result)
print(" SNR   spike MSE   s.e.     success")
for a in result.aggregates:
    print(f"{a['snr_db']:4.0f}   {a['spike_mse']:.4f}     {a['spike_mse_se']:.4f}   {a['success_rate']:.2f}")
ok = trend_ok([a["spike_mse"] for a in result.aggregates], [a["spike_mse_se"] for a in result.aggregates])
print("non-increasing in SNR (one inversion within 1 s.e. allowed):", ok)
