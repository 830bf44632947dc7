"""A small phase-transition sweep over (K, M) for both methods.

Writes CSV files under results/phase_transition; plot them with
demos/plot_results.py.  Takes a few minutes on one core.

Run:  python3 demos/03_phase_transition.py
"""

from blindsr.experiments import config_from_dict, run_monte_carlo, write_results

cfg = config_from_dict(dict(
    name="phase_transition",
    sweep="K", values=[1, 2, 3, 4],
    sweep2="M", values2=[10, 14, 20],
    l=2, b_max=16.0, trials=5, seed=0,
    methods=["pswf", "baseline"],
    out="results/phase_transition",
))
result = run_monte_carlo(cfg, progress=lambda i, n: print(f"\r{i}/{n}", end="", flush=True))
print()
paths = write_results(result)
for method in cfg.methods:
    print(f"\n{method}: success rate, rows M, columns K")
    print(open(paths[f"grid_{method}"]).read())
