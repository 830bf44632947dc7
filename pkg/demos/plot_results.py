"""Plot the CSV files written by a sweep (needs matplotlib: pip install blindsr[plot]).

Run:  python3 demos/plot_results.py results/phase_transition
"""

import csv
import os
import sys

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
except ImportError:
    sys.exit("matplotlib is not installed; the CSV files can be plotted with any other tool")

out = sys.argv[1] if len(sys.argv) > 1 else "results"

with open(os.path.join(out, "curve.csv")) as fh:
    rows = list(csv.DictReader(fh))
xkey = list(rows[0].keys())[1]
ykey = list(rows[0].keys())[2] if "n" != list(rows[0].keys())[2] else None

fig, ax = plt.subplots()
groups = {}
for r in rows:
    label = r["method"] + (f" {ykey}={r[ykey]}" if ykey else "")
    groups.setdefault(label, []).append((float(r[xkey]), float(r["mean_nmse"]), float(r["spike_mse"])))
metric = 2 if xkey == "SNR" else 1
for label, pts in groups.items():
    pts.sort()
    ax.semilogy([p[0] for p in pts], [p[metric] for p in pts], "o-", label=label)
ax.set_xlabel(xkey)
ax.set_ylabel("spike MSE" if metric == 2 else "mean NMSE")
ax.legend()
fig.savefig(os.path.join(out, "curve.png"), dpi=120)
print("wrote", os.path.join(out, "curve.png"))

for name in sorted(os.listdir(out)):
    if not name.startswith("success_grid_"):
        continue
    with open(os.path.join(out, name)) as fh:
        grid = list(csv.reader(fh))
    cols = grid[0][1:]
    ys = [g[0] for g in grid[1:]]
    vals = [[float(v) for v in g[1:]] for g in grid[1:]]
    fig, ax = plt.subplots()
    im = ax.imshow(vals, origin="lower", vmin=0, vmax=1, cmap="gray", aspect="auto")
    ax.set_xticks(range(len(cols)), cols)
    ax.set_yticks(range(len(ys)), ys)
    ax.set_xlabel(grid[0][0].split("\\")[1])
    ax.set_ylabel(grid[0][0].split("\\")[0])
    fig.colorbar(im, label="success rate")
    png = os.path.join(out, name.replace(".csv", ".png"))
    fig.savefig(png, dpi=120)
    print("wrote", png)
