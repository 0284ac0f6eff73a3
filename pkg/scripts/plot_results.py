"""Plot NMSE curves from a results CSV, one panel per sweep parameter.

Usage: python scripts/plot_results.py results.csv [out.png]
"""

import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from musicgmm.harness import read_csv  # noqa: E402


def main(argv):
    if not 1 <= len(argv) <= 2:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    table = read_csv(argv[0])
    out = argv[1] if len(argv) > 1 else argv[0].rsplit(".", 1)[0] + ".png"
    panels = sorted({r.sweep_param for r in table.rows})
    fig, axes = plt.subplots(1, len(panels), figsize=(6 * len(panels), 4.5), squeeze=False)
    for ax, param in zip(axes[0], panels):
        curves = defaultdict(list)
        for r in table.select(sweep_param=param):
            curves[r.estimator].append((r.sweep_value, r.nmse))
        for tag, pts in curves.items():
            xs, ys = zip(*sorted(pts))
            ax.semilogy(xs, ys, marker="o", label=tag)
        ax.set_xlabel(param)
        ax.set_ylabel("NMSE")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
