"""Standalone matplotlib scripts that plot a CSV written by the CLI.

Each generated script depends only on the CSV beside it (and matplotlib).
``render`` runs the script in-process so the PNG shipped with a run is
exactly what the script produces.
"""

from __future__ import annotations

import runpy
import sys
from pathlib import Path

__all__ = ["PLOT_KINDS", "plot_script", "write_plot_script", "render"]

_HEADER = '''"""Plot {csv_name}; run as: python {script_name} [CSV] [PNG]"""
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV = sys.argv[1] if len(sys.argv) > 1 else {csv_path!r}
PNG = sys.argv[2] if len(sys.argv) > 2 else {png_path!r}


def load(path):
    meta, rows = {{}}, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            elif line.strip():
                rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    cols = {{name: [] for name in header}}
    for row in reader:
        for name, value in zip(header, row):
            cols[name].append(float(value))
    return meta, cols


meta, cols = load(CSV)
fig, ax = plt.subplots(figsize=(6, 4))
'''

_FOOTER = '''
fig.tight_layout()
fig.savefig(PNG, dpi=150)
print("wrote", PNG)
'''

_BODIES = {
    "fig2": '''
for key, label in (("P0_a", "(a)"), ("P0_b", "(b)"), ("P0_c", "(c)")):
    ax.plot(cols["eta"], cols[key], marker="o", ms=3, label=label)
ax.set_xlabel("eta")
ax.set_ylabel("P0 after %s cycles" % meta.get("n_cycles", "?"))
ax.set_ylim(0, 1.02)
ax.legend()
''',
    "fig3": '''
n = cols["n"]
ax.bar([x - 0.2 for x in n], cols["P_n_a"], width=0.4, label="(a)")
ax.bar([x + 0.2 for x in n], cols["P_n_b"], width=0.4, label="(b)")
last = max([i for i, (a, b) in enumerate(zip(cols["P_n_a"], cols["P_n_b"])) if max(a, b) > 1e-4] + [10])
ax.set_xlim(-1, n[last] + 1)
ax.set_xlabel("n")
ax.set_ylabel("P_n")
ax.legend()
''',
    "fig4": '''
for key in [k for k in cols if k.startswith("gamma_n_delta_")]:
    ax.plot(cols["n"], cols[key], marker="x", ms=4, lw=0.8, label="delta = +" + key.rsplit("_", 1)[1])
ax.set_xlabel("n")
ax.set_ylabel("Gamma_n  [Omega^2/Gamma]")
ax.legend()
''',
    "rates": '''
ax.semilogy(cols["n"], cols["gamma_n_units_omega2_over_gamma"], marker="x", ms=4, lw=0.8)
ax.set_xlabel("n")
ax.set_ylabel("Gamma_n  [Omega^2/Gamma]")
ax.set_title("delta = %s" % meta.get("delta", "?"))
''',
    "trace": '''
ax.plot(cols["cycle"], cols["P0"], label="P0")
ax.set_xlabel("cycle")
ax.set_ylabel("P0")
ax2 = ax.twinx()
ax2.plot(cols["cycle"], cols["mean_n"], color="C1", label="<n>")
ax2.set_ylabel("<n>")
''',
    "distribution": '''
ax.bar(cols["n"], cols["P_n"], width=0.8)
last = max([i for i, p in enumerate(cols["P_n"]) if p > 1e-4] + [10])
ax.set_xlim(-1, cols["n"][last] + 1)
ax.set_xlabel("n")
ax.set_ylabel("P_n")
''',
    "optimize": '''
ax.plot(cols["evaluation"], cols["P0"], ".", ms=4, label="evaluated")
ax.step(cols["evaluation"], cols["incumbent_P0"], where="post", label="incumbent")
ax.set_xlabel("evaluation")
ax.set_ylabel("final P0")
ax.legend()
''',
}

PLOT_KINDS = tuple(_BODIES)


def plot_script(kind: str, csv_name: str, png_name: str, script_name: str = "plot.py") -> str:
    """Source of a standalone script plotting ``csv_name`` into ``png_name``."""
    if kind not in _BODIES:
        raise ValueError(f"unknown plot kind {kind!r}")
    head = _HEADER.format(csv_name=csv_name, script_name=script_name, csv_path=csv_name, png_path=png_name)
    return head + _BODIES[kind] + _FOOTER


def write_plot_script(kind: str, csv_path, png_path=None) -> Path:
    """Write ``<csv stem>_plot.py`` next to the CSV; paths inside are relative to it."""
    csv_path = Path(csv_path)
    png_path = csv_path.with_suffix(".png") if png_path is None else Path(png_path)
    script = csv_path.with_name(csv_path.stem + "_plot.py")
    script.write_text(plot_script(kind, csv_path.name, png_path.name, script.name), encoding="utf-8")
    return script


def render(script, csv_path, png_path) -> Path:
    """Run a generated script on explicit paths and return the PNG path."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    argv = sys.argv
    try:
        sys.argv = [str(script), str(csv_path), str(png_path)]
        runpy.run_path(str(script), run_name="__main__")
    finally:
        sys.argv = argv
        plt.close("all")
    return Path(png_path)
