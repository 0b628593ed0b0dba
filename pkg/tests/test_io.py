import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fockcool.io import SCHEMA_VERSION, read_csv, write_csv
from fockcool.plotting import PLOT_KINDS, plot_script, render, write_plot_script


@settings(max_examples=40, deadline=None)
@given(rows=st.lists(st.tuples(st.integers(0, 10**6), st.floats(allow_nan=False, allow_infinity=False)), max_size=20))
def test_csv_round_trip_is_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "x.csv"
    write_csv(path, ["n", "value"], rows, {"delta": 7.0, "note": "two\nlines"})
    meta, cols, data = read_csv(path)
    assert cols == ["n", "value"]
    assert meta["schema"] == SCHEMA_VERSION and meta["delta"] == "7.0" and meta["note"] == "two lines"
    assert data.shape == (len(rows), 2)
    for (n, v), (n2, v2) in zip(rows, data):
        assert n == n2 and v == v2


def test_csv_layout(tmp_path):
    path = write_csv(tmp_path / "sub" / "r.csv", ["a", "b"], [(1, 0.5), (2, float("nan"))])
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines == [f"# schema: {SCHEMA_VERSION}", "a,b", "1,0.5", "2,nan"]
    with pytest.raises(ValueError):
        write_csv(tmp_path / "bad.csv", ["a", "b"], [(1,)])


SAMPLE = {
    "fig2": (["eta", "P0_a", "P0_b", "P0_c"], [(0.5, 0.8, 0.9, 0.99), (1.0, 0.7, float("nan"), 0.98)]),
    "fig3": (["n", "P_n_a", "P_n_b"], [(n, 0.1, 0.05) for n in range(12)]),
    "fig4": (["n", "gamma_n_delta_7", "gamma_n_delta_9"], [(n, 1e-3 * n, 2e-3 * n) for n in range(8)]),
    "rates": (["n", "gamma_n_units_omega2_over_gamma"], [(n, 1e-4 + n) for n in range(8)]),
    "trace": (["cycle", "P0", "mean_n", "tail_mass"], [(c, 0.1 * c, 6 - c, 0.0) for c in range(5)]),
    "distribution": (["n", "P_n"], [(n, 0.5**n) for n in range(15)]),
    "optimize": (["evaluation", "start", "P0", "incumbent_P0"], [(0, 0, 0.1, 0.1), (1, 0, float("-inf"), 0.1), (2, 0, 0.2, 0.2)]),
}


@pytest.mark.parametrize("kind", PLOT_KINDS)
def test_plot_scripts_are_standalone(tmp_path, kind):
    cols, rows = SAMPLE[kind]
    csv_path = write_csv(tmp_path / f"{kind}.csv", cols, rows, {"n_cycles": 200, "delta": 7})
    script = write_plot_script(kind, csv_path)
    src = script.read_text(encoding="utf-8")
    assert "fockcool" not in src
    # run in a fresh interpreter from the output directory, no arguments
    proc = subprocess.run([sys.executable, script.name], cwd=tmp_path, capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    png = tmp_path / f"{kind}.png"
    assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    png.unlink()
    assert render(script, csv_path, png) == png and png.exists()


def test_unknown_plot_kind():
    with pytest.raises(ValueError):
        plot_script("histogram3d", "a.csv", "a.png")


def test_read_back_numeric_columns(tmp_path):
    write_csv(tmp_path / "a.csv", ["x", "y"], np.array([[1.0, 2.0], [3.0, 4.0]]))
    _, _, data = read_csv(tmp_path / "a.csv")
    np.testing.assert_array_equal(data, [[1, 2], [3, 4]])
