import csv
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cbfguard_plots.render import FigureSpec, TraceError, load_trace, parse_figure_list, render


def synthetic_trace(path, n=60, n_barriers=3, crash=False):
    """A small schema-conforming trace for unit tests."""
    header = ["t", "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r",
              "f1", "f2", "f3", "f4"]
    for k in range(1, n_barriers + 1):
        header += [f"B_{k}", f"Btilde_{k}", f"fd_{k}", f"gamma_{k}", f"region_{k}"]
    header += ["mode", "attack_active", "flag_active", "qp_status"]
    rows = []
    for i in range(n):
        t = i * 1e-3
        z = 5.0 - 5.2 * t if crash else 5.0 + 0.1 * np.sin(8 * t)
        row = [f"{t:.6f}", "0.0", "0.0", repr(float(z)), "0.0", "0.0", "0.0",
               repr(float(0.05 * np.sin(20 * t))), "0.01", "0.0", "0.0", "0.0", "0.0",
               "11.0", "11.0", "11.0", "11.0"]
        for k in range(1, n_barriers + 1):
            row += [repr(float(0.02 - z)), repr(float(0.02 - z)), "0.001", "0.00225", "interior"]
        mode = "recovery" if 20 <= i < 40 else "nominal"
        row += [mode, str(int(10 <= i < 30)), str(int(20 <= i < 40)), "optimal"]
        rows.append(row)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


@pytest.fixture()
def trace_file(tmp_path):
    return synthetic_trace(tmp_path / "trace.csv")


class TestLoadTrace:
    def test_columns_parsed(self, trace_file):
        tr = load_trace(trace_file)
        assert tr.n_barriers == 3
        assert tr["z"].shape == (60,)
        assert tr["mode"][25] == "recovery"

    def test_missing_column_raises_with_names(self, tmp_path):
        path = tmp_path / "bad.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x"])
            writer.writerow(["0.0", "1.0"])
        tr = load_trace(path)
        with pytest.raises(TraceError) as err:
            tr.require(["t", "z", "phi"])
        assert "z" in str(err.value) and "phi" in str(err.value)


class TestRenderFigures:
    def test_all_six_render(self, trace_file, tmp_path):
        for fig_id in range(1, 7):
            spec = FigureSpec(figure=fig_id, traces=(trace_file,),
                              out=tmp_path / f"fig{fig_id}.png")
            summary = render(spec)
            out = tmp_path / f"fig{fig_id}.png"
            assert out.exists() and out.stat().st_size > 2000
            assert summary["out"] == str(out)

    def test_fig2_reports_plotted_minimum(self, trace_file, tmp_path):
        spec = FigureSpec(figure=2, traces=(trace_file,), out=tmp_path / "fig2.png")
        summary = render(spec)
        tr = load_trace(trace_file)
        assert summary["min_z"] == float(np.min(tr["z"]))

    def test_fig3_counts_activity(self, trace_file, tmp_path):
        spec = FigureSpec(figure=3, traces=(trace_file,), out=tmp_path / "fig3.png")
        summary = render(spec)
        assert summary["attacks"] == 1 and summary["flags"] == 1

    def test_fig2_flat_when_no_attack(self, tmp_path):
        path = synthetic_trace(tmp_path / "quiet.csv")
        spec = FigureSpec(figure=3, traces=(path,), out=tmp_path / "fig3.png")
        render(spec)  # renders two square waves without error

    def test_overlay_two_traces(self, trace_file, tmp_path):
        crash = synthetic_trace(tmp_path / "crash.csv", crash=True)
        spec = FigureSpec(figure=2, traces=(trace_file, crash), out=tmp_path / "fig2.png")
        summary = render(spec)
        assert summary["min_z"] == pytest.approx(4.9, abs=0.2)

    def test_missing_columns_named_in_error(self, tmp_path):
        path = tmp_path / "short.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "z"])
            writer.writerow(["0.0", "5.0"])
        with pytest.raises(TraceError) as err:
            render(FigureSpec(figure=5, traces=(path,), out=tmp_path / "f.png"))
        assert "phi" in str(err.value)

    def test_rendering_is_deterministic_and_readonly(self, trace_file, tmp_path):
        before = trace_file.read_bytes()
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        render(FigureSpec(figure=5, traces=(trace_file,), out=a))
        render(FigureSpec(figure=5, traces=(trace_file,), out=b))
        assert trace_file.read_bytes() == before
        import matplotlib.pyplot as plt

        assert np.array_equal(plt.imread(a), plt.imread(b))


class TestCli:
    def test_figure_list_parsing(self):
        assert parse_figure_list("1,2") == [1, 2]
        assert parse_figure_list("1-3,5") == [1, 2, 3, 5]
        with pytest.raises(ValueError):
            parse_figure_list("7")

    def test_cli_renders_selection(self, trace_file, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "cbfguard_plots.render", str(trace_file),
             "--figures", "2,5", "--out", str(tmp_path / "figs")],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "figs" / "fig2.png").exists()
        assert (tmp_path / "figs" / "fig5.png").exists()
        assert not (tmp_path / "figs" / "fig1.png").exists()

    def test_cli_error_on_missing_columns(self, tmp_path):
        path = tmp_path / "short.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "z"])
            writer.writerow(["0.0", "5.0"])
        proc = subprocess.run(
            [sys.executable, "-m", "cbfguard_plots.render", str(path), "--figures", "5"],
            capture_output=True, text=True, cwd=tmp_path)
        assert proc.returncode == 1
        assert "phi" in proc.stderr
