"""Secondary acceptance: render all six figures from case-study traces
produced through the simulator's command line, and check figure 2's plotted
minimum altitude against the metrics file to 1e-9."""

import subprocess
import sys
from pathlib import Path

import pytest

from cbfguard_plots.render import FigureSpec, render


def run_simulator(config_args, out_dir):
    cmd = [sys.executable, "-m", "cbfguard.cli", "simulate", *config_args,
           "--out", str(out_dir)]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return out_dir / "trace.csv", out_dir / "metrics.txt"


@pytest.fixture(scope="module")
def case_study(tmp_path_factory):
    """Both case-study runs via the external CLI (takes ~1 minute)."""
    root = tmp_path_factory.mktemp("case_study")
    guarded_dir = root / "guarded"
    crash_dir = root / "crash"
    trace_g, metrics_g = run_simulator(["quadrotor_paper.cfg"], guarded_dir)

    # detection-off variant of the shipped scenario
    import configparser

    packaged = subprocess.run(
        [sys.executable, "-c",
         "from cbfguard.config import resolve_config_path; print(resolve_config_path('quadrotor_paper.cfg'))"],
        capture_output=True, text=True)
    src = Path(packaged.stdout.strip())
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(src)
    parser["sim"]["detection_enabled"] = "false"
    parser["sim"]["recovery_enabled"] = "false"
    off_cfg = root / "quadrotor_paper_nodetect.cfg"
    with open(off_cfg, "w") as fh:
        parser.write(fh)
    trace_c, metrics_c = run_simulator([str(off_cfg)], crash_dir)
    return trace_g, metrics_g, trace_c, metrics_c, root


def parse_metrics(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


class TestCriterion9:
    def test_all_six_figures_render_and_fig2_matches_metrics(self, case_study):
        trace_g, metrics_g, trace_c, metrics_c, root = case_study
        out = root / "figures"
        summaries = {}
        for fig_id in range(1, 7):
            traces = (trace_g, trace_c) if fig_id in (1, 2) else (trace_g,)
            spec = FigureSpec(figure=fig_id, traces=traces, out=out / f"fig{fig_id}.png")
            summaries[fig_id] = render(spec)
            assert (out / f"fig{fig_id}.png").stat().st_size > 2000

        plotted_min_z = summaries[2]["min_z"]
        metrics_min_z = float(parse_metrics(metrics_g)["min_z"])
        gap = abs(plotted_min_z - metrics_min_z)
        print(f"\n[criterion 9] {'PASS' if gap <= 1e-9 else 'FAIL'}: six figures rendered; "
              f"fig2 min z {plotted_min_z:.9f} vs metrics {metrics_min_z:.9f} (gap {gap:.2e})")
        assert gap <= 1e-9

    def test_crash_trace_reaches_ground_in_fig2_data(self, case_study):
        _, _, trace_c, metrics_c, root = case_study
        spec = FigureSpec(figure=2, traces=(trace_c,), out=root / "figures" / "fig2_crash.png")
        summary = render(spec)
        assert summary["min_z"] <= 0.02
        assert float(parse_metrics(metrics_c)["min_z"]) <= 0.02
