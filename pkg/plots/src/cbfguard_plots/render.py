"""Render the six case-study figures from simulation trace CSV files.

Consumes exactly the trace schema written by the simulation harness
(columns: t, 12 state components, f1..f4, per-barrier blocks B_k, Btilde_k,
fd_k, gamma_k, region_k, then mode, attack_active, flag_active, qp_status).
Figures:

  1  3-D flight path (pass a second trace to overlay detection-off vs on)
  2  altitude z(t) with the reference line
  3  attack and flag square waves
  4  per-barrier detection signals: B + c_bar and fd - gamma + eta*tau/2,
     with flag windows shaded
  5  roll and pitch with their bounds
  6  the four motor thrusts with recovery-mode shading

Rendering is read-only over the traces and deterministic for identical
inputs.
"""

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STATE_COLS = ["x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r"]
DEFAULT_ANGLE_BOUND = 0.3
DEFAULT_C_BAR = 0.25 * 0.3 ** 2
DEFAULT_ETA_TAU_HALF = 0.0


class TraceError(ValueError):
    """Raised when a trace is missing columns a figure needs."""


@dataclass(frozen=True)
class FigureSpec:
    """One figure request: id 1..6, input trace(s), output image path."""

    figure: int
    traces: tuple
    out: Path
    reference_z: float = 5.0
    angle_bound: float = DEFAULT_ANGLE_BOUND
    c_bar: float = DEFAULT_C_BAR
    eta_tau_half: float = DEFAULT_ETA_TAU_HALF

    def __post_init__(self):
        if self.figure not in range(1, 7):
            raise ValueError(f"figure id must be 1..6, got {self.figure}")
        object.__setattr__(self, "traces", tuple(Path(t) for t in self.traces))
        object.__setattr__(self, "out", Path(self.out))


@dataclass
class Trace:
    """Parsed trace: numeric columns as arrays, string columns as lists."""

    columns: dict = field(default_factory=dict)
    n_barriers: int = 0
    path: str = ""

    def __getitem__(self, key):
        return self.columns[key]

    def require(self, names):
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise TraceError(f"{self.path}: missing required columns {missing}")


def load_trace(path) -> Trace:
    path = Path(path)
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise TraceError(f"{path}: empty trace")
    string_cols = {name for name in header
                   if name.startswith("region_") or name in ("mode", "qp_status")}
    columns = {}
    for j, name in enumerate(header):
        values = [row[j] for row in rows]
        if name in string_cols:
            columns[name] = values
        else:
            columns[name] = np.array([float(v) for v in values])
    n_barriers = sum(1 for name in header if name.startswith("B_"))
    return Trace(columns=columns, n_barriers=n_barriers, path=str(path))


def _flag_spans(t, flag):
    spans = []
    start = None
    for k in range(len(t)):
        active = flag[k] > 0.5
        if active and start is None:
            start = t[k]
        elif not active and start is not None:
            spans.append((start, t[k]))
            start = None
    if start is not None:
        spans.append((start, t[-1]))
    return spans


def _shade(ax, spans, color="cyan", alpha=0.25):
    for a, b in spans:
        ax.axvspan(a, b, color=color, alpha=alpha, linewidth=0)


def render(spec: FigureSpec) -> dict:
    """Render one figure to spec.out; returns summary data of what was
    plotted (figure 2 reports the plotted minimum altitude)."""
    traces = [load_trace(p) for p in spec.traces]
    primary = traces[0]
    fn = _RENDERERS[spec.figure]
    spec.out.parent.mkdir(parents=True, exist_ok=True)
    fig, summary = fn(spec, primary, traces[1:])
    fig.savefig(spec.out, dpi=130)
    plt.close(fig)
    summary["out"] = str(spec.out)
    return summary


def _labels(spec, n):
    if n >= 2:
        return ["detection on", "detection off"]
    return ["trace"]


def _fig1(spec, primary, others):
    for tr in [primary, *others]:
        tr.require(["x", "y", "z"])
    fig = plt.figure(figsize=(7, 6))
    ax = fig.add_subplot(projection="3d")
    names = _labels(spec, 1 + len(others))
    colors = ["tab:blue", "tab:red"]
    for tr, name, color in zip([primary, *others], names, colors):
        ax.plot(tr["x"], tr["y"], tr["z"], color=color, label=name, linewidth=1.2)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.legend()
    ax.set_title("closed-loop flight path")
    return fig, {}


def _fig2(spec, primary, others):
    fig, ax = plt.subplots(figsize=(8, 4))
    names = _labels(spec, 1 + len(others))
    colors = ["tab:blue", "tab:red"]
    min_z = None
    for tr, name, color in zip([primary, *others], names, colors):
        tr.require(["t", "z"])
        ax.plot(tr["t"], tr["z"], color=color, label=name, linewidth=1.2)
        if min_z is None:
            min_z = float(np.min(tr["z"]))
    ax.axhline(spec.reference_z, color="black", linewidth=1.0, label=f"z = {spec.reference_z:g} m")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("z [m]")
    ax.legend(loc="lower right")
    ax.set_title("altitude")
    return fig, {"min_z": min_z}


def _fig3(spec, primary, others):
    primary.require(["t", "attack_active", "flag_active"])
    fig, axes = plt.subplots(2, 1, figsize=(8, 4), sharex=True)
    axes[0].step(primary["t"], primary["attack_active"], where="post", color="tab:red")
    axes[0].set_ylabel("attack")
    axes[0].set_yticks([0, 1])
    axes[1].step(primary["t"], primary["flag_active"], where="post", color="tab:blue")
    axes[1].set_ylabel("flagged")
    axes[1].set_yticks([0, 1])
    axes[1].set_xlabel("t [s]")
    axes[0].set_title("attack and detection activity")
    return fig, {"attacks": int(np.sum(np.diff(primary["attack_active"]) > 0.5)),
                 "flags": int(np.sum(np.diff(primary["flag_active"]) > 0.5))}


def _fig4(spec, primary, others):
    n = primary.n_barriers
    needed = ["t", "flag_active"]
    for k in range(1, n + 1):
        needed += [f"B_{k}", f"fd_{k}", f"gamma_{k}"]
    primary.require(needed)
    fig, axes = plt.subplots(n, 2, figsize=(10, 2.4 * n), sharex=True, squeeze=False)
    t = primary["t"]
    spans = _flag_spans(t, primary["flag_active"])
    for k in range(1, n + 1):
        ax_b, ax_fd = axes[k - 1]
        ax_b.plot(t, primary[f"B_{k}"] + spec.c_bar, color="black", linewidth=1.0)
        ax_b.axhline(0.0, color="gray", linewidth=0.6)
        ax_b.set_ylabel(f"B_{k} + c")
        _shade(ax_b, spans)
        signal = primary[f"fd_{k}"] - primary[f"gamma_{k}"] + spec.eta_tau_half
        ax_fd.plot(t, signal, color="tab:green", linewidth=0.8)
        ax_fd.axhline(0.0, color="gray", linewidth=0.6)
        ax_fd.set_ylabel(f"fd_{k} - g + et/2")
        _shade(ax_fd, spans)
    axes[-1][0].set_xlabel("t [s]")
    axes[-1][1].set_xlabel("t [s]")
    fig.suptitle("detection signals (flag windows shaded)")
    return fig, {"windows": len(spans)}


def _fig5(spec, primary, others):
    primary.require(["t", "phi", "theta"])
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(primary["t"], primary["phi"], label="roll", color="tab:blue", linewidth=1.0)
    ax.plot(primary["t"], primary["theta"], label="pitch", color="tab:orange", linewidth=1.0)
    for bound in (spec.angle_bound, -spec.angle_bound):
        ax.axhline(bound, color="black", linewidth=0.8, linestyle="--")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("angle [rad]")
    ax.legend()
    ax.set_title("attitude angles and safety bounds")
    return fig, {"max_abs_phi": float(np.max(np.abs(primary["phi"]))),
                 "max_abs_theta": float(np.max(np.abs(primary["theta"])))}


def _fig6(spec, primary, others):
    primary.require(["t", "f1", "f2", "f3", "f4", "mode"])
    fig, ax = plt.subplots(figsize=(8, 4.5))
    t = primary["t"]
    recovery = np.array([1.0 if m == "recovery" else 0.0 for m in primary["mode"]])
    _shade(ax, _flag_spans(t, recovery), color="orange", alpha=0.2)
    colors = ["tab:blue", "tab:green", "tab:purple", "tab:red"]
    for k, color in zip(range(1, 5), colors):
        ax.plot(t, primary[f"f{k}"], label=f"motor {k}", color=color, linewidth=0.9)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("thrust [N]")
    ax.legend(ncol=4, fontsize=8)
    ax.set_title("motor thrusts (recovery mode shaded)")
    return fig, {}


_RENDERERS = {1: _fig1, 2: _fig2, 3: _fig3, 4: _fig4, 5: _fig5, 6: _fig6}


def parse_figure_list(text: str) -> list[int]:
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if "-" in chunk:
            a, b = chunk.split("-")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(chunk))
    bad = [k for k in out if k not in range(1, 7)]
    if bad:
        raise ValueError(f"figure ids must be 1..6, got {bad}")
    return sorted(set(out))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="render_figures",
        description="Render case-study figures from simulation trace CSVs")
    parser.add_argument("trace", help="primary trace.csv")
    parser.add_argument("--compare", default=None,
                        help="second trace overlaid on figures 1 and 2 (e.g. detection off)")
    parser.add_argument("--figures", default="1,2,3,4,5,6",
                        help="comma/range list, e.g. 1,2 or 1-6 (default: all)")
    parser.add_argument("--out", default="figures", help="output directory (default: figures/)")
    parser.add_argument("--reference-z", type=float, default=5.0)
    parser.add_argument("--angle-bound", type=float, default=DEFAULT_ANGLE_BOUND)
    parser.add_argument("--c-bar", type=float, default=DEFAULT_C_BAR)
    parser.add_argument("--eta-tau-half", type=float, default=DEFAULT_ETA_TAU_HALF,
                        help="eta*tau/2 offset added to the figure-4 rate signal")
    args = parser.parse_args(argv)

    try:
        figures = parse_figure_list(args.figures)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out)
    for fig_id in figures:
        traces = [args.trace]
        if args.compare and fig_id in (1, 2):
            traces.append(args.compare)
        spec = FigureSpec(figure=fig_id, traces=tuple(traces),
                          out=out_dir / f"fig{fig_id}.png",
                          reference_z=args.reference_z, angle_bound=args.angle_bound,
                          c_bar=args.c_bar, eta_tau_half=args.eta_tau_half)
        try:
            summary = render(spec)
        except (TraceError, OSError, ValueError) as exc:
            print(f"error rendering figure {fig_id}: {exc}", file=sys.stderr)
            return 1
        extras = {k: v for k, v in summary.items() if k != "out"}
        print(f"fig{fig_id}: {summary['out']}" + (f" {extras}" if extras else ""))
    return 0


if __name__ == "__main__":
    sys.exit(main())
