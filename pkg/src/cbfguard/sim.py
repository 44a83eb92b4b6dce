"""Closed-loop simulation: fixed-step integration wiring plant, disturbance,
attack, detector and guard; trace logging and detection/safety metrics.

Loop order per step k (state x_k at t_k): evaluate the barriers, update the
detector with the new samples (flags may fire at t_k and engage recovery in
the same step), select the commanded input, substitute the attack value on
the vulnerable channels if an attack is active, draw the held disturbance,
log, integrate. Safety bookkeeping uses the raw barriers B; detection and
control operate on the effective barriers.
"""

import csv
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attack import AttackSchedule, AttackSignal, attack_value
from .barrier import BarrierBank, evaluate_bank
from .detector import Detector
from .dynamics import AffineModel, DisturbanceSampler
from .guard import ControllerConfig, select_input


class SimulationAbort(RuntimeError):
    """Raised when the state leaves the numerical sanity envelope."""


def rk4_step(model: AffineModel, x: np.ndarray, u_full: np.ndarray,
             d: Optional[np.ndarray], dt: float) -> np.ndarray:
    """Classical 4th-order Runge-Kutta update with u and d held constant."""
    k1 = model.derivative(x, u_full, d)
    k2 = model.derivative(x + 0.5 * dt * k1, u_full, d)
    k3 = model.derivative(x + 0.5 * dt * k2, u_full, d)
    k4 = model.derivative(x + dt * k3, u_full, d)
    out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationAbort("non-finite state during integration")
    return out


@dataclass(frozen=True)
class SimConfig:
    """Integration and toggle settings for one run."""

    dt: float = 1e-3
    horizon: float = 30.0
    tau: float = 1e-3
    seed_disturbance: int = 0
    seed_attack: int = 0
    detection_enabled: bool = True
    attack_enabled: bool = True
    recovery_enabled: bool = True
    sanity_bound: float = 1e6

    def __post_init__(self):
        if not (0.0 < self.dt <= self.tau):
            raise ValueError(f"need 0 < dt <= tau, got dt={self.dt}, tau={self.tau}")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")


@dataclass
class Scenario:
    """Fully assembled runtime objects for one closed-loop run."""

    model: AffineModel
    bank: BarrierBank
    controller: ControllerConfig
    schedule: AttackSchedule
    signal: Optional[AttackSignal]
    disturbance: DisturbanceSampler
    sim: SimConfig
    x0: np.ndarray
    delta_bar: float = 0.1
    rule: str = "adaptive"
    boundary_tol: float = 1e-6
    name: str = "scenario"


@dataclass
class TraceRecord:
    """One log row; the CSV schema mirrors these fields in order."""

    t: float
    state: np.ndarray            # 12 components (or model.n for test systems)
    motors: np.ndarray           # applied thrusts, native motor order
    B: tuple                     # raw barrier values
    Btilde: tuple                # effective barrier values
    fd: tuple                    # rate estimates (nan while not ready)
    gamma: tuple                 # adaptive thresholds (nan before anchor)
    region: tuple                # interior | band | outside
    mode: str
    attack_active: bool
    flag_active: bool
    qp_status: str


@dataclass
class Metrics:
    """Detection and safety summary of one run."""

    safety_violated: bool = False
    first_violation_time: Optional[float] = None
    detections: list = field(default_factory=list)   # (flag_time, interval or None)
    delays: list = field(default_factory=list)        # matched detection delays
    false_positive_count: int = 0
    undetected_attack_count: int = 0
    attack_count: int = 0
    flag_count: int = 0
    min_B: tuple = ()
    min_Btilde: tuple = ()
    false_negative: bool = False
    first_false_negative_time: Optional[float] = None
    sandwich_violations: int = 0
    sandwich_max_excess: float = 0.0
    divergent: bool = False
    wall_clock: float = 0.0
    terminal_state: Optional[np.ndarray] = None
    schedule_intervals: tuple = ()
    extras: dict = field(default_factory=dict)


@dataclass
class SimResult:
    records: list
    metrics: Metrics
    aux: dict


def _native_motor_vector(u_model: np.ndarray, labels: tuple) -> np.ndarray:
    if not labels:
        return u_model.copy()
    out = np.zeros(len(labels))
    for idx, label in enumerate(labels):
        out[label - 1] = u_model[idx]
    return out


def run_scenario(scenario: Scenario) -> SimResult:
    """Run one closed-loop simulation and compute its metrics."""
    t_start = time.perf_counter()
    cfg, model, bank = scenario.controller, scenario.model, scenario.bank
    sim = scenario.sim
    n_steps = int(round(sim.horizon / sim.dt))
    history_len = int(np.ceil(sim.tau / sim.dt)) + 4
    detector = Detector(bank, model, delta_bar=scenario.delta_bar, tau=sim.tau,
                        window_T_bar=scenario.schedule.T_bar, rule=scenario.rule,
                        boundary_tol=scenario.boundary_tol, history_len=history_len)

    x = np.asarray(scenario.x0, dtype=float).copy()
    records: list[TraceRecord] = []
    metrics = Metrics(min_B=tuple(np.inf for _ in bank), min_Btilde=tuple(np.inf for _ in bank))
    n_barriers = len(bank)
    min_B = [np.inf] * n_barriers
    min_Bt = [np.inf] * n_barriers
    aux = {"true_Bdot": [], "fd": [], "u_applied": [], "disturbance": [], "H_applied": []}
    prev_u = None
    prev_d = None
    deltas = [spec.lipschitz_lB * model.disturbance_bound for spec in bank]

    for k in range(n_steps + 1):
        t = k * sim.dt
        if float(np.max(np.abs(x))) > sim.sanity_bound:
            metrics.divergent = True
            warnings.warn(f"state left sanity envelope at t={t:.3f}; aborting run")
            break

        effs = evaluate_bank(bank, model, x)
        diags = detector.update(t, [e.value for e in effs],
                                raise_flags=sim.detection_enabled)
        flag_active = sim.detection_enabled and detector.in_window(t)
        in_window = flag_active and sim.recovery_enabled
        attack_active = sim.attack_enabled and scenario.schedule.active(t)

        decision = select_input(cfg, model, x, t, in_window, effs=effs,
                                need_lambda_v=not attack_active)
        u_applied = decision.u_model.copy()
        if attack_active:
            u_applied[model.m_s:] = attack_value(
                scenario.signal, scenario.schedule, bank, model, x, t)

        # Taylor sandwich bookkeeping: the rate estimate spans [t - tau, t],
        # over which the previous step's input and disturbance were held.
        truth_row = []
        for i, (spec, eff) in enumerate(zip(bank, effs)):
            if prev_u is None:
                truth_row.append(float("nan"))
                continue
            bdot = eff.lie_f + float(eff.lie_g @ prev_u) + float(eff.grad @ prev_d)
            truth_row.append(bdot)
            fd = diags[i]["fd"]
            if fd is not None:
                excess = abs(bdot - fd) - spec.eta * sim.tau / 2.0
                if excess > 1e-6:
                    metrics.sandwich_violations += 1
                    metrics.sandwich_max_excess = max(metrics.sandwich_max_excess, excess)

        # Soundness bookkeeping: reaching the effective boundary with a
        # positive robust rate while no flag window is open is a missed
        # detection.
        H_row = []
        for i, (spec, eff) in enumerate(zip(bank, effs)):
            H_i = eff.lie_f + float(eff.lie_g @ u_applied) + deltas[i]
            H_row.append(H_i)
            if (sim.detection_enabled and eff.value >= 0.0 and H_i > 0.0
                    and not flag_active and not metrics.false_negative):
                metrics.false_negative = True
                metrics.first_false_negative_time = t

        raw_B = tuple(float(spec.B(x)) for spec in bank)
        for i in range(n_barriers):
            min_B[i] = min(min_B[i], raw_B[i])
            min_Bt[i] = min(min_Bt[i], effs[i].value)
        if not metrics.safety_violated and any(b > 0.0 for b in raw_B):
            metrics.safety_violated = True
            metrics.first_violation_time = t

        records.append(TraceRecord(
            t=t,
            state=x.copy(),
            motors=_native_motor_vector(u_applied, model.input_labels),
            B=raw_B,
            Btilde=tuple(e.value for e in effs),
            fd=tuple(float("nan") if d["fd"] is None else d["fd"] for d in diags),
            gamma=tuple(float("nan") if d["gamma"] is None else d["gamma"] for d in diags),
            region=tuple(d["region"] for d in diags),
            mode=decision.mode,
            attack_active=attack_active,
            flag_active=flag_active,
            qp_status=decision.qp_status,
        ))
        aux["true_Bdot"].append(truth_row)
        aux["fd"].append(records[-1].fd)
        aux["u_applied"].append(u_applied.copy())
        aux["H_applied"].append(H_row)

        if k == n_steps:
            break
        d = scenario.disturbance.value(t)
        aux["disturbance"].append(d.copy())
        try:
            x = rk4_step(model, x, u_applied, d, sim.dt)
        except SimulationAbort:
            metrics.divergent = True
            warnings.warn(f"integration aborted at t={t:.3f}")
            break
        prev_u, prev_d = u_applied, d

    metrics.min_B = tuple(min_B)
    metrics.min_Btilde = tuple(min_Bt)
    metrics.terminal_state = x.copy()
    metrics.schedule_intervals = scenario.schedule.intervals if sim.attack_enabled else ()
    _match_detections(metrics, detector.state.attack_flags(),
                      metrics.schedule_intervals, scenario.schedule.T_bar, sim.dt)
    if model.n == 12 and records:
        zs = np.array([r.state[2] for r in records])
        metrics.extras["min_z"] = float(np.min(zs))
        metrics.extras["terminal_z"] = float(records[-1].state[2])
        metrics.extras["max_abs_phi"] = float(np.max(np.abs([r.state[6] for r in records])))
        metrics.extras["max_abs_theta"] = float(np.max(np.abs([r.state[7] for r in records])))
        metrics.extras["max_abs_motor"] = float(np.max(np.abs([r.motors for r in records])))
    metrics.wall_clock = time.perf_counter() - t_start
    return SimResult(records=records, metrics=metrics, aux=aux)


def _match_detections(metrics: Metrics, flags, intervals, T_bar: float, dt: float):
    """Match flags to attack intervals: a flag matches an attack when it
    falls in [t1, t2 + T_bar]; the nearest preceding start wins. Matched
    delay is flag - t1 less one sample of measurement latency (an attack
    starting at t1 can first influence a sample at t1 + dt), floored at 0.
    """
    metrics.flag_count = len(flags)
    metrics.attack_count = len(intervals)
    matched_intervals = set()
    for f in flags:
        candidates = [iv for iv in intervals if iv[0] <= f <= iv[1] + T_bar]
        if not candidates:
            metrics.detections.append((f, None))
            metrics.false_positive_count += 1
            continue
        iv = max(candidates, key=lambda pair: pair[0])
        metrics.detections.append((f, iv))
        if iv not in matched_intervals:
            matched_intervals.add(iv)
            # Quantize to the sampling grid: an attack starting at t1 can
            # first influence a sample at t1 + dt, so a flag there counts as
            # zero-delay detection (and float dust cancels exactly).
            delay_steps = max(0, int(round((f - iv[0]) / dt)) - 1)
            metrics.delays.append(delay_steps * dt)
    metrics.undetected_attack_count = len(intervals) - len(matched_intervals)


@dataclass
class BatchReport:
    """Aggregate over a batch of runs."""

    n_runs: int
    safety_violations: int
    false_negatives: int
    false_positives: int
    undetected_attacks: int
    attacks: int
    delays: list
    divergent_runs: int
    aborted_runs: int
    certified: Optional[bool] = None
    soundness_asserted: bool = True

    @property
    def zero_delay_count(self) -> int:
        return sum(1 for d in self.delays if d == 0.0)

    @property
    def nonzero_delay_count(self) -> int:
        return sum(1 for d in self.delays if d > 0.0)


def run_batch(configs: list, parallelism: int = 1, out_dir=None,
              certified: Optional[bool] = None):
    """Run a list of scenario configurations (see config.build_scenario).

    Results are identical to sequential execution: every run's randomness is
    derived from its own config seeds, and results are collected in input
    order. Scenario failures are isolated and reported, not fatal. Traces of
    runs violating the soundness property are persisted under
    out_dir/counterexamples when out_dir is given.
    """
    results: list[Optional[Metrics]] = [None] * len(configs)
    failures: list[Optional[str]] = [None] * len(configs)
    traces: dict[int, list] = {}

    if parallelism <= 1 or len(configs) <= 1:
        outcomes = [_run_batch_job(cfg, idx) for idx, cfg in enumerate(configs)]
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            outcomes = list(pool.map(_run_batch_job, configs, range(len(configs))))

    for idx, metrics, err, trace in outcomes:
        results[idx] = metrics
        failures[idx] = err
        if trace is not None:
            traces[idx] = trace

    if out_dir is not None and traces:
        import pathlib
        ce_dir = pathlib.Path(out_dir) / "counterexamples"
        ce_dir.mkdir(parents=True, exist_ok=True)
        for idx, trace in traces.items():
            write_trace(ce_dir / f"run_{idx:03d}.csv", trace)

    ok = [m for m in results if m is not None]
    report = BatchReport(
        n_runs=len(configs),
        safety_violations=sum(1 for m in ok if m.safety_violated),
        false_negatives=sum(1 for m in ok if m.false_negative),
        false_positives=sum(m.false_positive_count for m in ok),
        undetected_attacks=sum(m.undetected_attack_count for m in ok),
        attacks=sum(m.attack_count for m in ok),
        delays=[d for m in ok for d in m.delays],
        divergent_runs=sum(1 for m in ok if m.divergent),
        aborted_runs=sum(1 for e in failures if e is not None),
        certified=certified,
        soundness_asserted=bool(certified),
    )
    if not report.soundness_asserted:
        warnings.warn("certificates missing or failed: batch soundness property not asserted")
    return results, report, failures


def _run_batch_job(cfg, idx):
    from .config import build_scenario

    try:
        result = run_scenario(build_scenario(cfg))
        bad = result.metrics.safety_violated or result.metrics.false_negative
        return idx, result.metrics, None, (result.records if bad else None)
    except Exception as exc:  # isolated per spec: one bad run must not kill the batch
        return idx, None, f"{type(exc).__name__}: {exc}", None


def trace_header(n_barriers: int) -> list[str]:
    cols = ["t", "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r",
            "f1", "f2", "f3", "f4"]
    for k in range(1, n_barriers + 1):
        cols += [f"B_{k}", f"Btilde_{k}", f"fd_{k}", f"gamma_{k}", f"region_{k}"]
    cols += ["mode", "attack_active", "flag_active", "qp_status"]
    return cols


def write_trace(path, records: list) -> None:
    """Write records as CSV with the fixed schema header.

    The schema carries 12 state and 4 motor columns; smaller test systems
    are zero-padded so downstream consumers see a uniform layout.
    """
    if not records:
        raise ValueError("empty trace")
    n_barriers = len(records[0].B)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trace_header(n_barriers))
        for r in records:
            row = [f"{r.t:.6f}"]
            state = list(r.state) + [0.0] * (12 - len(r.state))
            row += [repr(float(v)) for v in state[:12]]
            motors = list(r.motors) + [0.0] * (4 - len(r.motors))
            row += [repr(float(v)) for v in motors[:4]]
            for k in range(n_barriers):
                row += [repr(float(r.B[k])), repr(float(r.Btilde[k])),
                        repr(float(r.fd[k])), repr(float(r.gamma[k])), r.region[k]]
            row += [r.mode, int(r.attack_active), int(r.flag_active), r.qp_status]
            writer.writerow(row)


def write_metrics(path, metrics: Metrics) -> None:
    """Key-value metrics report (machine parseable, one `key = value` per line)."""
    lines = [
        f"safety_violated = {str(metrics.safety_violated).lower()}",
        f"first_violation_time = {_fmt_opt(metrics.first_violation_time)}",
        f"false_negative = {str(metrics.false_negative).lower()}",
        f"first_false_negative_time = {_fmt_opt(metrics.first_false_negative_time)}",
        f"attack_count = {metrics.attack_count}",
        f"flag_count = {metrics.flag_count}",
        f"false_positive_count = {metrics.false_positive_count}",
        f"undetected_attack_count = {metrics.undetected_attack_count}",
        f"delays = {','.join(f'{d:.6f}' for d in metrics.delays)}",
        f"sandwich_violations = {metrics.sandwich_violations}",
        f"sandwich_max_excess = {metrics.sandwich_max_excess:.9g}",
        f"divergent = {str(metrics.divergent).lower()}",
        f"wall_clock = {metrics.wall_clock:.3f}",
    ]
    for i, (b, bt) in enumerate(zip(metrics.min_B, metrics.min_Btilde), start=1):
        lines.append(f"min_B_{i} = {b!r}")
        lines.append(f"min_Btilde_{i} = {bt!r}")
    for key, value in metrics.extras.items():
        lines.append(f"{key} = {value!r}")
    if metrics.terminal_state is not None:
        lines.append("terminal_state = " + ",".join(repr(float(v)) for v in metrics.terminal_state))
    lines.append("schedule = " + ";".join(f"{a:.6f}:{b:.6f}" for a, b in metrics.schedule_intervals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt_opt(value) -> str:
    return "none" if value is None else f"{value:.6f}"


def read_metrics(path) -> dict:
    """Parse a metrics file back into a dict of strings."""
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                key, val = line.split("=", 1)
                out[key.strip()] = val.strip()
    return out
