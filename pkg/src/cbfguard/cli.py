"""Command-line entry point: scenario runs, batches, certification, and the
QP solver self-test.

Exit codes: 0 success, 1 config/validation error, 2 runtime abort,
3 acceptance-property violation in batch mode.
"""

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PROPERTY = 3


def _out_dir(args_out, cfg_out) -> Path:
    root = os.environ.get("CBFGUARD_OUT_ROOT")
    chosen = Path(args_out) if args_out else Path(cfg_out)
    if root and not chosen.is_absolute():
        chosen = Path(root) / chosen
    chosen.mkdir(parents=True, exist_ok=True)
    return chosen


def _load(path_arg):
    from .config import ConfigError, load_and_validate, resolve_config_path

    try:
        path = resolve_config_path(path_arg)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None
    try:
        return load_and_validate(path)
    except ConfigError as exc:
        print("config validation failed:", file=sys.stderr)
        for err in exc.errors:
            print(f"  - {err}", file=sys.stderr)
        return None


def cmd_simulate(args) -> int:
    from .config import build_scenario
    from .sim import SimulationAbort, run_scenario, write_metrics, write_trace

    cfg = _load(args.config)
    if cfg is None:
        return EXIT_VALIDATION
    out = _out_dir(args.out, cfg.out_dir)
    try:
        result = run_scenario(build_scenario(cfg))
    except SimulationAbort as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if result.metrics.divergent:
        write_metrics(out / "metrics.txt", result.metrics)
        print("simulation diverged; metrics marked divergent", file=sys.stderr)
        return EXIT_RUNTIME
    write_trace(out / "trace.csv", result.records)
    write_metrics(out / "metrics.txt", result.metrics)
    m = result.metrics
    print(f"wrote {out / 'trace.csv'} and {out / 'metrics.txt'}")
    print(f"safety_violated={str(m.safety_violated).lower()} flags={m.flag_count} "
          f"attacks={m.attack_count} false_negative={str(m.false_negative).lower()}")
    return EXIT_OK


def cmd_batch(args) -> int:
    from .certifier import certify_A2, certify_A3, format_certificates
    from .config import build_scenario, envelope_from_config
    from .sim import run_batch, write_metrics

    cfg = _load(args.config)
    if cfg is None:
        return EXIT_VALIDATION
    out = _out_dir(args.out, cfg.out_dir)

    certified = None
    if not args.skip_certify:
        scenario = build_scenario(cfg)
        envelope = envelope_from_config(cfg)
        samples = args.certify_samples or max(200, cfg.cert_samples // 10)
        try:
            certs = certify_A2(scenario.controller, scenario.model, scenario.bank,
                               cfg.delta_bar, n_samples=samples, seed=cfg.cert_seed,
                               envelope=envelope)
            certs += certify_A3(scenario.controller, scenario.model, scenario.bank,
                                n_samples=samples, seed=cfg.cert_seed, envelope=envelope)
        except Exception as exc:
            print(f"certification failed: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        certified = all(c.passed for c in certs)
        (out / "certificates.txt").write_text(format_certificates(certs) + "\n")
        print(f"certificates: {'all passed' if certified else 'FAILED'} "
              f"(details in {out / 'certificates.txt'})")

    configs = [
        replace(cfg, seed_disturbance=args.seed_base + i, seed_attack=args.seed_base + i)
        for i in range(args.runs)
    ]
    results, report, failures = run_batch(configs, parallelism=args.parallelism,
                                          out_dir=out, certified=certified)
    for i, (metrics, err) in enumerate(zip(results, failures)):
        if err is not None:
            print(f"run {i:3d}: ABORTED ({err})", file=sys.stderr)
            continue
        if metrics is not None:
            write_metrics(out / f"metrics_{i:03d}.txt", metrics)

    lines = [
        f"runs = {report.n_runs}",
        f"aborted_runs = {report.aborted_runs}",
        f"safety_violations = {report.safety_violations}",
        f"false_negatives = {report.false_negatives}",
        f"false_positives = {report.false_positives}",
        f"attacks = {report.attacks}",
        f"undetected_attacks = {report.undetected_attacks}",
        f"zero_delay_detections = {report.zero_delay_count}",
        f"nonzero_delay_detections = {report.nonzero_delay_count}",
        f"delays = {','.join(f'{d:.6f}' for d in report.delays)}",
        f"certified = {'none' if report.certified is None else str(report.certified).lower()}",
        f"soundness_asserted = {str(report.soundness_asserted).lower()}",
    ]
    (out / "aggregate.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if report.certified and (report.false_negatives > 0 or report.safety_violations > 0):
        print("acceptance property violated: certified config produced "
              "safety violations or false negatives", file=sys.stderr)
        return EXIT_PROPERTY
    if not args.skip_certify and not certified:
        print("warning: certificates failed; soundness property not asserted", file=sys.stderr)
    return EXIT_OK


def cmd_certify(args) -> int:
    from .certifier import certify_A2, certify_A3, estimate_constants, format_certificates
    from .config import build_scenario, envelope_from_config

    cfg = _load(args.config)
    if cfg is None:
        return EXIT_VALIDATION
    out = _out_dir(args.out, cfg.out_dir)
    scenario = build_scenario(cfg)
    envelope = envelope_from_config(cfg)
    samples = args.samples or cfg.cert_samples
    try:
        certs = certify_A2(scenario.controller, scenario.model, scenario.bank,
                           cfg.delta_bar, n_samples=samples, seed=cfg.cert_seed,
                           envelope=envelope)
        certs += certify_A3(scenario.controller, scenario.model, scenario.bank,
                            n_samples=samples, seed=cfg.cert_seed, envelope=envelope)
    except Exception as exc:
        print(f"certification failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = format_certificates(certs)
    if args.estimate_constants:
        lines = [text, "", "estimated constants (eta, l_B, c_M):"]
        for spec in scenario.bank:
            eta, l_B, c_M, _ = estimate_constants(
                scenario.model, spec, envelope, n_samples=200, seed=cfg.cert_seed,
                controller=scenario.controller,
                eta_factor=cfg.eta_factor, lb_factor=cfg.lb_factor, dt=cfg.dt)
            lines.append(f"  {spec.name}: eta={eta:.6g} l_B={l_B:.6g} c_M={c_M:.6g}")
        text = "\n".join(lines)
    (out / "certificates.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_qp_check(args) -> int:
    import numpy as np

    from .qp import solve, solve_by_enumeration

    sys.path.insert(0, str(Path(__file__).resolve().parent))
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    worst_kkt = 0.0
    for _ in range(args.n):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(0, 9))
        A = rng.normal(size=(n, n))
        Q = A.T @ A + 0.5 * np.eye(n)
        q = rng.normal(size=n)
        z0 = rng.normal(size=n)
        G = rng.normal(size=(m, n))
        h = G @ z0 + rng.uniform(0.05, 2.0, size=m)
        from .qp import QPProblem
        prob = QPProblem(Q=Q, q=q, G=G, h=h)
        sol = solve(prob)
        oracle = solve_by_enumeration(prob)
        if sol.status != "optimal" or oracle.status != "optimal":
            print(f"qp-check FAILED: solver status {sol.status}, oracle {oracle.status}",
                  file=sys.stderr)
            return EXIT_RUNTIME
        worst = max(worst, float(np.max(np.abs(sol.z_star - oracle.z_star))))
        worst_kkt = max(worst_kkt, sol.kkt_residual)
    ok = worst <= 1e-8 and worst_kkt <= 1e-9
    print(f"qp-check: {args.n} random problems, max |z - z_oracle| = {worst:.3e}, "
          f"max KKT residual = {worst_kkt:.3e} -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cbfguard",
        description="Barrier-based attack detection and recovery: simulation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario, write trace.csv and metrics.txt")
    p.add_argument("config", help="scenario file (path or packaged name)")
    p.add_argument("--out", default=None, help="output directory (default: [output] out_dir)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("batch", help="run N seeded scenarios and aggregate")
    p.add_argument("config")
    p.add_argument("--runs", type=int, default=100, help="number of seeded runs (default 100)")
    p.add_argument("--seed-base", type=int, default=0, help="first seed (default 0)")
    p.add_argument("--parallelism", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", default=None)
    p.add_argument("--skip-certify", action="store_true",
                   help="skip the certificate pre-check (soundness not asserted)")
    p.add_argument("--certify-samples", type=int, default=None,
                   help="band samples per barrier for the pre-check")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("certify", help="emit feasibility certificates")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--samples", type=int, default=None,
                   help="band samples per barrier (default: [certifier] n_samples)")
    p.add_argument("--estimate-constants", action="store_true",
                   help="also report estimated eta / l_B / c_M per barrier")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("qp-check", help="QP solver self-test against the enumeration oracle")
    p.add_argument("--n", type=int, default=500, help="number of random problems (default 500)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_qp_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
