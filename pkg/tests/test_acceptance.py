"""Acceptance suite for the guarded-control stack: eight numbered
criteria covering solver correctness against an enumeration oracle, the
rate-estimate error bound along closed-loop runs, batch detection
soundness on a certified configuration, end-to-end reproduction of the
quadrotor case study, detection-delay phenomenology, the worst-case
attack term, the threshold schedule, and the certificate implication.
Each criterion prints one pass/fail line with its measured numbers.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines live.
"""

import math
import time
from dataclasses import replace
from itertools import product

import numpy as np
import pytest

from cbfguard.attack import worst_case_rate_gain
from cbfguard.certifier import EnvelopeBox, certify_A2, certify_A3
from cbfguard.config import build_scenario, load_and_validate, resolve_config_path
from cbfguard.detector import GammaSchedule, gamma
from cbfguard.dynamics import InputBounds, scalar_integrator
from cbfguard.qp import QPProblem, solve, solve_by_enumeration
from cbfguard.sim import run_batch, run_scenario

PAPER_CFG = load_and_validate(resolve_config_path("quadrotor_paper.cfg"))
SCALAR_CFG = load_and_validate(resolve_config_path("scalar_soundness.cfg"))


def report(criterion: int, passed: bool, detail: str):
    print(f"\n[criterion {criterion}] {'PASS' if passed else 'FAIL'}: {detail}")
    assert passed, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def soundness_batch():
    """Certified config + 100-run batch shared by criteria 3 and 5."""
    scenario = build_scenario(SCALAR_CFG)
    from cbfguard.config import envelope_from_config

    envelope = envelope_from_config(SCALAR_CFG)
    certs = certify_A2(scenario.controller, scenario.model, scenario.bank,
                       SCALAR_CFG.delta_bar, n_samples=400, seed=SCALAR_CFG.cert_seed,
                       envelope=envelope)
    certs += certify_A3(scenario.controller, scenario.model, scenario.bank,
                        n_samples=400, seed=SCALAR_CFG.cert_seed, envelope=envelope)
    certified = all(c.passed for c in certs)
    configs = [replace(SCALAR_CFG, seed_disturbance=i, seed_attack=i) for i in range(100)]
    t0 = time.perf_counter()
    results, batch_report, failures = run_batch(configs, parallelism=2, certified=certified)
    wall = time.perf_counter() - t0
    return certs, certified, results, batch_report, failures, wall


class TestCriterion1:
    def test_qp_oracle_equivalence(self):
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        worst_gap = 0.0
        worst_kkt = 0.0
        for _ in range(500):
            n = int(rng.integers(1, 7))
            m = int(rng.integers(0, 9))
            A = rng.normal(size=(n, n))
            Q = A.T @ A + 0.5 * np.eye(n)
            q = rng.normal(size=n)
            z0 = rng.normal(size=n)
            G = rng.normal(size=(m, n))
            h = G @ z0 + rng.uniform(0.05, 2.0, size=m)
            prob = QPProblem(Q=Q, q=q, G=G, h=h)
            sol = solve(prob)
            oracle = solve_by_enumeration(prob)
            assert sol.status == "optimal" and oracle.status == "optimal"
            worst_gap = max(worst_gap, float(np.max(np.abs(sol.z_star - oracle.z_star))))
            worst_kkt = max(worst_kkt, sol.kkt_residual)
        wall = time.perf_counter() - t0
        ok = worst_gap <= 1e-8 and worst_kkt <= 1e-9 and wall < 10.0
        report(1, ok, f"500 QPs: max|z-z_oracle|={worst_gap:.2e} (<=1e-8), "
                      f"max KKT={worst_kkt:.2e} (<=1e-9), wall={wall:.1f}s (<10s)")


class TestCriterion2:
    def test_taylor_sandwich_over_seeded_runs(self):
        violations = 0
        worst_excess = 0.0
        external_checked = 0
        for i in range(20):
            cfg = replace(PAPER_CFG, horizon=8.0, seed_disturbance=100 + i,
                          seed_attack=100 + i)
            scenario = build_scenario(cfg)
            res = run_scenario(scenario)
            violations += res.metrics.sandwich_violations
            worst_excess = max(worst_excess, res.metrics.sandwich_max_excess)
            if i == 0:
                # independent recheck of the logged series against the bound
                etas = [spec.eta for spec in scenario.bank]
                fd = np.asarray(res.aux["fd"], dtype=float)
                bdot = np.asarray(res.aux["true_Bdot"], dtype=float)
                mask = np.isfinite(fd) & np.isfinite(bdot)
                for k in range(len(etas)):
                    m = mask[:, k]
                    excess = np.abs(bdot[m, k] - fd[m, k]) - etas[k] * cfg.tau / 2.0
                    assert np.all(excess <= 1e-6)
                    external_checked += int(np.sum(m))
        ok = violations == 0
        report(2, ok, f"20 seeded quadrotor runs: {violations} sandwich violations "
                      f"(worst excess {worst_excess:.2e}); {external_checked} samples "
                      f"recomputed externally")


class TestCriterion3:
    def test_soundness_batch(self, soundness_batch):
        certs, certified, results, batch_report, failures, wall = soundness_batch
        cert_detail = ", ".join(f"{c.assumption}/{c.barrier}:{'ok' if c.passed else 'FAIL'}"
                                for c in certs)
        ok = (certified
              and batch_report.aborted_runs == 0
              and batch_report.safety_violations == 0
              and batch_report.false_negatives == 0
              and wall < 300.0)
        report(3, ok, f"certificates [{cert_detail}]; 100 greedy-attack runs: "
                      f"{batch_report.safety_violations} violations, "
                      f"{batch_report.false_negatives} false negatives, wall={wall:.0f}s (<300s)")


class TestCriterion4:
    def test_case_study_reproduction(self):
        timings = {}
        t0 = time.perf_counter()
        crash = run_scenario(build_scenario(replace(
            PAPER_CFG, detection_enabled=False, recovery_enabled=False)))
        timings["no-detection"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        guarded = run_scenario(build_scenario(PAPER_CFG))
        timings["guarded"] = time.perf_counter() - t0

        mc, mg = crash.metrics, guarded.metrics
        a = mc.extras["min_z"] <= 0.02
        b = (not mg.safety_violated
             and mg.extras["min_z"] >= 0.02 - 1e-3
             and mg.extras["max_abs_phi"] <= 0.3 + 1e-3
             and mg.extras["max_abs_theta"] <= 0.3 + 1e-3
             and abs(mg.extras["terminal_z"] - 5.0) <= 0.5)
        c = (mc.extras["max_abs_motor"] <= 27.7 + 1e-8
             and mg.extras["max_abs_motor"] <= 27.7 + 1e-8)
        timing_ok = all(t < 60.0 for t in timings.values())
        ok = a and b and c and timing_ok
        report(4, ok,
               f"(a) crash without detection: min z={mc.extras['min_z']:.3f} (<=0.02) | "
               f"(b) guarded: min z={mg.extras['min_z']:.4f}, "
               f"max|phi|={mg.extras['max_abs_phi']:.3f}, max|theta|={mg.extras['max_abs_theta']:.3f}, "
               f"|z(30)-5|={abs(mg.extras['terminal_z'] - 5.0):.3f} (<=0.5) | "
               f"(c) max|motor|={max(mc.extras['max_abs_motor'], mg.extras['max_abs_motor']):.2f} "
               f"(<=27.7) | wall {timings['no-detection']:.0f}s/{timings['guarded']:.0f}s (<60s each)")

    def test_attack_schedule_respects_bounds(self):
        scenario = build_scenario(PAPER_CFG)
        for a, b in scenario.schedule.intervals:
            assert b - a <= PAPER_CFG.t_bar + 1e-9
        gaps = [a2 - b1 for (_, b1), (a2, _) in zip(scenario.schedule.intervals,
                                                    scenario.schedule.intervals[1:])]
        assert all(g >= PAPER_CFG.t_na - 1e-9 for g in gaps)


class TestCriterion5:
    def test_delay_distribution_and_undetected(self, soundness_batch):
        _, _, results, batch_report, _, _ = soundness_batch
        zero = batch_report.zero_delay_count
        nonzero = batch_report.nonzero_delay_count
        undetected = batch_report.undetected_attacks
        ok = (zero >= 1 and nonzero >= 1 and undetected >= 1
              and batch_report.safety_violations == 0)
        report(5, ok, f"matched delays: {zero} zero / {nonzero} nonzero; "
                      f"{undetected} undetected attacks with zero safety violations")


class TestCriterion6:
    def test_worst_case_term_vertex_oracle(self):
        rng = np.random.default_rng(99)
        worst = 0.0
        for _ in range(1000):
            m_v = int(rng.integers(1, 5))
            lie = rng.normal(size=m_v) * rng.uniform(0.1, 10.0)
            lo = -rng.uniform(0.05, 30.0, size=m_v)
            hi = rng.uniform(0.05, 30.0, size=m_v)
            bounds = InputBounds.from_box(lo, hi)
            brute = max(float(lie @ np.asarray(v)) for v in product(*zip(lo, hi)))
            worst = max(worst, abs(worst_case_rate_gain(lie, bounds) - brute))
        ok = worst <= 1e-12
        report(6, ok, f"1000 random (gradient, box) pairs: max |sup - brute force| = {worst:.2e} (<=1e-12)")


class TestCriterion7:
    def test_gamma_closed_form_and_monotonicity(self):
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(1000):
            delta_bar = float(rng.uniform(0.01, 2.0))
            c_bar = float(rng.uniform(0.001, 1.0))
            t_bar = float(rng.uniform(0.0, 50.0))
            t = t_bar + float(rng.uniform(0.0, 100.0))
            sched = GammaSchedule(delta_bar=delta_bar, c_bar=c_bar)
            closed = delta_bar * c_bar * math.exp(-delta_bar * (t - t_bar))
            worst = max(worst, abs(gamma(sched, t, t_bar) - closed))
        sched = GammaSchedule(delta_bar=0.1, c_bar=0.0225)
        values = [gamma(sched, t, 2.0) for t in np.linspace(2.0, 60.0, 500)]
        monotone = all(a > b for a, b in zip(values, values[1:]))
        ok = worst <= 1e-12 and monotone
        report(7, ok, f"closed form max deviation {worst:.2e} (<=1e-12) at 1000 times; "
                      f"monotone decreasing between anchors: {monotone}")


class TestCriterion8:
    def test_a3_implies_a2_at_zero_rate(self):
        from cbfguard.barrier import BarrierBank, BarrierSpec
        from cbfguard.guard import ControllerConfig

        rng = np.random.default_rng(31)
        implications = 0
        a3_passes = 0
        for _ in range(20):
            drift = float(rng.uniform(-1.0, 1.0))
            u_max = float(rng.uniform(0.2, 2.5))
            u_v_max = float(rng.uniform(0.1, 1.5))
            secure_max = float(rng.uniform(0.1, u_max))
            model = scalar_integrator(delta=float(rng.uniform(0.0, 0.1)),
                                      m_s=1, m_v=1, drift_rate=drift)
            spec = BarrierSpec(name="line", B=lambda x: float(x[0]) - 1.0,
                               gradient=lambda x: np.array([1.0]),
                               eta=1.0, lipschitz_lB=1.0, c_bar=0.1, c_M=1.0)
            bank = BarrierBank((spec,))
            cfg = ControllerConfig(
                bank=bank,
                bounds_full=InputBounds.from_box([-u_max] * 2, [u_max] * 2),
                bounds_secure=InputBounds.from_box([-secure_max], [secure_max]),
                u_v_bounds=InputBounds.from_box([-u_v_max], [u_v_max]))
            env = EnvelopeBox(lo=[0.0], hi=[1.0])
            seed = int(rng.integers(0, 10_000))
            a3 = certify_A3(cfg, model, bank, n_samples=50, seed=seed, envelope=env)
            a2 = certify_A2(cfg, model, bank, delta_bar=0.0, n_samples=50, seed=seed,
                            envelope=env)
            implications += 1
            if a3[0].passed:
                a3_passes += 1
                assert a2[0].passed, "A3 passed but A2 at zero rate failed"
        ok = implications == 20 and a3_passes >= 2
        report(8, ok, f"20 random configurations checked; A3 passed on {a3_passes}, "
                      f"implication held on all")
