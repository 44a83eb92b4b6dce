import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cbfguard.cli import main
from cbfguard.config import (
    ConfigError,
    ScenarioConfig,
    build_scenario,
    load_and_validate,
    resolve_config_path,
    save,
    serialize,
)

PAPER_CFG = resolve_config_path("quadrotor_paper.cfg")
SCALAR_CFG = resolve_config_path("scalar_soundness.cfg")


class TestLoadValidate:
    def test_paper_config_loads_with_case_study_values(self):
        cfg = load_and_validate(PAPER_CFG)
        assert cfg.t_bar == 0.934
        assert cfg.t_na == 2.238
        assert cfg.tau == 1e-3
        assert cfg.delta_bar == 0.1
        assert cfg.f_max == 27.7
        assert cfg.mass == 4.493
        assert cfg.i_xx == 0.177 and cfg.i_zz == 0.344
        assert cfg.arm_length == 0.1 and cfg.yaw_coef == 0.0024
        assert cfg.reference == (0.0, 0.0, 5.0)
        assert cfg.x0[2] == 0.2
        assert cfg.vulnerable_motors == (4,)
        for name in ("quad_z", "quad_phi", "quad_theta"):
            assert cfg.barrier_overrides[name]["c_bar"] == 0.25 * 0.3 ** 2

    def test_dt_above_tau_rejected(self, tmp_path):
        cfg = serialize(ScenarioConfig())
        bad = cfg.replace("dt = 0.001", "dt = 0.01")
        path = tmp_path / "bad.cfg"
        path.write_text(bad)
        with pytest.raises(ConfigError) as err:
            load_and_validate(path)
        assert any("dt" in e and "tau" in e for e in err.value.errors)

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "typo.cfg"
        path.write_text("[model]\nkind = quadrotor\nmasss = 4.0\n\n[sim]\nhorizon = 1.0\n")
        with pytest.raises(ConfigError) as err:
            load_and_validate(path)
        assert any("masss" in e for e in err.value.errors)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "sec.cfg"
        path.write_text("[model]\nkind = quadrotor\n\n[sim]\nhorizon = 1.0\n\n[extras]\nfoo = 1\n")
        with pytest.raises(ConfigError) as err:
            load_and_validate(path)
        assert any("[extras]" in e for e in err.value.errors)

    def test_empty_file_lists_required_keys(self, tmp_path):
        path = tmp_path / "empty.cfg"
        path.write_text("")
        with pytest.raises(ConfigError) as err:
            load_and_validate(path)
        msgs = "\n".join(err.value.errors)
        assert "[model] kind" in msgs and "[sim] horizon" in msgs
        assert "default" in msgs

    def test_all_violations_reported_not_fail_fast(self, tmp_path):
        path = tmp_path / "multi.cfg"
        path.write_text(
            "[model]\nkind = quadrotor\nbogus = 1\n\n[sim]\nhorizon = 1.0\ndt = 0.5\n\n"
            "[detector]\ntau = 0.001\nrule = psychic\n")
        with pytest.raises(ConfigError) as err:
            load_and_validate(path)
        assert len(err.value.errors) >= 3

    def test_reference_outside_safe_set_rejected(self, tmp_path):
        text = serialize(ScenarioConfig()).replace("reference = 0.0, 0.0, 5.0",
                                                   "reference = 0.0, 0.0, -1.0")
        path = tmp_path / "ref.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError) as err:
            load_and_validate(path)
        assert any("reference" in e for e in err.value.errors)

    def test_explicit_schedule_must_respect_bounds(self, tmp_path):
        text = serialize(ScenarioConfig()).replace("schedule = ",
                                                   "schedule = 1.0:3.0")
        path = tmp_path / "sched.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError) as err:
            load_and_validate(path)
        assert any("schedule" in e for e in err.value.errors)

    def test_roundtrip_identity(self, tmp_path):
        for src in (PAPER_CFG, SCALAR_CFG):
            cfg = load_and_validate(src)
            path = tmp_path / "copy.cfg"
            save(cfg, path)
            again = load_and_validate(path)
            assert cfg == again


class TestBuildScenario:
    def test_paper_scenario_builds(self):
        cfg = load_and_validate(PAPER_CFG)
        scenario = build_scenario(cfg)
        assert scenario.model.m_s == 3 and scenario.model.m_v == 1
        assert len(scenario.bank) == 3
        assert scenario.schedule.intervals  # generated from the seed
        assert scenario.sim.horizon == 30.0

    def test_scalar_scenario_builds(self):
        cfg = load_and_validate(SCALAR_CFG)
        scenario = build_scenario(cfg)
        assert scenario.model.n == 1
        assert scenario.bank.barriers[0].c_bar == 0.3


def run_cli(*args):
    return main(list(args))


class TestCli:
    def test_simulate_writes_outputs(self, tmp_path):
        cfg = ScenarioConfig(kind="scalar", f_max=10.0, attack_authority=2.0,
                             disturbance_bound=0.03, t_na=0.6, horizon=1.0,
                             x0=(0.2,), reference=(0.95, 0.0, 0.0), kp_pos=30.0,
                             barrier_overrides={"line": {"c_bar": 0.3}})
        path = tmp_path / "mini.cfg"
        save(cfg, path)
        code = run_cli("simulate", str(path), "--out", str(tmp_path / "run1"))
        assert code == 0
        assert (tmp_path / "run1" / "trace.csv").exists()
        assert (tmp_path / "run1" / "metrics.txt").exists()

    def test_simulate_validation_error_exit_code(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("[model]\nkind = nonsense\n\n[sim]\nhorizon = 1.0\n")
        assert run_cli("simulate", str(path)) == 1

    def test_missing_config_exit_code(self):
        assert run_cli("simulate", "does_not_exist.cfg") == 1

    def test_certify_scalar(self, tmp_path, capsys):
        code = run_cli("certify", str(SCALAR_CFG), "--samples", "60",
                       "--out", str(tmp_path))
        assert code == 0
        text = (tmp_path / "certificates.txt").read_text()
        assert "A2" in text and "A3" in text
        assert "passed=true" in text

    def test_qp_check(self, capsys):
        assert run_cli("qp-check", "--n", "40", "--seed", "3") == 0
        out = capsys.readouterr().out
        assert "PASS" in out

    def test_batch_small(self, tmp_path):
        cfg = ScenarioConfig(kind="scalar", f_max=10.0, attack_authority=2.0,
                             disturbance_bound=0.03, t_na=0.6, horizon=2.0,
                             x0=(0.2,), reference=(0.95, 0.0, 0.0), kp_pos=30.0,
                             barrier_overrides={"line": {"c_bar": 0.3}})
        path = tmp_path / "mini.cfg"
        save(cfg, path)
        code = run_cli("batch", str(path), "--runs", "3", "--seed-base", "5",
                       "--out", str(tmp_path / "batch"), "--certify-samples", "40")
        assert code == 0
        agg = (tmp_path / "batch" / "aggregate.txt").read_text()
        assert "false_negatives = 0" in agg
        assert (tmp_path / "batch" / "certificates.txt").exists()
        assert (tmp_path / "batch" / "metrics_000.txt").exists()

    def test_console_entrypoint(self):
        proc = subprocess.run([sys.executable, "-m", "cbfguard.cli", "--help"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        for sub in ("simulate", "batch", "certify", "qp-check"):
            assert sub in proc.stdout

    def test_out_root_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv("CBFGUARD_OUT_ROOT", str(tmp_path / "root"))
        cfg = ScenarioConfig(kind="scalar", f_max=10.0, attack_authority=2.0,
                             disturbance_bound=0.03, t_na=0.6, horizon=0.5,
                             x0=(0.2,), reference=(0.95, 0.0, 0.0), kp_pos=30.0,
                             barrier_overrides={"line": {"c_bar": 0.3}},
                             out_dir="sub")
        path = tmp_path / "mini.cfg"
        save(cfg, path)
        assert run_cli("simulate", str(path)) == 0
        assert (tmp_path / "root" / "sub" / "trace.csv").exists()


class TestCertifyEstimateConstants:
    def test_estimate_constants_flag(self, tmp_path, capsys):
        code = run_cli("certify", str(SCALAR_CFG), "--samples", "40",
                       "--estimate-constants", "--out", str(tmp_path))
        assert code == 0
        text = (tmp_path / "certificates.txt").read_text()
        assert "estimated constants" in text
        assert "eta=" in text and "l_B=" in text and "c_M=" in text
