"""Sampling-based feasibility certificates: the one-state testbed passes
both assumptions; the quadrotor altitude row genuinely cannot be certified
against a worst-case motor attack (hover leaves no thrust margin once roll
balance pins motor 2), which the certificate reports honestly."""

from cbfguard.certifier import certify_A2, certify_A3, format_certificates
from cbfguard.config import build_scenario, envelope_from_config, load_and_validate, resolve_config_path

for name in ("scalar_soundness.cfg", "quadrotor_paper.cfg"):
    cfg = load_and_validate(resolve_config_path(name))
    scenario = build_scenario(cfg)
    env = envelope_from_config(cfg)
    certs = certify_A2(scenario.controller, scenario.model, scenario.bank,
                       cfg.delta_bar, n_samples=300, seed=0, envelope=env)
    certs += certify_A3(scenario.controller, scenario.model, scenario.bank,
                        n_samples=300, seed=0, envelope=env)
    print(f"== {name} ==")
    print(format_certificates(certs))
