"""Scenario configuration: a single human-editable INI file per experiment,
with sections mirroring the runtime modules, full validation (every
violation reported, not fail-fast), and exact round-trip serialization."""

import configparser
import io
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .attack import AttackSchedule, AttackSignal, generate_schedule
from .barrier import BUILTIN_QUAD_BARRIERS, BarrierBank, BarrierSpec, compute_cM
from .certifier import EnvelopeBox
from .dynamics import (
    DisturbanceSampler,
    InputBounds,
    QuadrotorParams,
    as_affine_in_motors,
    motor_bounds,
    scalar_integrator,
)
from .guard import ControllerConfig, QuadTrackingLaw, ScalarTrackingLaw
from .sim import Scenario, SimConfig


class ConfigError(ValueError):
    """Carries every validation violation found in a scenario file."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario config:\n  - " + "\n  - ".join(self.errors))


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "on", "1"):
        return True
    if t in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_floats(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    return tuple(float(tok) for tok in text.replace(";", ",").split(",") if tok.strip())


def _parse_ints(text: str) -> tuple:
    return tuple(int(round(v)) for v in _parse_floats(text))


def _parse_intervals(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    out = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        a, b = chunk.split(":")
        out.append((float(a), float(b)))
    return tuple(out)


def _fmt_floats(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def _fmt_intervals(values) -> str:
    return ", ".join(f"{repr(float(a))}:{repr(float(b))}" for a, b in values)


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated, serializable description of one experiment."""

    # [model]
    kind: str = "quadrotor"
    mass: float = 4.493
    i_xx: float = 0.177
    i_yy: float = 0.177
    i_zz: float = 0.344
    k_t: float = 1.0
    k_r: float = 1.5
    arm_length: float = 0.1
    yaw_coef: float = 0.0024
    gravity: float = 9.8
    f_max: float = 27.7
    vulnerable_motors: tuple = (4,)
    disturbance_bound: float = 0.02
    disturbance_kind: str = "ball"
    # [barriers] + per-barrier overrides
    barrier_names: tuple = ("quad_z", "quad_phi", "quad_theta")
    barrier_overrides: dict = field(default_factory=dict)
    # [detector]
    tau: float = 1e-3
    delta_bar: float = 0.1
    rule: str = "adaptive"
    boundary_tol: float = 1e-6
    # [controller]
    reference: tuple = (0.0, 0.0, 5.0)
    kp_pos: float = 1.0
    kd_pos: float = 2.4
    kp_att: float = 9.0
    kd_att: float = 5.0
    kp_yaw: float = 1.5
    kd_yaw: float = 1.0
    kappa_out: float = 20.0
    fallback: str = "min_violation"
    # [attack]
    attack_kind: str = "greedy_adversarial"
    attack_authority: float = 18.0
    t_bar: float = 0.934
    t_na: float = 2.238
    schedule: tuple = ()
    constant_value: float = -12.0
    amplitude: float = 12.0
    frequency: float = 0.5
    # [sim]
    dt: float = 1e-3
    horizon: float = 30.0
    detection_enabled: bool = True
    attack_enabled: bool = True
    recovery_enabled: bool = True
    seed_disturbance: int = 1
    seed_attack: int = 8
    x0: tuple = (0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    # [certifier]
    cert_samples: int = 10_000
    cert_seed: int = 0
    envelope_z: tuple = (0.02, 6.0)
    envelope_vz: tuple = (-1.5, 1.5)
    envelope_angle: float = 0.3
    envelope_rate: float = 0.5
    envelope_vxy: float = 1.0
    eta_factor: float = 1.5
    lb_factor: float = 1.2
    # [output]
    out_dir: str = "out"


# section -> key -> (field name, parser, formatter)
_SCHEMA = {
    "model": {
        "kind": ("kind", str.strip, str),
        "mass": ("mass", float, repr),
        "i_xx": ("i_xx", float, repr),
        "i_yy": ("i_yy", float, repr),
        "i_zz": ("i_zz", float, repr),
        "k_t": ("k_t", float, repr),
        "k_r": ("k_r", float, repr),
        "arm_length": ("arm_length", float, repr),
        "yaw_coef": ("yaw_coef", float, repr),
        "gravity": ("gravity", float, repr),
        "f_max": ("f_max", float, repr),
        "vulnerable_motors": ("vulnerable_motors", _parse_ints, lambda v: ", ".join(str(i) for i in v)),
        "disturbance_bound": ("disturbance_bound", float, repr),
        "disturbance_kind": ("disturbance_kind", str.strip, str),
    },
    "barriers": {
        "names": ("barrier_names", lambda s: tuple(tok.strip() for tok in s.split(",") if tok.strip()),
                  lambda v: ", ".join(v)),
    },
    "detector": {
        "tau": ("tau", float, repr),
        "delta_bar": ("delta_bar", float, repr),
        "rule": ("rule", str.strip, str),
        "boundary_tol": ("boundary_tol", float, repr),
    },
    "controller": {
        "reference": ("reference", _parse_floats, _fmt_floats),
        "kp_pos": ("kp_pos", float, repr),
        "kd_pos": ("kd_pos", float, repr),
        "kp_att": ("kp_att", float, repr),
        "kd_att": ("kd_att", float, repr),
        "kp_yaw": ("kp_yaw", float, repr),
        "kd_yaw": ("kd_yaw", float, repr),
        "kappa_out": ("kappa_out", float, repr),
        "fallback": ("fallback", str.strip, str),
    },
    "attack": {
        "kind": ("attack_kind", str.strip, str),
        "authority": ("attack_authority", float, repr),
        "t_bar": ("t_bar", float, repr),
        "t_na": ("t_na", float, repr),
        "schedule": ("schedule", _parse_intervals, _fmt_intervals),
        "constant_value": ("constant_value", float, repr),
        "amplitude": ("amplitude", float, repr),
        "frequency": ("frequency", float, repr),
    },
    "sim": {
        "dt": ("dt", float, repr),
        "horizon": ("horizon", float, repr),
        "detection_enabled": ("detection_enabled", _parse_bool, lambda v: str(v).lower()),
        "attack_enabled": ("attack_enabled", _parse_bool, lambda v: str(v).lower()),
        "recovery_enabled": ("recovery_enabled", _parse_bool, lambda v: str(v).lower()),
        "seed_disturbance": ("seed_disturbance", int, str),
        "seed_attack": ("seed_attack", int, str),
        "x0": ("x0", _parse_floats, _fmt_floats),
    },
    "certifier": {
        "n_samples": ("cert_samples", int, str),
        "seed": ("cert_seed", int, str),
        "envelope_z": ("envelope_z", _parse_floats, _fmt_floats),
        "envelope_vz": ("envelope_vz", _parse_floats, _fmt_floats),
        "envelope_angle": ("envelope_angle", float, repr),
        "envelope_rate": ("envelope_rate", float, repr),
        "envelope_vxy": ("envelope_vxy", float, repr),
        "eta_factor": ("eta_factor", float, repr),
        "lb_factor": ("lb_factor", float, repr),
    },
    "output": {
        "out_dir": ("out_dir", str.strip, str),
    },
}

_BARRIER_OVERRIDE_KEYS = ("alpha", "eta", "l_b", "c_bar")
_REQUIRED = (("model", "kind"), ("sim", "horizon"))


def resolve_config_path(name_or_path) -> Path:
    """Resolve a config argument: an existing path wins, otherwise the
    packaged configs directory is searched."""
    p = Path(name_or_path)
    if p.exists():
        return p
    packaged = resources.files("cbfguard").joinpath("configs", p.name)
    if packaged.is_file():
        return Path(str(packaged))
    raise FileNotFoundError(f"config not found: {name_or_path}")


def load_and_validate(path) -> ScenarioConfig:
    """Parse and validate a scenario file; raises ConfigError listing every
    violation found (unknown keys, missing required keys, cross-field
    inconsistencies)."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    errors = []
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise
    except (configparser.Error, OSError) as exc:
        raise ConfigError([f"unparseable config: {exc}"])

    values = {}
    overrides = {}
    for section in parser.sections():
        if section.startswith("barrier."):
            bname = section.split(".", 1)[1]
            overrides[bname] = {}
            for key, raw in parser.items(section):
                if key not in _BARRIER_OVERRIDE_KEYS:
                    errors.append(f"unknown key [{section}] {key} (allowed: {', '.join(_BARRIER_OVERRIDE_KEYS)})")
                    continue
                try:
                    overrides[bname][key] = float(raw)
                except ValueError:
                    errors.append(f"[{section}] {key}: not a number: {raw!r}")
            continue
        if section not in _SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                errors.append(f"unknown key [{section}] {key}")
                continue
            field_name, parse, _ = _SCHEMA[section][key]
            try:
                values[field_name] = parse(raw)
            except (ValueError, TypeError) as exc:
                errors.append(f"[{section}] {key}: {exc}")

    for section, key in _REQUIRED:
        field_name = _SCHEMA[section][key][0]
        if field_name not in values:
            errors.append(
                f"missing required key [{section}] {key}; every other key has a "
                f"documented default (see ScenarioConfig)")

    # Cross-field checks still run on whatever parsed, so a single pass
    # reports every violation rather than stopping at the first.
    cfg = ScenarioConfig(barrier_overrides=overrides, **values)
    errors.extend(_cross_validate(cfg))
    if errors:
        raise ConfigError(errors)
    return cfg


def _cross_validate(cfg: ScenarioConfig) -> list:
    errors = []
    if cfg.kind not in ("quadrotor", "scalar"):
        errors.append(f"[model] kind must be quadrotor or scalar, got {cfg.kind!r}")
        return errors
    if cfg.dt <= 0 or cfg.tau <= 0 or cfg.dt > cfg.tau:
        errors.append(f"[sim]/[detector] need 0 < dt <= tau, got dt={cfg.dt}, tau={cfg.tau}")
    if cfg.horizon <= 0:
        errors.append("[sim] horizon must be positive")
    if cfg.rule not in ("adaptive", "boundary"):
        errors.append(f"[detector] rule must be adaptive or boundary, got {cfg.rule!r}")
    if cfg.attack_kind not in ("constant", "uniform_random", "sinusoid", "greedy_adversarial"):
        errors.append(f"[attack] unknown kind {cfg.attack_kind!r}")
    if cfg.fallback != "min_violation":
        errors.append(f"[controller] unknown fallback policy {cfg.fallback!r}")
    if cfg.disturbance_kind not in ("ball", "sinusoid", "none"):
        errors.append(f"[model] unknown disturbance_kind {cfg.disturbance_kind!r}")
    if cfg.attack_authority <= 0 or cfg.attack_authority > cfg.f_max:
        errors.append("[attack] authority must lie in (0, f_max]")
    if cfg.schedule:
        try:
            AttackSchedule(intervals=cfg.schedule, T_bar=cfg.t_bar, T_na=cfg.t_na)
        except Exception as exc:
            errors.append(f"[attack] explicit schedule inconsistent with t_bar/t_na: {exc}")

    if cfg.kind == "quadrotor":
        if len(cfg.x0) != 12:
            errors.append(f"[sim] x0 needs 12 components, got {len(cfg.x0)}")
        if not set(cfg.vulnerable_motors) <= {1, 2, 3, 4}:
            errors.append("[model] vulnerable_motors must be within 1..4")
        elif len(set(cfg.vulnerable_motors)) >= 4:
            errors.append("[model] at least one motor must stay secure")
        unknown = [n for n in cfg.barrier_names if n not in BUILTIN_QUAD_BARRIERS]
        if unknown:
            errors.append(f"[barriers] unknown names {unknown}; builtin: {sorted(BUILTIN_QUAD_BARRIERS)}")
        for bname in cfg.barrier_overrides:
            if bname not in cfg.barrier_names:
                errors.append(f"[barrier.{bname}] overrides a barrier not listed in [barriers] names")
        if not errors:
            try:
                bank = _build_bank(cfg)
                for spec, grid in zip(bank, _cM_grids(cfg)):
                    c_M = compute_cM(spec, grid)
                    if spec.c_bar >= c_M:
                        errors.append(
                            f"[barrier.{spec.name}] c_bar={spec.c_bar:g} must be below the "
                            f"grid-estimated c_M={c_M:g}")
                x0 = np.asarray(cfg.x0)
                if not bank.check_joint_safe(x0):
                    errors.append("[sim] x0 lies outside the safe set")
                ref_state = np.zeros(12)
                ref_state[0:3] = cfg.reference
                if not bank.check_joint_safe(ref_state):
                    errors.append("[controller] reference lies outside the safe set")
            except Exception as exc:
                errors.append(f"barrier construction failed: {exc}")
    else:
        if len(cfg.x0) != 1:
            errors.append(f"[sim] scalar model x0 needs 1 component, got {len(cfg.x0)}")
    return errors


def _quad_params(cfg: ScenarioConfig) -> QuadrotorParams:
    return QuadrotorParams(m=cfg.mass, I_xx=cfg.i_xx, I_yy=cfg.i_yy, I_zz=cfg.i_zz,
                           k_t=cfg.k_t, k_r=cfg.k_r, l=cfg.arm_length, d_coef=cfg.yaw_coef,
                           g_acc=cfg.gravity, f_max=cfg.f_max)


def _build_bank(cfg: ScenarioConfig) -> BarrierBank:
    specs = []
    for name in cfg.barrier_names:
        kwargs = {}
        ov = cfg.barrier_overrides.get(name, {})
        if "alpha" in ov:
            kwargs["alpha"] = ov["alpha"]
        if "eta" in ov:
            kwargs["eta"] = ov["eta"]
        if "l_b" in ov:
            kwargs["l_B"] = ov["l_b"]
        if "c_bar" in ov:
            kwargs["c_bar"] = ov["c_bar"]
        specs.append(BUILTIN_QUAD_BARRIERS[name](**kwargs))
    return BarrierBank(tuple(specs))


def _cM_grids(cfg: ScenarioConfig):
    """Per-barrier grids of safe-set states over the certifier envelope."""
    grids = []
    z_lo, z_hi = cfg.envelope_z
    for name in cfg.barrier_names:
        grid = []
        if name == "quad_z":
            for z in np.linspace(max(z_lo, 0.0201), z_hi, 40):
                s = np.zeros(12)
                s[2] = z
                grid.append(s)
        else:
            idx = 6 if name == "quad_phi" else 7
            for v in np.linspace(-cfg.envelope_angle, cfg.envelope_angle, 41):
                s = np.zeros(12)
                s[idx] = v
                grid.append(s)
        grids.append(grid)
    return grids


def envelope_from_config(cfg: ScenarioConfig) -> EnvelopeBox:
    from .certifier import quad_envelope

    if cfg.kind == "scalar":
        return EnvelopeBox(lo=[-0.5], hi=[1.0])
    return quad_envelope(z_range=tuple(cfg.envelope_z), vz_range=tuple(cfg.envelope_vz),
                         angle=cfg.envelope_angle, rate=cfg.envelope_rate, vxy=cfg.envelope_vxy)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """Assemble runtime objects from a validated configuration."""
    if cfg.kind == "quadrotor":
        params = _quad_params(cfg)
        model = as_affine_in_motors(params, set(cfg.vulnerable_motors),
                                    delta=cfg.disturbance_bound)
        bank = _build_bank(cfg)
        u_v_bounds = InputBounds.from_box([-cfg.attack_authority] * model.m_v,
                                          [cfg.attack_authority] * model.m_v)
        controller = ControllerConfig(
            bank=bank,
            bounds_full=motor_bounds(params, model.m),
            bounds_secure=motor_bounds(params, model.m_s),
            u_v_bounds=u_v_bounds,
            tracking=QuadTrackingLaw(params=params, reference=np.asarray(cfg.reference),
                                     kp_pos=cfg.kp_pos, kd_pos=cfg.kd_pos,
                                     kp_att=cfg.kp_att, kd_att=cfg.kd_att,
                                     kp_yaw=cfg.kp_yaw, kd_yaw=cfg.kd_yaw),
            kappa_out=cfg.kappa_out,
        )
        n_dist = 12
    else:
        model = scalar_integrator(delta=cfg.disturbance_bound, m_s=1, m_v=1)
        ov = cfg.barrier_overrides.get("line", {})
        spec = BarrierSpec(name="line", B=lambda x: float(x[0]) - 1.0,
                           gradient=lambda x: np.array([1.0]),
                           eta=ov.get("eta", 1.0), lipschitz_lB=ov.get("l_b", 1.0),
                           c_bar=ov.get("c_bar", 0.1), c_M=1.0 + abs(float(cfg.x0[0])))
        bank = BarrierBank((spec,))
        u_v_bounds = InputBounds.from_box([-cfg.attack_authority], [cfg.attack_authority])
        controller = ControllerConfig(
            bank=bank,
            bounds_full=InputBounds.from_box([-cfg.f_max] * 2, [cfg.f_max] * 2),
            bounds_secure=InputBounds.from_box([-cfg.f_max], [cfg.f_max]),
            u_v_bounds=u_v_bounds,
            tracking=ScalarTrackingLaw(reference=float(cfg.reference[0]), kp=cfg.kp_pos),
            kappa_out=cfg.kappa_out,
        )
        n_dist = 1

    if cfg.schedule:
        schedule = AttackSchedule(intervals=cfg.schedule, T_bar=cfg.t_bar, T_na=cfg.t_na)
    else:
        schedule = generate_schedule(cfg.t_bar, cfg.t_na, horizon=cfg.horizon,
                                     seed=cfg.seed_attack, grid=cfg.dt)
    m_v = model.m_v
    signal = AttackSignal(
        kind=cfg.attack_kind, u_v_bounds=u_v_bounds,
        value=[cfg.constant_value] * m_v if cfg.attack_kind == "constant" else None,
        amplitude=cfg.amplitude, frequency=cfg.frequency, seed=cfg.seed_attack,
    ) if m_v else None

    return Scenario(
        model=model, bank=bank, controller=controller, schedule=schedule, signal=signal,
        disturbance=DisturbanceSampler(delta=cfg.disturbance_bound, kind=cfg.disturbance_kind,
                                       seed=cfg.seed_disturbance, n=n_dist),
        sim=SimConfig(dt=cfg.dt, horizon=cfg.horizon, tau=cfg.tau,
                      seed_disturbance=cfg.seed_disturbance, seed_attack=cfg.seed_attack,
                      detection_enabled=cfg.detection_enabled, attack_enabled=cfg.attack_enabled,
                      recovery_enabled=cfg.recovery_enabled),
        x0=np.asarray(cfg.x0, dtype=float),
        delta_bar=cfg.delta_bar, rule=cfg.rule, boundary_tol=cfg.boundary_tol,
        name=f"{cfg.kind}-seed{cfg.seed_attack}",
    )


def serialize(cfg: ScenarioConfig) -> str:
    """Canonical INI text; load(serialize(cfg)) == cfg."""
    parser = configparser.ConfigParser()
    for section, keys in _SCHEMA.items():
        parser[section] = {}
        for key, (field_name, _, fmt) in keys.items():
            parser[section][key] = fmt(getattr(cfg, field_name))
    for bname in sorted(cfg.barrier_overrides):
        section = f"barrier.{bname}"
        parser[section] = {}
        for key in _BARRIER_OVERRIDE_KEYS:
            if key in cfg.barrier_overrides[bname]:
                parser[section][key] = repr(float(cfg.barrier_overrides[bname][key]))
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(serialize(cfg))
