"""Sampling-based checks of the two feasibility assumptions behind the
guard (nominal viability and recoverability under worst-case attack), and
estimation of the constants (eta, l_B, c_M) the analysis treats as known.

Certificates are sampled evidence over a declared envelope, not proofs;
they are labeled as such in all output.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .attack import worst_case_rate_gain
from .barrier import BarrierBank, BarrierSpec, compute_cM, effective_barrier, effective_value
from .dynamics import AffineModel, InputBounds
from .guard import ControllerConfig

MARGIN_CAP = 10.0


class CertifierError(ValueError):
    """Raised for unusable sampling regions or configurations."""


@dataclass(frozen=True)
class EnvelopeBox:
    """Axis-aligned sampling region: uniform over [lo, hi] per coordinate.

    Coordinates with lo == hi are pinned (inactive for the barrier at hand).
    """

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape or np.any(lo > hi):
            raise CertifierError("envelope needs lo <= hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, self.lo.shape[0]))


def quad_envelope(z_range=(0.02, 6.0), vz_range=(-2.0, 2.0), angle=0.3,
                  rate=1.0, vxy=1.0) -> EnvelopeBox:
    """Operating envelope for the quadrotor certificates."""
    lo = np.zeros(12)
    hi = np.zeros(12)
    lo[2], hi[2] = z_range
    lo[3:5], hi[3:5] = -vxy, vxy
    lo[5], hi[5] = vz_range
    lo[6:8], hi[6:8] = -angle, angle
    lo[9:12], hi[9:12] = -rate, rate
    return EnvelopeBox(lo=lo, hi=hi)


@dataclass
class Certificate:
    """Sampled-feasibility evidence for one assumption."""

    assumption: str                  # "A2" | "A3"
    barrier: str
    c_bar: float
    samples: int
    worst_margin: float
    passed: bool
    witnesses: list = field(default_factory=list)
    note: str = "sampled evidence over the declared envelope, not a proof"


def band_samples(spec: BarrierSpec, bank: BarrierBank, model: AffineModel,
                 envelope: EnvelopeBox, n_samples: int, rng: np.random.Generator,
                 c_bar: Optional[float] = None, max_batches: int = 400):
    """Rejection-sample states in `spec`'s detection band, inside the joint
    effective safe set, within the envelope."""
    c_bar = spec.c_bar if c_bar is None else c_bar
    out = []
    for _ in range(max_batches):
        batch = envelope.sample(rng, max(64, n_samples))
        for x in batch:
            value = effective_value(spec, model, x)
            if not (-c_bar < value <= 0.0):
                continue
            if any(effective_value(other, model, x) > 0.0 for other in bank if other is not spec):
                continue
            out.append(x)
            if len(out) >= n_samples:
                return out
    if not out:
        raise CertifierError(
            f"could not sample the band of barrier {spec.name!r} within the envelope")
    return out


def _feasibility_margin(G: np.ndarray, h: np.ndarray) -> float:
    """Signed minimax violation of {Gu <= h}: negative means strictly
    feasible with that much slack, positive means infeasible by that much."""
    m, n = G.shape
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([G, -np.ones((m, 1))])
    bounds = [(None, None)] * n + [(-MARGIN_CAP, None)]
    res = linprog(c, A_ub=A_ub, b_ub=h, bounds=bounds, method="highs")
    if not res.success:
        raise CertifierError(f"margin subproblem failed: {res.message}")
    return float(res.x[-1])


def _active_rows(bank, model, x, c_bar_override=None):
    """Barriers whose band (or beyond) contains x; the sampled barrier is
    always among them by construction."""
    rows = []
    for spec in bank:
        eff = effective_barrier(spec, model, x)
        c_bar = spec.c_bar if c_bar_override is None else c_bar_override
        if eff.value > -c_bar:
            rows.append((spec, eff))
    return rows


def certify_A2(cfg: ControllerConfig, model: AffineModel, bank: BarrierBank,
               delta_bar: float, n_samples: int = 10_000, seed: int = 0,
               envelope: Optional[EnvelopeBox] = None,
               c_bar: Optional[float] = None,
               pass_tol: float = 1e-7) -> list[Certificate]:
    """Nominal viability: at band samples there must exist u in U with the
    robust barrier rate at most -delta_bar * Btilde for every band-active
    barrier."""
    if envelope is None:
        envelope = quad_envelope()
    rng = np.random.default_rng(seed)
    certs = []
    for spec in bank:
        xs = band_samples(spec, bank, model, envelope, n_samples, rng, c_bar=c_bar)
        worst = -math.inf
        scored = []
        for x in xs:
            rows = _active_rows(bank, model, x, c_bar_override=c_bar)
            G = np.vstack([cfg.bounds_full.A] + [eff.lie_g[None, :] for _, eff in rows])
            h = np.concatenate([
                cfg.bounds_full.b,
                [-eff.lie_f - s.lipschitz_lB * model.disturbance_bound - delta_bar * eff.value
                 for s, eff in rows],
            ])
            margin = _feasibility_margin(G, h)
            scored.append((margin, x))
            worst = max(worst, margin)
        scored.sort(key=lambda pair: -pair[0])
        certs.append(Certificate(
            assumption="A2", barrier=spec.name,
            c_bar=spec.c_bar if c_bar is None else c_bar,
            samples=len(xs), worst_margin=worst, passed=worst <= pass_tol,
            witnesses=[x for _, x in scored[:10]],
        ))
    return certs


def certify_A3(cfg: ControllerConfig, model: AffineModel, bank: BarrierBank,
               n_samples: int = 10_000, seed: int = 0,
               envelope: Optional[EnvelopeBox] = None,
               c_bar: Optional[float] = None,
               pass_tol: float = 1e-7) -> list[Certificate]:
    """Recoverability: at band samples there must exist u_s in U_s keeping
    the robust barrier rate nonpositive against the worst attack in U_v,
    for every band-active barrier."""
    if envelope is None:
        envelope = quad_envelope()
    if cfg.u_v_bounds is None and model.m_v:
        raise CertifierError("certify_A3 needs attack bounds u_v_bounds")
    rng = np.random.default_rng(seed)
    m_s = model.m_s
    certs = []
    for spec in bank:
        xs = band_samples(spec, bank, model, envelope, n_samples, rng, c_bar=c_bar)
        worst = -math.inf
        scored = []
        for x in xs:
            rows = _active_rows(bank, model, x, c_bar_override=c_bar)
            G = np.vstack([cfg.bounds_secure.A] + [eff.lie_g[None, :m_s] for _, eff in rows])
            h = np.concatenate([
                cfg.bounds_secure.b,
                [-eff.lie_f - s.lipschitz_lB * model.disturbance_bound
                 - (worst_case_rate_gain(eff.lie_g[m_s:], cfg.u_v_bounds) if model.m_v else 0.0)
                 for s, eff in rows],
            ])
            margin = _feasibility_margin(G, h)
            scored.append((margin, x))
            worst = max(worst, margin)
        scored.sort(key=lambda pair: -pair[0])
        certs.append(Certificate(
            assumption="A3", barrier=spec.name,
            c_bar=spec.c_bar if c_bar is None else c_bar,
            samples=len(xs), worst_margin=worst, passed=worst <= pass_tol,
            witnesses=[x for _, x in scored[:10]],
        ))
    return certs


def estimate_constants(model: AffineModel, spec: BarrierSpec, envelope: EnvelopeBox,
                       n_samples: int = 200, seed: int = 0,
                       controller: Optional[ControllerConfig] = None,
                       eta_factor: float = 1.5, lb_factor: float = 1.2,
                       dt: float = 1e-3, rollout_steps: int = 40):
    """Estimate (eta, l_B, c_M) for one barrier over the envelope.

    l_B: lb_factor times the max sampled effective-barrier gradient norm.
    eta: eta_factor times the max second time derivative of the effective
    barrier, measured by a 5-point 4th-order stencil on substeps within
    each zero-order-hold control interval of short closed-loop rollouts
    (inputs are held constant inside an interval, so the within-interval
    curvature is exactly what the rate-estimate error bound needs).
    c_M: the grid-based depth of the raw safe set over the envelope.
    """
    from .guard import select_input
    from .sim import rk4_step

    rng = np.random.default_rng(seed)
    xs = envelope.sample(rng, n_samples)

    max_grad = 0.0
    for x in xs:
        eff = effective_barrier(spec, model, x)
        max_grad = max(max_grad, float(np.linalg.norm(eff.grad)))
    l_B = lb_factor * max_grad

    max_curvature = 0.0
    n_rollouts = max(4, n_samples // 10)
    offsets = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    stencil = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
    for x0 in xs[:n_rollouts]:
        x = np.asarray(x0, dtype=float).copy()
        for _ in range(rollout_steps):
            if controller is not None:
                u = select_input(controller, model, x, 0.0, in_window=False).u_model
            else:
                u = np.zeros(model.m)
            sub = dt / 4.0
            vals = np.empty(5)
            xi = x
            vals[0] = effective_value(spec, model, xi)
            for j in range(1, 5):
                xi = rk4_step(model, xi, u, None, sub)
                vals[j] = effective_value(spec, model, xi)
            curvature = abs(float(stencil @ vals) / sub ** 2)
            if math.isfinite(curvature):
                max_curvature = max(max_curvature, curvature)
            x = xi
            if float(np.max(np.abs(x))) > 1e4:
                break
    eta = max(eta_factor * max_curvature, 1e-6)

    grid = [x for x in xs if spec.B(x) <= 0.0]
    c_M = compute_cM(spec, grid) if grid else float("nan")
    diagnostics = {
        "max_grad_norm": max_grad,
        "max_within_step_curvature": max_curvature,
        "samples": n_samples,
        "rollouts": n_rollouts,
        "grid_based": True,
    }
    return eta, l_B, c_M, diagnostics


def sweep_c_bar(cfg: ControllerConfig, model: AffineModel, bank: BarrierBank,
                delta_bar: float, candidates, n_samples: int = 500, seed: int = 0,
                envelope: Optional[EnvelopeBox] = None) -> dict:
    """Report which candidate band depths pass both assumptions (no
    optimality criterion is defined; this only maps the passing range)."""
    passing = {}
    for c_bar in candidates:
        try:
            a2 = certify_A2(cfg, model, bank, delta_bar, n_samples, seed, envelope, c_bar=c_bar)
            a3 = certify_A3(cfg, model, bank, n_samples, seed, envelope, c_bar=c_bar)
            passing[float(c_bar)] = all(c.passed for c in a2 + a3)
        except CertifierError:
            passing[float(c_bar)] = False
    return passing


def format_certificates(certs: list[Certificate]) -> str:
    lines = []
    for c in certs:
        lines.append(
            f"[{c.assumption}] barrier={c.barrier} c_bar={c.c_bar:g} samples={c.samples} "
            f"worst_margin={c.worst_margin:.6g} passed={str(c.passed).lower()}")
        lines.append(f"    note: {c.note}")
    return "\n".join(lines)
