"""Online feedback synthesis: the nominal law (all inputs) and the safe
recovery law (secure inputs against worst-case attacked inputs), both as
minimum-correction QPs around a tracking feedforward, plus the switching
input assignment driven by the detector's flag windows.

The raw minimum-norm objective cannot hold a hover (that needs nonzero
collective thrust), so both QPs optimize the deviation v from a nominal
tracking command; with a zero feedforward they reduce to the plain
minimum-norm form.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attack import worst_case_rate_gain
from .barrier import BarrierBank, EffectiveBarrier, effective_barrier, evaluate_bank
from .dynamics import (
    IPHI,
    IPSI,
    IP,
    IQ,
    IR,
    ITHETA,
    AffineModel,
    ControlInput,
    InputBounds,
    QuadrotorParams,
    mixing_matrix,
)
from .qp import QPProblem, QPSolution, solve

NOMINAL, RECOVERY = "nominal", "recovery"


class GuardError(ValueError):
    """Raised for invalid controller configuration."""


@dataclass(frozen=True)
class SwitchState:
    """Current input-assignment mode and when it last changed."""

    mode: str = NOMINAL
    last_transition: float = 0.0


@dataclass
class QuadTrackingLaw:
    """Small-angle PD cascades to a hover reference, mapped to motor thrusts.

    Outer loop turns position/velocity errors into desired accelerations,
    which set collective thrust and roll/pitch references; an inner PD loop
    produces torques. Yaw is steered gently toward zero and dropped entirely
    when allocating fewer than four motors (it is the least critical
    channel).
    """

    params: QuadrotorParams
    reference: np.ndarray
    kp_pos: float = 1.0
    kd_pos: float = 1.8
    kp_att: float = 9.0
    kd_att: float = 5.0
    kp_yaw: float = 1.5
    kd_yaw: float = 1.0
    max_angle_ref: float = 0.12
    max_accel: float = 5.0

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=float).ravel()
        if self.reference.shape != (3,):
            raise GuardError("tracking reference must be an (x, y, z) triple")

    def wrench_command(self, x: np.ndarray) -> np.ndarray:
        p = self.params
        pos, vel = x[0:3], x[3:6]
        phi, theta, psi = float(x[IPHI]), float(x[ITHETA]), float(x[IPSI])
        a_des = np.clip(self.kp_pos * (self.reference - pos) - self.kd_pos * vel,
                        -self.max_accel, self.max_accel)
        tilt = max(math.cos(phi) * math.cos(theta), 0.35)
        u_f = p.m * (p.g_acc + a_des[2]) / tilt

        cpsi, spsi = math.cos(psi), math.sin(psi)
        ax_b = a_des[0] * cpsi + a_des[1] * spsi
        ay_b = -a_des[0] * spsi + a_des[1] * cpsi
        theta_des = max(-self.max_angle_ref, min(self.max_angle_ref, ax_b / p.g_acc))
        phi_des = max(-self.max_angle_ref, min(self.max_angle_ref, -ay_b / p.g_acc))

        tau_p = p.I_xx * (self.kp_att * (phi_des - phi) - self.kd_att * float(x[IP]))
        tau_q = p.I_yy * (self.kp_att * (theta_des - theta) - self.kd_att * float(x[IQ]))
        psi_wrapped = math.atan2(math.sin(psi), math.cos(psi))
        tau_r = p.I_zz * (-self.kp_yaw * psi_wrapped - self.kd_yaw * float(x[IR]))
        return np.array([u_f, tau_p, tau_q, tau_r])


@dataclass
class ScalarTrackingLaw:
    """Proportional hold toward a setpoint for the builtin test systems;
    commands only the secure channel."""

    reference: float
    kp: float = 1.0

    def full_input(self, model: AffineModel, x: np.ndarray) -> np.ndarray:
        u = np.zeros(model.m)
        u[0] = self.kp * (self.reference - float(x[0]))
        return u

    def secure_input(self, model: AffineModel, x: np.ndarray) -> np.ndarray:
        return self.full_input(model, x)[: model.m_s]


@dataclass
class ControllerConfig:
    """Everything the guard needs besides the model itself."""

    bank: BarrierBank
    bounds_full: InputBounds
    bounds_secure: InputBounds
    u_v_bounds: Optional[InputBounds] = None
    tracking: Optional[QuadTrackingLaw] = None
    # Contraction gain (1/s) demanded outside the effective safe set, where
    # the sign-free slack variables cannot be allowed to relax the rows: the
    # rows there read  rate <= -l_B*delta - kappa_out * Btilde.
    kappa_out: float = 20.0
    _mix_cache: dict = field(default_factory=dict, repr=False)

    def feedforward_full(self, model: AffineModel, x: np.ndarray) -> np.ndarray:
        """Nominal tracking command for all inputs, model order, clipped."""
        if self.tracking is None:
            return np.zeros(model.m)
        if hasattr(self.tracking, "full_input"):
            f = self.tracking.full_input(model, x)
            return self.bounds_full.clip_to_box(f) if self.bounds_full.box is not None else f
        key = ("full", model.input_labels)
        if key not in self._mix_cache:
            M = mixing_matrix(self.tracking.params)[:, [i - 1 for i in model.input_labels]]
            self._mix_cache[key] = np.linalg.inv(M) if M.shape[0] == M.shape[1] else np.linalg.pinv(M)
        f = self._mix_cache[key] @ self.tracking.wrench_command(x)
        return self.bounds_full.clip_to_box(f) if self.bounds_full.box is not None else f

    def feedforward_secure(self, model: AffineModel, x: np.ndarray) -> np.ndarray:
        """Tracking command allocated over secure motors only.

        With fewer motors than wrench channels the yaw row is dropped and
        the remaining (thrust, roll, pitch) system is solved; extra rows are
        dropped in reverse priority if the secure set is smaller still.
        """
        if self.tracking is None:
            return np.zeros(model.m_s)
        if hasattr(self.tracking, "secure_input"):
            f = self.tracking.secure_input(model, x)
            return self.bounds_secure.clip_to_box(f) if self.bounds_secure.box is not None else f
        key = ("secure", model.input_labels, model.m_s)
        if key not in self._mix_cache:
            M = mixing_matrix(self.tracking.params)[:, [i - 1 for i in model.input_labels[: model.m_s]]]
            rows = list(range(4)) if model.m_s >= 4 else list(range(min(3, model.m_s)))
            self._mix_cache[key] = (rows, np.linalg.pinv(M[rows]))
        rows, pinv = self._mix_cache[key]
        f = pinv @ self.tracking.wrench_command(x)[rows]
        return self.bounds_secure.clip_to_box(f) if self.bounds_secure.box is not None else f


def worst_case_attack_term(spec, model: AffineModel, x: np.ndarray,
                           u_v_bounds: InputBounds,
                           eff: Optional[EffectiveBarrier] = None) -> float:
    """sup over the attack box U_v of L_{g_v} Btilde(x) u_v."""
    if eff is None:
        eff = effective_barrier(spec, model, x)
    return worst_case_rate_gain(eff.lie_g[model.m_s:], u_v_bounds)


def _effs(cfg: ControllerConfig, model: AffineModel, x: np.ndarray, effs) -> list:
    if effs is None:
        return evaluate_bank(cfg.bank, model, x)
    return list(effs)


def assemble_nominal_qp(cfg: ControllerConfig, model: AffineModel, x: np.ndarray,
                        effs=None, u_nom: Optional[np.ndarray] = None) -> QPProblem:
    """QP over (v, eta): minimally correct the nominal command subject to
    input bounds and one robust barrier-rate row per barrier.

    Row i:  L_f Bt_i + L_g Bt_i (u_nom + v) <= -eta * Bt_i - l_B,i * delta.
    """
    effs = _effs(cfg, model, x, effs)
    if u_nom is None:
        u_nom = cfg.feedforward_full(model, x)
    m = model.m
    A, b = cfg.bounds_full.A, cfg.bounds_full.b
    delta = model.disturbance_bound
    rows, rhs = [], []
    for spec, eff in zip(cfg.bank, effs):
        # The relaxation eta * Btilde only contracts inside the safe set;
        # outside (Btilde > 0) a sign-free eta would *loosen* the row, so the
        # slack coefficient is clamped there and the row demands contraction
        # proportional to the excursion (extended-class-K response).
        rows.append(np.concatenate([eff.lie_g, [min(eff.value, 0.0)]]))
        rhs.append(-eff.lie_f - float(eff.lie_g @ u_nom) - spec.lipschitz_lB * delta
                   - cfg.kappa_out * max(eff.value, 0.0))
    G = np.vstack([np.hstack([A, np.zeros((A.shape[0], 1))])] + [np.array(rows)])
    h = np.concatenate([b - A @ u_nom, np.array(rhs)])
    return QPProblem(Q=np.eye(m + 1), q=np.zeros(m + 1), G=G, h=h, trusted=True)


def assemble_safe_qp(cfg: ControllerConfig, model: AffineModel, x: np.ndarray,
                     effs=None, u_nom_s: Optional[np.ndarray] = None) -> QPProblem:
    """QP over (v_s, zeta): secure-input correction robust to any attack
    value in U_v.

    Row i:  L_f Bt_i + L_{g_s} Bt_i (u_nom_s + v_s)
            <= -zeta * Bt_i - l_B,i * delta - sup_{u_v} L_{g_v} Bt_i u_v.
    """
    if cfg.u_v_bounds is None and model.m_v > 0:
        raise GuardError("safe QP needs attack bounds u_v_bounds")
    effs = _effs(cfg, model, x, effs)
    if u_nom_s is None:
        u_nom_s = cfg.feedforward_secure(model, x)
    m_s = model.m_s
    A_s, b_s = cfg.bounds_secure.A, cfg.bounds_secure.b
    delta = model.disturbance_bound
    rows, rhs = [], []
    for spec, eff in zip(cfg.bank, effs):
        lie_g_s = eff.lie_g[:m_s]
        sup_term = worst_case_rate_gain(eff.lie_g[m_s:], cfg.u_v_bounds) if model.m_v else 0.0
        # Same clamp and extended-class-K response as the nominal rows.
        rows.append(np.concatenate([lie_g_s, [min(eff.value, 0.0)]]))
        rhs.append(-eff.lie_f - float(lie_g_s @ u_nom_s) - spec.lipschitz_lB * delta - sup_term
                   - cfg.kappa_out * max(eff.value, 0.0))
    G = np.vstack([np.hstack([A_s, np.zeros((A_s.shape[0], 1))])] + [np.array(rows)])
    h = np.concatenate([b_s - A_s @ u_nom_s, np.array(rhs)])
    return QPProblem(Q=np.eye(m_s + 1), q=np.zeros(m_s + 1), G=G, h=h, trusted=True)


def _feasible_seed(problem: QPProblem, effs, u_in_box: bool) -> Optional[np.ndarray]:
    """Cheap feasible start (v = 0, slack variable large enough), available
    whenever the feedforward respects the bounds and every barrier value is
    strictly negative. Saves the phase-1 subproblem on the hot path."""
    if not u_in_box:
        return None
    if any(eff.value >= -1e-9 for eff in effs):
        return None
    z = np.zeros(problem.n)
    # Barrier rows are the last len(effs) rows: [lie_g, value] z <= rhs.
    # With v = 0 they read value * slackvar <= rhs, so slackvar >= rhs/value.
    needed = [problem.h[-len(effs) + k] / problem.G[-len(effs) + k, -1] for k in range(len(effs))]
    z[-1] = max(0.0, max(needed) + 1e-6)
    if float(np.max(problem.G @ z - problem.h)) <= 0.0:
        return z
    return None


@dataclass
class GuardDecision:
    """Input selection result for one step."""

    u_model: np.ndarray          # commanded input, model order [u_s; u_v]
    mode: str
    qp_status: str
    m_s: int = 0
    eta_star: float = float("nan")   # nominal-QP slack variable at optimum
    zeta_star: float = float("nan")  # safe-QP slack variable at optimum
    solution: Optional[QPSolution] = None

    @property
    def control(self) -> ControlInput:
        return ControlInput(u_s=self.u_model[: self.m_s], u_v=self.u_model[self.m_s:])


def _solve_nominal(cfg, model, x, effs):
    u_nom = cfg.feedforward_full(model, x)
    delta = model.disturbance_bound
    feasible_direct = cfg.bounds_full.contains(u_nom, tol=1e-12) and all(
        eff.lie_f + float(eff.lie_g @ u_nom) + spec.lipschitz_lB * delta
        + cfg.kappa_out * max(eff.value, 0.0) <= 0.0
        for spec, eff in zip(cfg.bank, effs)
    )
    if feasible_direct:
        return u_nom, 0.0, "optimal_direct", None
    prob = assemble_nominal_qp(cfg, model, x, effs=effs, u_nom=u_nom)
    seed = _feasible_seed(prob, effs, cfg.bounds_full.contains(u_nom, tol=1e-12))
    sol = solve(prob, x0=seed)
    if sol.status == "optimal":
        v = sol.z_star[:-1]
        return u_nom + v, float(sol.z_star[-1]), "optimal", sol
    return None, float("nan"), "infeasible", sol


def _solve_safe(cfg, model, x, effs):
    u_nom_s = cfg.feedforward_secure(model, x)
    delta = model.disturbance_bound
    m_s = model.m_s
    ok_rows = cfg.bounds_secure.contains(u_nom_s, tol=1e-12) and all(
        eff.lie_f + float(eff.lie_g[:m_s] @ u_nom_s) + spec.lipschitz_lB * delta
        + cfg.kappa_out * max(eff.value, 0.0)
        + (worst_case_rate_gain(eff.lie_g[m_s:], cfg.u_v_bounds) if model.m_v else 0.0) <= 0.0
        for spec, eff in zip(cfg.bank, effs)
    )
    if ok_rows:
        return u_nom_s, 0.0, "optimal_direct", None
    prob = assemble_safe_qp(cfg, model, x, effs=effs, u_nom_s=u_nom_s)
    seed = _feasible_seed(prob, effs, cfg.bounds_secure.contains(u_nom_s, tol=1e-12))
    sol = solve(prob, x0=seed)
    if sol.status == "optimal":
        v_s = sol.z_star[:-1]
        return u_nom_s + v_s, float(sol.z_star[-1]), "optimal", sol
    # Fallback: lexicographic minimum violation over the barrier priority
    # classes (attitude before altitude for the quadrotor bank): input
    # bounds stay hard, high-priority rows are violated as little as
    # possible, then lower classes given the achieved levels. Rationale:
    # losing a high-priority barrier (attitude) forfeits the authority
    # needed by every other row, while low-priority ones (altitude) carry
    # physical headroom.
    u_s = u_nom_s + _lexicographic_min_violation(cfg, model, effs, prob)
    if cfg.bounds_secure.box is not None:
        u_s = cfg.bounds_secure.clip_to_box(u_s)
    return u_s, float("nan"), "infeasible_fallback", sol


def _lexicographic_min_violation(cfg, model, effs, prob: QPProblem) -> np.ndarray:
    """Lexicographic phase-1 over the full decision vector (v_s, zeta).

    Keeping the zeta column matters: rows of barriers deep in the interior
    remain absorbable through the slack term, so only rows that genuinely
    lack authority (boundary rows with clamped slack) register violations.
    Decision variables are (v_s, zeta, s); input-bound rows stay hard.
    """
    from scipy.optimize import linprog

    n_bar = len(effs)
    n_bounds = prob.n_constraints - n_bar
    G = prob.G          # includes the slack-variable column
    h = prob.h
    n = G.shape[1]      # m_s + 1
    classes = sorted({spec.recovery_priority for spec in cfg.bank}, reverse=True)
    hard_G = [G[:n_bounds]]
    hard_h = [h[:n_bounds]]
    var_bounds = [(None, None)] * (n - 1) + [(-1e6, 1e6), (0.0, None)]
    x_best = np.zeros(n)
    for cls in classes:
        idx = [n_bounds + k for k, spec in enumerate(cfg.bank) if spec.recovery_priority == cls]
        Gc, hc = G[idx], h[idx]
        Gh = np.vstack(hard_G)
        hh = np.concatenate(hard_h)
        c = np.zeros(n + 1)
        c[-1] = 1.0
        A_ub = np.vstack([
            np.hstack([Gh, np.zeros((Gh.shape[0], 1))]),
            np.hstack([Gc, -np.ones((len(idx), 1))]),
        ])
        b_ub = np.concatenate([hh, hc])
        res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=var_bounds, method="highs")
        if not res.success:
            return x_best[:-1]
        s_star = float(res.x[-1])
        x_best = res.x[:n]
        hard_G.append(Gc)
        hard_h.append(hc + s_star + 1e-9)
    return x_best[:-1]


def select_input(cfg: ControllerConfig, model: AffineModel, x: np.ndarray, t: float,
                 in_window: bool, effs=None, need_lambda_v: bool = True) -> GuardDecision:
    """Choose the commanded input for the current step.

    Outside flag windows the nominal QP commands every input; inside, the
    secure inputs come from the safe QP and the vulnerable slots carry the
    nominal law's values (the plant substitutes the attack signal whenever
    an attack is actually active). An infeasible nominal QP escalates to the
    recovery synthesis; an infeasible safe QP falls back to the
    minimum-violation input.

    need_lambda_v=False tells a recovery-mode call that the vulnerable slots
    will be overwritten by the plant, skipping their synthesis.
    """
    effs = _effs(cfg, model, x, effs)
    if not in_window:
        u_full, eta_star, status, sol = _solve_nominal(cfg, model, x, effs)
        if u_full is not None:
            return GuardDecision(u_model=u_full, mode=NOMINAL, qp_status=status,
                                 m_s=model.m_s, eta_star=eta_star, solution=sol)
        # Escalate: nominal infeasible, use recovery synthesis for u_s.
        u_s, zeta_star, _, s_sol = _solve_safe(cfg, model, x, effs)
        u_v = cfg.feedforward_full(model, x)[model.m_s:]
        return GuardDecision(u_model=np.concatenate([u_s, u_v]), mode=NOMINAL,
                             qp_status="nominal_escalated", m_s=model.m_s,
                             zeta_star=zeta_star, solution=s_sol)

    u_s, zeta_star, status, sol = _solve_safe(cfg, model, x, effs)
    eta_star = float("nan")
    if need_lambda_v and model.m_v:
        u_full_nom, eta_star, _, _ = _solve_nominal(cfg, model, x, effs)
        lam_v = u_full_nom[model.m_s:] if u_full_nom is not None \
            else cfg.feedforward_full(model, x)[model.m_s:]
    else:
        lam_v = cfg.feedforward_full(model, x)[model.m_s:]
    return GuardDecision(u_model=np.concatenate([u_s, lam_v]), mode=RECOVERY,
                         qp_status=status, m_s=model.m_s,
                         eta_star=eta_star, zeta_star=zeta_star, solution=sol)


def probe_continuity(cfg: ControllerConfig, model: AffineModel, states,
                     perturbation: float = 1e-6):
    """Lipschitz probe of x -> v* for the nominal QP.

    For each state, solves at x and at a perturbed x and reports the ratio
    |v*(x+dx) - v*(x)| / |dx| together with whether strict complementary
    slackness held at both points (solution continuity is only guaranteed
    where it does).
    """
    from .qp import check_strict_complementarity

    results = []
    rng = np.random.default_rng(0)
    for x in states:
        x = np.asarray(x, dtype=float)
        dx = rng.normal(size=x.shape)
        dx *= perturbation / np.linalg.norm(dx)
        probs = [assemble_nominal_qp(cfg, model, xx) for xx in (x, x + dx)]
        sols = [solve(p) for p in probs]
        if any(s.status != "optimal" for s in sols):
            continue
        ratio = float(np.linalg.norm(sols[1].z_star[:-1] - sols[0].z_star[:-1])) / perturbation
        strict = all(check_strict_complementarity(s, p) for s, p in zip(sols, probs))
        results.append({"ratio": ratio, "strict": strict})
    return results
