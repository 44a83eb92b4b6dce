"""Barrier functions, their rate bounds and margins, and the safety margin
function H.

The quadrotor barriers depend only on configuration variables while inputs
enter one integration level deeper, so their raw input coupling vanishes.
Each degree-2 barrier is therefore lifted to an effective first-order
barrier  Btilde = Bdot_drift + alpha * B  (Bdot_drift = grad(B) . f, which
is the full rate for these barriers since grad(B) . g = 0); all detection
and controller machinery operates on Btilde, and traces log both B and
Btilde.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .dynamics import IPHI, ITHETA, IVZ, IZ, AffineModel

INTERIOR, BAND, OUTSIDE = "interior", "band", "outside"


class BarrierError(ValueError):
    """Raised for invalid barrier configuration or degenerate inputs."""


@dataclass(frozen=True)
class BarrierSpec:
    """A barrier B with its derivatives and certified constants.

    eta bounds the second time derivative of the effective barrier along
    closed-loop trajectories; lipschitz_lB bounds the effective barrier's
    gradient norm (both in effective-barrier units). c_bar is the detection
    band depth, c_M the depth of the safe set.
    """

    name: str
    B: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    eta: float
    lipschitz_lB: float
    c_bar: float
    c_M: float
    relative_degree: int = 1
    alpha: float = 1.0
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    fd_step: float = 1e-6
    # Rank used by the guard's infeasibility fallback: higher-priority
    # barriers are defended first when not every row can be satisfied.
    recovery_priority: int = 0

    def __post_init__(self):
        if self.c_M <= 0.0:
            raise BarrierError(f"{self.name}: c_M must be positive")
        if not (0.0 < self.c_bar < self.c_M):
            raise BarrierError(f"{self.name}: need 0 < c_bar < c_M, got c_bar={self.c_bar}, c_M={self.c_M}")
        if self.eta <= 0.0 or self.lipschitz_lB <= 0.0:
            raise BarrierError(f"{self.name}: eta and lipschitz_lB must be positive")
        if self.relative_degree not in (1, 2):
            raise BarrierError(f"{self.name}: relative degree must be 1 or 2")
        if self.relative_degree == 2 and self.alpha <= 0.0:
            raise BarrierError(f"{self.name}: degree-2 composition needs alpha > 0")


@dataclass(frozen=True)
class BarrierBank:
    """Ordered collection of barriers whose joint sublevel set is the safe set."""

    barriers: tuple

    def __post_init__(self):
        object.__setattr__(self, "barriers", tuple(self.barriers))
        if not self.barriers:
            raise BarrierError("barrier bank must not be empty")

    def __iter__(self):
        return iter(self.barriers)

    def __len__(self):
        return len(self.barriers)

    def names(self):
        return [spec.name for spec in self.barriers]

    def check_joint_safe(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return all(spec.B(x) <= tol for spec in self.barriers)


class EffectiveBarrier(NamedTuple):
    """Effective barrier value and its Lie derivatives at one state."""

    value: float
    lie_f: float
    lie_g: np.ndarray
    grad: np.ndarray


def effective_value(spec: BarrierSpec, model: AffineModel, x: np.ndarray,
                    drift: Optional[np.ndarray] = None) -> float:
    """Btilde(x) without the gradient work (detector hot path)."""
    if spec.relative_degree == 1:
        return float(spec.B(x))
    if drift is None:
        drift = model.drift(x)
    return float(spec.gradient(x) @ drift + spec.alpha * spec.B(x))


def _tilde_gradient(spec: BarrierSpec, model: AffineModel, x: np.ndarray,
                    drift: Optional[np.ndarray] = None,
                    jac: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of Btilde = grad(B).f + alpha*B.

    Exact chain rule (Hessian(B) f + J_f' grad(B) + alpha grad(B)) when the
    spec carries a Hessian and the model a drift Jacobian; otherwise central
    finite differences of the scalar map.
    """
    if spec.hessian is not None and model.drift_jacobian is not None:
        grad_B = spec.gradient(x)
        if drift is None:
            drift = model.drift(x)
        if jac is None:
            jac = model.drift_jacobian(x)
        return spec.hessian(x) @ drift + jac.T @ grad_B + spec.alpha * grad_B
    h = spec.fd_step
    n = x.shape[0]
    out = np.empty(n)
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = h
        out[j] = (effective_value(spec, model, x + dx) - effective_value(spec, model, x - dx)) / (2.0 * h)
    return out


def effective_barrier(spec: BarrierSpec, model: AffineModel, x: np.ndarray,
                      model_eval: Optional[tuple] = None) -> EffectiveBarrier:
    """Value and Lie derivatives of the working (effective) barrier.

    Degree 1 returns (B, L_f B, L_g B); degree 2 the same for Btilde.
    model_eval optionally carries precomputed (drift, input_matrix,
    drift_jacobian) at x so banks share one model evaluation per state.
    """
    x = np.asarray(x, dtype=float)
    if model_eval is None:
        drift = model.drift(x)
        g = model.input_matrix(x)
        jac = model.drift_jacobian(x) if model.drift_jacobian is not None else None
    else:
        drift, g, jac = model_eval
    if spec.relative_degree == 1:
        grad = spec.gradient(x)
        value = float(spec.B(x))
    else:
        grad = _tilde_gradient(spec, model, x, drift=drift, jac=jac)
        value = effective_value(spec, model, x, drift=drift)
    lie_f = float(grad @ drift)
    lie_g = grad @ g
    return EffectiveBarrier(value=value, lie_f=lie_f, lie_g=np.asarray(lie_g, dtype=float).ravel(), grad=grad)


def evaluate_bank(bank: BarrierBank, model: AffineModel, x: np.ndarray) -> list:
    """Effective barriers for the whole bank with one model evaluation."""
    x = np.asarray(x, dtype=float)
    drift = model.drift(x)
    g = model.input_matrix(x)
    jac = model.drift_jacobian(x) if model.drift_jacobian is not None else None
    return [effective_barrier(spec, model, x, model_eval=(drift, g, jac)) for spec in bank]


def evaluate_H(spec: BarrierSpec, model: AffineModel, x: np.ndarray, u) -> float:
    """Disturbance-robust barrier rate  L_F Btilde(x, u) + l_B * delta."""
    eff = effective_barrier(spec, model, x)
    return H_from_effective(eff, spec, model, u)


def H_from_effective(eff: EffectiveBarrier, spec: BarrierSpec, model: AffineModel, u) -> float:
    u_full = u.full if hasattr(u, "full") else np.asarray(u, dtype=float).ravel()
    return eff.lie_f + float(eff.lie_g @ u_full) + spec.lipschitz_lB * model.disturbance_bound


def compute_cM(spec: BarrierSpec, sample_grid) -> float:
    """Grid-based lower bound  -min_grid B  on the depth of the safe set.

    All grid points must lie in the safe set; a nonpositive result violates
    the c_M > 0 invariant and is raised. Monotone nondecreasing under grid
    union (adding points can only raise -min).
    """
    grid = list(sample_grid)
    if not grid:
        raise BarrierError("compute_cM: empty sample grid")
    values = [float(spec.B(np.asarray(x, dtype=float))) for x in grid]
    if max(values) > 0.0:
        raise BarrierError("compute_cM: grid contains points outside the safe set")
    c_M = -min(values)
    if c_M <= 0.0:
        raise BarrierError(f"compute_cM: grid yields c_M = {c_M:g}, violating c_M > 0")
    return c_M


def region_label(value: float, c_bar: float) -> str:
    """Partition by barrier value: interior / band / outside.

    The inner boundary (value exactly -c_bar) counts as band.
    """
    if value > 0.0:
        return OUTSIDE
    if value < -c_bar:
        return INTERIOR
    return BAND


def region_membership(bank: BarrierBank, x: np.ndarray, model: AffineModel) -> list[str]:
    """Per-barrier region label, evaluated on the effective barrier."""
    return [region_label(effective_value(spec, model, x), spec.c_bar) for spec in bank]


def check_relative_degree(spec: BarrierSpec, model: AffineModel, samples) -> bool:
    """Verify a degree-2 classification: raw L_g B must vanish on samples.

    Emits a warning and returns False on misclassification.
    """
    if spec.relative_degree != 2:
        return True
    worst = 0.0
    for x in samples:
        row = spec.gradient(np.asarray(x, dtype=float)) @ model.input_matrix(np.asarray(x, dtype=float))
        worst = max(worst, float(np.max(np.abs(row))))
    if worst > 1e-12:
        warnings.warn(
            f"barrier {spec.name!r} is declared relative degree 2 but raw L_g B "
            f"reaches {worst:.3e} on samples; classification looks wrong",
            stacklevel=2,
        )
        return False
    return True


# Builtin quadrotor barriers. Defaults for eta / l_B come from constant
# estimation over the case-study envelope (see certifier.estimate_constants)
# with generous headroom; the scenario config can override per barrier.

QUAD_PHI_MAX = 0.3
QUAD_THETA_MAX = 0.3
QUAD_Z_EPS = 0.02
QUAD_C_BAR = 0.25 * 0.3 ** 2  # 0.0225


def _quad_z_barrier(eps: float):
    def B(x):
        return -x[IZ] + eps

    def grad(x):
        g = np.zeros(12)
        g[IZ] = -1.0
        return g

    def hess(x):
        return np.zeros((12, 12))

    return B, grad, hess


def _quad_angle_barrier(index: int, bound: float):
    def B(x):
        return x[index] ** 2 - bound ** 2

    def grad(x):
        g = np.zeros(12)
        g[index] = 2.0 * x[index]
        return g

    def hess(x):
        H = np.zeros((12, 12))
        H[index, index] = 2.0
        return H

    return B, grad, hess


def quad_z_spec(alpha=0.5, eta=15.0, l_B=1.4, c_bar=QUAD_C_BAR, eps=QUAD_Z_EPS, c_M=None) -> BarrierSpec:
    """Altitude barrier: safe while z >= eps.

    Lowest recovery priority: altitude has headroom to trade while attitude
    loss forfeits the thrust direction (and with it every other barrier).
    """
    B, grad, hess = _quad_z_barrier(eps)
    return BarrierSpec(
        name="quad_z", B=B, gradient=grad, hessian=hess,
        eta=eta, lipschitz_lB=l_B, c_bar=c_bar,
        c_M=c_M if c_M is not None else 6.0 - eps,
        relative_degree=2, alpha=alpha, recovery_priority=0,
    )


def quad_phi_spec(alpha=1.0, eta=250.0, l_B=4.5, c_bar=QUAD_C_BAR, bound=QUAD_PHI_MAX) -> BarrierSpec:
    """Roll barrier: safe while |phi| <= bound."""
    B, grad, hess = _quad_angle_barrier(IPHI, bound)
    return BarrierSpec(
        name="quad_phi", B=B, gradient=grad, hessian=hess,
        eta=eta, lipschitz_lB=l_B, c_bar=c_bar, c_M=bound ** 2,
        relative_degree=2, alpha=alpha, recovery_priority=1,
    )


def quad_theta_spec(alpha=1.0, eta=250.0, l_B=4.5, c_bar=QUAD_C_BAR, bound=QUAD_THETA_MAX) -> BarrierSpec:
    """Pitch barrier: safe while |theta| <= bound."""
    B, grad, hess = _quad_angle_barrier(ITHETA, bound)
    return BarrierSpec(
        name="quad_theta", B=B, gradient=grad, hessian=hess,
        eta=eta, lipschitz_lB=l_B, c_bar=c_bar, c_M=bound ** 2,
        relative_degree=2, alpha=alpha, recovery_priority=1,
    )


BUILTIN_QUAD_BARRIERS = {
    "quad_z": quad_z_spec,
    "quad_phi": quad_phi_spec,
    "quad_theta": quad_theta_spec,
}
