"""System models: control-affine form with bounded disturbance, and the
12-state quadrotor with its motor-mixing maps.

State ordering used throughout (and in the trace schema):
    [x, y, z, vx, vy, vz, phi, theta, psi, p, q, r]
positions in m, velocities in m/s, Euler angles (roll, pitch, yaw) in rad,
body rates in rad/s. Motor thrusts f1..f4 in N, wrench (u_f, tau_p, tau_q,
tau_r) in N / N*m.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

# State vector component indices.
IX, IY, IZ, IVX, IVY, IVZ, IPHI, ITHETA, IPSI, IP, IQ, IR = range(12)

STATE_NAMES = ("x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r")


class ModelError(ValueError):
    """Raised for invalid model construction or evaluation."""


@dataclass(frozen=True)
class QuadrotorParams:
    """Physical parameters; defaults are the simulation case-study values."""

    m: float = 4.493          # kg
    I_xx: float = 0.177       # kg m^2
    I_yy: float = 0.177
    I_zz: float = 0.344
    k_t: float = 1.0          # translational drag
    k_r: float = 1.5          # rotational drag
    l: float = 0.1            # arm length, m
    d_coef: float = 0.0024    # yaw moment coefficient, m
    g_acc: float = 9.8        # m/s^2
    f_max: float = 27.7       # per-motor |thrust| bound, N

    def __post_init__(self):
        for name in ("m", "I_xx", "I_yy", "I_zz", "k_t", "k_r", "l", "d_coef", "g_acc", "f_max"):
            if getattr(self, name) <= 0.0:
                raise ModelError(f"QuadrotorParams.{name} must be strictly positive")

    @property
    def hover_thrust(self) -> float:
        """Total thrust balancing gravity, m*g."""
        return self.m * self.g_acc


def mixing_matrix(params: QuadrotorParams) -> np.ndarray:
    """Map motor thrusts (f1..f4) to the wrench (u_f, tau_p, tau_q, tau_r)."""
    l, d = params.l, params.d_coef
    return np.array([
        [1.0, 1.0, 1.0, 1.0],
        [0.0, -l, 0.0, l],
        [-l, 0.0, l, 0.0],
        [d, -d, d, -d],
    ])


def mix_motors(f: np.ndarray, params: QuadrotorParams) -> np.ndarray:
    """Wrench produced by motor thrusts f (4-vector, N)."""
    return mixing_matrix(params) @ np.asarray(f, dtype=float)


def quadrotor_derivative(state: np.ndarray, wrench, params: QuadrotorParams) -> np.ndarray:
    """Time derivative of the 12-state quadrotor under a wrench input.

    Raises on the theta = +-pi/2 kinematic singularity (cos(theta) = 0
    breaks the yaw-rate equation).
    """
    s = np.asarray(state, dtype=float)
    u_f, tau_p, tau_q, tau_r = (float(w) for w in wrench)
    m, g = params.m, params.g_acc

    vx, vy, vz = float(s[IVX]), float(s[IVY]), float(s[IVZ])
    phi, theta, psi = float(s[IPHI]), float(s[ITHETA]), float(s[IPSI])
    p, q, r = float(s[IP]), float(s[IQ]), float(s[IR])

    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    cpsi, spsi = math.cos(psi), math.sin(psi)
    if abs(cth) < 1e-9:
        raise ModelError("pitch at +-pi/2: yaw kinematics singular")
    tth = sth / cth

    out = np.empty(12)
    out[IX], out[IY], out[IZ] = vx, vy, vz
    out[IVX] = ((cphi * cpsi * sth + sphi * spsi) * u_f - params.k_t * vx) / m
    out[IVY] = ((cphi * spsi * sth - sphi * cpsi) * u_f - params.k_t * vy) / m
    out[IVZ] = (cth * cphi * u_f - m * g - params.k_t * vz) / m
    out[IPHI] = p + q * sphi * tth + r * cphi * tth
    out[ITHETA] = q * cphi - r * sphi
    out[IPSI] = (q * sphi + r * cphi) / cth
    out[IP] = (-params.k_r * p - q * r * (params.I_zz - params.I_yy) + tau_p) / params.I_xx
    out[IQ] = (-params.k_r * q - p * r * (params.I_xx - params.I_zz) + tau_q) / params.I_yy
    out[IR] = (-params.k_r * r - p * q * (params.I_yy - params.I_zz) + tau_r) / params.I_zz
    return out


def _quad_drift_jacobian(state: np.ndarray, params: QuadrotorParams) -> np.ndarray:
    """Analytic Jacobian of the drift field (zero wrench) at `state`."""
    s = np.asarray(state, dtype=float)
    phi, theta = float(s[IPHI]), float(s[ITHETA])
    p, q, r = float(s[IP]), float(s[IQ]), float(s[IR])
    cphi, sphi = math.cos(phi), math.sin(phi)
    cth, sth = math.cos(theta), math.sin(theta)
    tth = sth / cth
    sec2 = 1.0 / (cth * cth)

    J = np.zeros((12, 12))
    J[IX, IVX] = J[IY, IVY] = J[IZ, IVZ] = 1.0
    ktm = params.k_t / params.m
    J[IVX, IVX] = J[IVY, IVY] = J[IVZ, IVZ] = -ktm

    J[IPHI, IPHI] = (q * cphi - r * sphi) * tth
    J[IPHI, ITHETA] = (q * sphi + r * cphi) * sec2
    J[IPHI, IP] = 1.0
    J[IPHI, IQ] = sphi * tth
    J[IPHI, IR] = cphi * tth

    J[ITHETA, IPHI] = -q * sphi - r * cphi
    J[ITHETA, IQ] = cphi
    J[ITHETA, IR] = -sphi

    J[IPSI, IPHI] = (q * cphi - r * sphi) / cth
    J[IPSI, ITHETA] = (q * sphi + r * cphi) * sth * sec2
    J[IPSI, IQ] = sphi / cth
    J[IPSI, IR] = cphi / cth

    kr = params.k_r
    czy = params.I_zz - params.I_yy
    cxz = params.I_xx - params.I_zz
    cyz = params.I_yy - params.I_zz
    J[IP, IP] = -kr / params.I_xx
    J[IP, IQ] = -r * czy / params.I_xx
    J[IP, IR] = -q * czy / params.I_xx
    J[IQ, IP] = -r * cxz / params.I_yy
    J[IQ, IQ] = -kr / params.I_yy
    J[IQ, IR] = -p * cxz / params.I_yy
    J[IR, IP] = -q * cyz / params.I_zz
    J[IR, IQ] = -p * cyz / params.I_zz
    J[IR, IR] = -kr / params.I_zz
    return J


@dataclass(frozen=True)
class ControlInput:
    """Partitioned input: u_s always defender-controlled, u_v attackable."""

    u_s: np.ndarray
    u_v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u_s", np.asarray(self.u_s, dtype=float).ravel())
        object.__setattr__(self, "u_v", np.asarray(self.u_v, dtype=float).ravel())

    @property
    def full(self) -> np.ndarray:
        """Model-order input vector [u_s; u_v]."""
        return np.concatenate([self.u_s, self.u_v])


@dataclass(frozen=True)
class InputBounds:
    """Polytopic input set U = {u : Au <= b}, with an optional box marker."""

    A: np.ndarray
    b: np.ndarray
    box: Optional[tuple] = None  # (lo, hi) arrays when U is a box

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).ravel()
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if A.shape[0] != b.shape[0]:
            raise ModelError("InputBounds: A rows and b length differ")
        if self.box is not None:
            lo = np.asarray(self.box[0], dtype=float).ravel()
            hi = np.asarray(self.box[1], dtype=float).ravel()
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ModelError("InputBounds: inconsistent box")
            object.__setattr__(self, "box", (lo, hi))
            probe = 0.5 * (lo + hi)
            if np.any(A @ probe > b + 1e-9):
                raise ModelError("InputBounds: box midpoint violates (A, b)")
        else:
            from .qp import _phase1_point
            _, worst = _phase1_point(A, b)
            if worst > 1e-7:
                raise ModelError("InputBounds: set U is empty")

    @classmethod
    def from_box(cls, lo, hi) -> "InputBounds":
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        n = lo.shape[0]
        A = np.vstack([np.eye(n), -np.eye(n)])
        b = np.concatenate([hi, -lo])
        return cls(A=A, b=b, box=(lo, hi))

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def contains(self, u: np.ndarray, tol: float = 1e-8) -> bool:
        return bool(np.all(self.A @ np.asarray(u, dtype=float) <= self.b + tol))

    def clip_to_box(self, u: np.ndarray) -> np.ndarray:
        if self.box is None:
            raise ModelError("clip_to_box requires a box representation")
        return np.clip(np.asarray(u, dtype=float), self.box[0], self.box[1])


@dataclass(frozen=True)
class AffineModel:
    """Control-affine model  xdot = f(x) + g(x) u + d(t, x),  |d| <= delta.

    g columns are ordered [g_s | g_v] (secure inputs first). `input_labels`
    records the native meaning of each column (for the quadrotor, the
    1-based motor number).
    """

    n: int
    m_s: int
    m_v: int
    drift: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]
    disturbance_bound: float = 0.0
    drift_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    input_labels: tuple = ()

    def __post_init__(self):
        if self.disturbance_bound < 0.0:
            raise ModelError("disturbance bound must be >= 0")
        if self.m_s < 1:
            raise ModelError("model needs at least one secure input")

    @property
    def m(self) -> int:
        return self.m_s + self.m_v

    def g_s(self, x: np.ndarray) -> np.ndarray:
        return self.input_matrix(x)[:, : self.m_s]

    def g_v(self, x: np.ndarray) -> np.ndarray:
        return self.input_matrix(x)[:, self.m_s:]

    def derivative(self, x: np.ndarray, u_full: np.ndarray, d: Optional[np.ndarray] = None) -> np.ndarray:
        out = self.drift(x) + self.input_matrix(x) @ u_full
        if d is not None:
            out = out + d
        return out


def as_affine_in_motors(
    params: QuadrotorParams,
    vulnerable: set[int],
    delta: float = 0.0,
) -> AffineModel:
    """Quadrotor as a control-affine model in motor-thrust space.

    `vulnerable` holds 1-based motor numbers (matching the hardware labels
    in the mixing matrix). Columns are reordered so secure motors come
    first; the dynamics are affine in the wrench, so g is exact.
    """
    vulnerable = set(int(v) for v in vulnerable)
    if not vulnerable <= {1, 2, 3, 4}:
        raise ModelError(f"vulnerable motors must be within 1..4, got {sorted(vulnerable)}")
    secure = [i for i in (1, 2, 3, 4) if i not in vulnerable]
    if not secure:
        raise ModelError("at least one motor must remain secure (no recovery authority otherwise)")
    order = tuple(secure + sorted(vulnerable))
    M = mixing_matrix(params)
    M_ordered = M[:, [i - 1 for i in order]]
    inv_m = 1.0 / params.m
    inv_I = np.array([1.0 / params.I_xx, 1.0 / params.I_yy, 1.0 / params.I_zz])

    def drift(x: np.ndarray) -> np.ndarray:
        return quadrotor_derivative(x, (0.0, 0.0, 0.0, 0.0), params)

    def input_matrix(x: np.ndarray) -> np.ndarray:
        phi, theta, psi = float(x[IPHI]), float(x[ITHETA]), float(x[IPSI])
        cphi, sphi = math.cos(phi), math.sin(phi)
        cth, sth = math.cos(theta), math.sin(theta)
        cpsi, spsi = math.cos(psi), math.sin(psi)
        g_wrench = np.zeros((12, 4))
        g_wrench[IVX, 0] = (cphi * cpsi * sth + sphi * spsi) * inv_m
        g_wrench[IVY, 0] = (cphi * spsi * sth - sphi * cpsi) * inv_m
        g_wrench[IVZ, 0] = cth * cphi * inv_m
        g_wrench[IP, 1] = inv_I[0]
        g_wrench[IQ, 2] = inv_I[1]
        g_wrench[IR, 3] = inv_I[2]
        return g_wrench @ M_ordered

    def drift_jac(x: np.ndarray) -> np.ndarray:
        return _quad_drift_jacobian(x, params)

    return AffineModel(
        n=12,
        m_s=len(secure),
        m_v=len(vulnerable),
        drift=drift,
        input_matrix=input_matrix,
        disturbance_bound=float(delta),
        drift_jacobian=drift_jac,
        input_labels=order,
    )


def motor_bounds(params: QuadrotorParams, n_motors: int = 4) -> InputBounds:
    """Box |f_i| <= f_max for each motor (the bound is on magnitude)."""
    hi = np.full(n_motors, params.f_max)
    return InputBounds.from_box(-hi, hi)


def ball_sample(rng: np.random.Generator, delta: float, n: int) -> np.ndarray:
    """Uniform draw from the closed n-ball of radius delta."""
    if delta < 0.0:
        raise ModelError("disturbance bound must be >= 0")
    if delta == 0.0:
        return np.zeros(n)
    direction = rng.normal(size=n)
    norm = float(np.linalg.norm(direction))
    while norm < 1e-300:
        direction = rng.normal(size=n)
        norm = float(np.linalg.norm(direction))
    radius = delta * float(rng.uniform()) ** (1.0 / n)
    return direction * (radius / norm)


def sample_disturbance(delta: float, rng_seed: int, n: int = 12) -> np.ndarray:
    """One reproducible disturbance vector with |d| <= delta."""
    return ball_sample(np.random.default_rng(rng_seed), delta, n)


@dataclass
class DisturbanceSampler:
    """Per-step zero-order-hold disturbance realization.

    kind "ball" draws uniformly from the delta-ball each step; "sinusoid"
    is a deterministic repeatable signal with |d(t)| <= delta; "none" is
    identically zero.
    """

    delta: float
    kind: str = "ball"
    seed: int = 0
    n: int = 12
    _rng: np.random.Generator = field(init=False, repr=False)
    _phases: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.delta < 0.0:
            raise ModelError("disturbance bound must be >= 0")
        if self.kind not in ("ball", "sinusoid", "none"):
            raise ModelError(f"unknown disturbance kind {self.kind!r}")
        self._rng = np.random.default_rng(self.seed)
        self._phases = np.arange(self.n) * (2.0 * math.pi / self.n)

    def value(self, t: float) -> np.ndarray:
        if self.kind == "none" or self.delta == 0.0:
            return np.zeros(self.n)
        if self.kind == "sinusoid":
            v = np.sin(2.0 * math.pi * 0.4 * t + self._phases)
            return v * (self.delta / math.sqrt(self.n))
        return ball_sample(self._rng, self.delta, self.n)


# Small builtin test systems (used by unit tests, the certifier checks and
# the demos; not part of the quadrotor case study).

def scalar_integrator(delta: float = 0.0, m_s: int = 1, m_v: int = 0, drift_rate: float = 0.0) -> AffineModel:
    """1-D system  xdot = drift_rate + sum(u) + d."""
    m = m_s + m_v

    def drift(x):
        return np.array([drift_rate])

    def input_matrix(x):
        return np.ones((1, m))

    def jac(x):
        return np.zeros((1, 1))

    return AffineModel(n=1, m_s=m_s, m_v=m_v, drift=drift, input_matrix=input_matrix,
                       disturbance_bound=delta, drift_jacobian=jac)


def double_integrator(delta: float = 0.0) -> AffineModel:
    """2-D system  pdot = v, vdot = u + d."""

    def drift(x):
        return np.array([x[1], 0.0])

    def input_matrix(x):
        return np.array([[0.0], [1.0]])

    def jac(x):
        return np.array([[0.0, 1.0], [0.0, 0.0]])

    return AffineModel(n=2, m_s=1, m_v=0, drift=drift, input_matrix=input_matrix,
                       disturbance_bound=delta, drift_jacobian=jac)
