"""Attack schedules (bounded burst length, minimum quiet gap) and attack
signal generators for the vulnerable input channels."""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .barrier import BarrierBank, effective_barrier, effective_value
from .dynamics import AffineModel, InputBounds

ATTACK_KINDS = ("constant", "uniform_random", "sinusoid", "greedy_adversarial")


class AttackError(ValueError):
    """Raised for invalid schedules or signal queries."""


@dataclass(frozen=True)
class AttackSchedule:
    """Disjoint half-open attack intervals [t1, t2) with known bounds:
    every burst no longer than T_bar, every gap at least T_na."""

    intervals: tuple
    T_bar: float
    T_na: float

    def __post_init__(self):
        ivals = tuple((float(a), float(b)) for a, b in self.intervals)
        object.__setattr__(self, "intervals", ivals)
        prev_end = None
        for a, b in ivals:
            if b <= a:
                raise AttackError(f"empty or reversed interval [{a}, {b})")
            if b - a > self.T_bar + 1e-9:
                raise AttackError(f"interval [{a}, {b}) longer than T_bar={self.T_bar}")
            if prev_end is not None:
                if a < prev_end:
                    raise AttackError("intervals must be sorted and disjoint")
                if a - prev_end < self.T_na - 1e-9:
                    raise AttackError(f"gap before t={a} shorter than T_na={self.T_na}")
            prev_end = b

    def active(self, t: float) -> bool:
        for a, b in self.intervals:
            if a <= t < b:
                return True
            if a > t:
                return False
        return False

    def containing(self, t: float) -> Optional[tuple]:
        for a, b in self.intervals:
            if a <= t < b:
                return (a, b)
        return None


def generate_schedule(T_bar: float, T_na: float, horizon: float, seed: int,
                      grid: float = 1e-3) -> AttackSchedule:
    """Random schedule over [0, horizon]: burst lengths Uniform(0.2*T_bar,
    T_bar), gaps T_na + Exponential(mean T_na). Interval endpoints snap to
    the `grid` spacing so attack switches align with integration steps.
    Deterministic per seed."""
    if T_bar <= 0.0:
        raise AttackError("T_bar must be positive")
    if T_na < 0.0:
        raise AttackError("T_na must be nonnegative")
    if T_bar + T_na > horizon:
        warnings.warn(
            f"T_bar + T_na = {T_bar + T_na:g} exceeds horizon {horizon:g}; "
            "at most one attack interval fits", stacklevel=2)
    rng = np.random.default_rng(seed)
    # All bookkeeping in integer grid steps so accumulated float dust cannot
    # produce overlapping or over-length intervals.
    max_len_steps = max(1, int(np.floor(T_bar / grid + 1e-9)))
    min_gap_steps = int(np.ceil(T_na / grid - 1e-9))
    horizon_steps = int(np.floor(horizon / grid + 1e-9))

    intervals = []
    k1 = int(np.ceil(float(rng.uniform(0.5, 1.5)) * max(T_na, 2.0 * T_bar) / grid - 1e-9))
    while k1 < horizon_steps:
        length = float(rng.uniform(0.2 * T_bar, T_bar))
        len_steps = min(max(1, int(round(length / grid))), max_len_steps)
        k2 = min(k1 + len_steps, horizon_steps)
        intervals.append((k1 * grid, k2 * grid))
        gap = max(T_na, T_na + float(rng.exponential(T_na if T_na > 0 else T_bar)))
        k1 = k2 + max(min_gap_steps, int(np.ceil(gap / grid - 1e-9)))
    return AttackSchedule(intervals=tuple(intervals), T_bar=T_bar, T_na=T_na)


@dataclass(frozen=True)
class AttackSignal:
    """Attack value generator for the vulnerable input sub-vector.

    Every emitted value lies in u_v_bounds (a box). `seed` drives the
    uniform_random kind; draws are pure in (seed, t).
    """

    kind: str
    u_v_bounds: InputBounds
    value: Optional[np.ndarray] = None      # constant kind
    amplitude: float = 1.0                  # sinusoid kind
    frequency: float = 0.5                  # Hz, sinusoid kind
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}")
        if self.u_v_bounds.box is None:
            raise AttackError("attack signal needs box bounds for U_v")
        if self.kind == "constant":
            if self.value is None:
                raise AttackError("constant attack needs a value")
            v = np.asarray(self.value, dtype=float).ravel()
            object.__setattr__(self, "value", v)
            if not self.u_v_bounds.contains(v, tol=1e-12):
                raise AttackError("constant attack value outside U_v")


def attack_value(signal: AttackSignal, schedule: AttackSchedule, bank: BarrierBank,
                 model: AffineModel, x: np.ndarray, t: float) -> np.ndarray:
    """Attack input at time t (must lie inside an attack interval).

    greedy_adversarial picks the U_v box vertex maximizing the attacked
    channels' influence on the currently most-violated barrier (largest
    effective value); zero-coefficient components break ties to the upper
    bound.
    """
    if not schedule.active(t):
        raise AttackError(f"attack queried outside attack intervals (t={t})")
    lo, hi = signal.u_v_bounds.box
    if signal.kind == "constant":
        return signal.value.copy()
    if signal.kind == "uniform_random":
        rng = np.random.default_rng((signal.seed, int(round(t * 1e9))))
        return rng.uniform(lo, hi)
    if signal.kind == "sinusoid":
        raw = signal.amplitude * np.sin(2.0 * np.pi * signal.frequency * t + np.arange(lo.shape[0]))
        return np.clip(raw, lo, hi)
    # greedy_adversarial
    values = [effective_value(spec, model, x) for spec in bank]
    target = bank.barriers[int(np.argmax(values))]
    lie_g_v = effective_barrier(target, model, x).lie_g[model.m_s:]
    return np.where(lie_g_v >= 0.0, hi, lo)


def worst_case_rate_gain(lie_g_v: np.ndarray, bounds: InputBounds) -> float:
    """sup over the U_v box of lie_g_v . u_v (vertex maximization)."""
    if bounds.box is None:
        raise AttackError("worst-case gain needs box bounds for U_v")
    lo, hi = bounds.box
    return float(np.sum(np.maximum(lie_g_v * lo, lie_g_v * hi)))
