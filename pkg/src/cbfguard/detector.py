"""Attack detection from barrier-value histories.

Two rules are provided: a boundary rule (flag when the finite-difference
rate estimate is not safely negative while sitting on the safe-set
boundary) and an adaptive rule (flag inside the detection band when the
rate estimate exceeds a decaying threshold gamma anchored at band entry).

Discrete-time adjustment: the band has positive width in barrier units but
a fast crossing can straddle it between two samples, so the adaptive rule's
membership gate accepts any sample past the inner band boundary (band or
beyond). In continuous time a trajectory cannot reach the boundary from the
interior without passing through the band, and this gate is the discrete
stand-in that preserves that soundness argument.

While a flag window is open no new flags are raised; detection resumes at
window close. Windows from any barrier open the shared recovery window
(OR fusion).
"""

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .barrier import BAND, BarrierBank, effective_value, region_label
from .dynamics import AffineModel


class DetectorError(ValueError):
    """Raised for invalid detector queries."""


@dataclass(frozen=True)
class GammaSchedule:
    """Decaying detection threshold  gamma(t) = delta_bar * c_bar * exp(-delta_bar (t - t_bar))."""

    delta_bar: float
    c_bar: float

    def __post_init__(self):
        if self.delta_bar <= 0.0 or self.c_bar <= 0.0:
            raise DetectorError("GammaSchedule requires delta_bar > 0 and c_bar > 0")


def gamma(schedule: GammaSchedule, t: float, t_bar: float) -> float:
    """Threshold value at time t for an anchor time t_bar <= t."""
    if t < t_bar:
        raise DetectorError(f"gamma queried at t={t} before anchor t_bar={t_bar}")
    return schedule.delta_bar * schedule.c_bar * math.exp(-schedule.delta_bar * (t - t_bar))


@dataclass
class DetectorState:
    """Rolling per-barrier history, gamma anchors, and raised flag times.

    flags[0] is the sentinel -T_bar (its window ends just before t = 0).
    """

    tau: float
    window_T_bar: float
    n_barriers: int
    history_len: int = 8
    history: list = field(init=False)
    gamma_anchor: list = field(init=False)
    flags: list = field(init=False)
    flag_barriers: list = field(init=False)

    def __post_init__(self):
        if self.tau <= 0.0:
            raise DetectorError("tau must be positive")
        if self.window_T_bar <= 0.0:
            raise DetectorError("window length T_bar must be positive")
        self.history = [deque(maxlen=self.history_len) for _ in range(self.n_barriers)]
        self.gamma_anchor = [None] * self.n_barriers
        self.flags = [-self.window_T_bar]
        self.flag_barriers = [None]

    def push(self, barrier_index: int, t: float, value: float):
        hist = self.history[barrier_index]
        if hist and t <= hist[-1][0]:
            raise DetectorError("history timestamps must be strictly increasing")
        hist.append((t, value))

    def value_at(self, barrier_index: int, t: float) -> Optional[float]:
        """Linear interpolation of the stored barrier samples at time t."""
        hist = self.history[barrier_index]
        if not hist or t < hist[0][0] - 1e-12 or t > hist[-1][0] + 1e-12:
            return None
        prev = None
        for tk, vk in hist:
            if abs(tk - t) <= 1e-12:
                return vk
            if tk > t:
                t0, v0 = prev
                w = (t - t0) / (tk - t0)
                return v0 + w * (vk - v0)
            prev = (tk, vk)
        return hist[-1][1]

    def raise_flag(self, t: float, barrier_index: int):
        if t <= self.flags[-1]:
            raise DetectorError("flag times must be strictly increasing")
        self.flags.append(t)
        self.flag_barriers.append(barrier_index)

    def attack_flags(self) -> list[float]:
        """Raised flag times, sentinel excluded."""
        return self.flags[1:]


def fd_estimate(state: DetectorState, barrier_index: int, t: float) -> Optional[float]:
    """First-order rate estimate (value(t) - value(t - tau)) / tau.

    None while the history is too short (not ready; no flag can be raised).
    """
    now = state.value_at(barrier_index, t)
    past = state.value_at(barrier_index, t - state.tau)
    if now is None or past is None:
        return None
    return (now - past) / state.tau


def in_flag_window(state: DetectorState, t: float) -> bool:
    """True iff t lies in some half-open window [t_flag, t_flag + T_bar)."""
    for t_flag in reversed(state.flags):
        if t_flag <= t:
            return t < t_flag + state.window_T_bar
    return False


def check_boundary_rule(state: DetectorState, spec, barrier_index: int, t: float,
                        boundary_tol: float = 1e-6) -> bool:
    """Boundary rule: rate estimate above -eta*tau/2 while |Btilde| <= tol."""
    fd = fd_estimate(state, barrier_index, t)
    if fd is None:
        return False
    value = state.value_at(barrier_index, t)
    return abs(value) <= boundary_tol and fd > -spec.eta * state.tau / 2.0


def check_adaptive_rule(state: DetectorState, spec, schedule: GammaSchedule,
                        barrier_index: int, t: float) -> bool:
    """Adaptive rule; on success appends t to the flags (opening a window).

    Fires when the sample is past the inner band boundary, no window is
    open, t is past the gamma anchor, and the rate estimate exceeds
    gamma(t) - eta*tau/2.
    """
    fd = fd_estimate(state, barrier_index, t)
    if fd is None:
        return False
    value = state.value_at(barrier_index, t)
    if value <= -spec.c_bar:
        return False
    t_bar = state.gamma_anchor[barrier_index]
    if t_bar is None:
        return False
    if t < t_bar or t < state.flags[-1] + state.window_T_bar:
        return False
    if fd <= gamma(schedule, t, t_bar) - spec.eta * state.tau / 2.0:
        return False
    state.raise_flag(t, barrier_index)
    return True


class Detector:
    """Per-step detector driving rule evaluation and window bookkeeping."""

    def __init__(self, bank: BarrierBank, model: AffineModel, delta_bar: float,
                 tau: float, window_T_bar: float, rule: str = "adaptive",
                 boundary_tol: float = 1e-6, history_len: int = 8):
        if rule not in ("adaptive", "boundary"):
            raise DetectorError(f"unknown detection rule {rule!r}")
        self.bank = bank
        self.model = model
        self.rule = rule
        self.boundary_tol = boundary_tol
        self.schedules = [GammaSchedule(delta_bar=delta_bar, c_bar=spec.c_bar) for spec in bank]
        self.state = DetectorState(tau=tau, window_T_bar=window_T_bar,
                                   n_barriers=len(bank), history_len=history_len)
        self._prev_past_band = [False] * len(bank)

    def update(self, t: float, values, raise_flags: bool = True):
        """Push new barrier samples at time t and evaluate the rules.

        Returns per-barrier diagnostics dicts with keys fd, gamma, region,
        flagged. Anchors are (re)set whenever a barrier crosses its inner
        band boundary coming from the interior.
        """
        diags = []
        flagged_any = False
        for i, spec in enumerate(self.bank):
            value = float(values[i])
            self.state.push(i, t, value)
            past_band = value > -spec.c_bar
            if past_band and not self._prev_past_band[i]:
                self.state.gamma_anchor[i] = t
            elif past_band and self.state.gamma_anchor[i] is None:
                self.state.gamma_anchor[i] = t
            self._prev_past_band[i] = past_band

            fd = fd_estimate(self.state, i, t)
            t_bar = self.state.gamma_anchor[i]
            gam = gamma(self.schedules[i], t, t_bar) if t_bar is not None and t >= t_bar else None
            region = region_label(value, spec.c_bar)
            flagged = False
            if raise_flags and not flagged_any:
                if self.rule == "adaptive":
                    flagged = check_adaptive_rule(self.state, spec, self.schedules[i], i, t)
                else:
                    if (fd is not None and not in_flag_window(self.state, t)
                            and check_boundary_rule(self.state, spec, i, t, self.boundary_tol)):
                        self.state.raise_flag(t, i)
                        flagged = True
                flagged_any = flagged_any or flagged
            diags.append({"fd": fd, "gamma": gam, "region": region, "flagged": flagged})
        return diags

    def update_from_state(self, t: float, x: np.ndarray, raise_flags: bool = True):
        values = [effective_value(spec, self.model, x) for spec in self.bank]
        return self.update(t, values, raise_flags)

    def in_window(self, t: float) -> bool:
        return in_flag_window(self.state, t)
