"""Synchronous-reference-frame PLL.

The angle path has no buffering: the angle returned for sample k is the one
used to demodulate sample k.  Only the amplitude used to normalise the error
signal goes through a one-period moving average.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .signals import TWO_PI, MovingAverageRms, ThreePhaseSample, park_transform, period_samples

DEFAULT_KP = 92.0  # rad/s per unit q-axis error
DEFAULT_KI = 4230.0  # rad/s^2 per unit q-axis error


@dataclass
class PllState:
    theta: float = 0.0
    omega_integrator: float = 0.0
    f_est: float | None = None
    kp_pll: float = DEFAULT_KP
    ki_pll: float = DEFAULT_KI
    f_nominal: float = 50.0
    v_nominal_peak: float = 230.0 * math.sqrt(2.0)
    floor_ratio: float = 0.1
    amplitude: MovingAverageRms | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kp_pll <= 0 or self.ki_pll <= 0:
            raise ValueError("PLL gains must be positive")
        self.f_est = self.f_nominal if self.f_est is None else self.f_est

    @property
    def floor(self) -> float:
        return self.floor_ratio * self.v_nominal_peak


class Pll:
    """Stateful SRF-PLL.  ``step`` returns ``(theta, f_est)`` for the sample."""

    def __init__(self, state: PllState | None = None, dt: float | None = None, **kwargs):
        self.state = state if state is not None else PllState(**kwargs)
        if self.state.amplitude is None and dt is not None:
            self.state.amplitude = MovingAverageRms(period_samples(TWO_PI * self.state.f_nominal, dt))

    def step(self, v: ThreePhaseSample, dt: float, amplitude: float | None = None) -> tuple[float, float]:
        st = self.state
        if dt <= 0:
            raise ValueError("dt must be positive")
        theta = st.theta
        dq = park_transform(v, theta)
        if amplitude is None:
            if st.amplitude is None:
                st.amplitude = MovingAverageRms(period_samples(TWO_PI * st.f_nominal, dt))
            ms = (v.a * v.a + v.b * v.b + v.c * v.c) / 3.0
            amplitude = math.sqrt(2.0) * st.amplitude.update_square(ms)
        floor = st.floor
        if amplitude < floor or math.hypot(dq.d, dq.q) < floor:
            err = 0.0  # coast on the integrator
        else:
            err = dq.q / amplitude
        st.omega_integrator += st.ki_pll * err * dt
        omega = TWO_PI * st.f_nominal + st.kp_pll * err + st.omega_integrator
        st.f_est = omega / TWO_PI
        st.theta = (theta + omega * dt) % TWO_PI
        return theta, st.f_est


def pll_step(state: PllState, v: ThreePhaseSample, dt: float, amplitude: float | None = None):
    """Functional form: advances ``state`` in place and returns ``(state, theta, f_est)``."""
    theta, f_est = Pll(state).step(v, dt, amplitude)
    return state, theta, f_est


def pll_lock_check(history: Sequence[float], tol: float, hold: float, dt: float) -> bool:
    """True iff every f_est in the trailing ``hold`` seconds is within ``tol`` of their mean."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = int(round(hold / dt))
    if n < 1 or len(history) < n:
        return False
    tail = history[-n:]
    mean = sum(tail) / n
    return all(abs(f - mean) < tol for f in tail)
