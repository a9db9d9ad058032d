"""Ideal Transformer Model interface between grid and microgrid solvers.

The grid side is a voltage source for the microgrid and receives the
microgrid current; the microgrid side is the mirror image.  In the ``raw``
variant instantaneous samples are exchanged.  In the ``dynamic_phasor``
variant each side sends the positive-sequence phasor of its last nominal
period (referenced to absolute time) and the receiver rebuilds the waveform
at its own clock, which removes the phase error a transport delay adds to
raw samples on a stationary system.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

from .errors import ConfigError, FrameError
from .frames import FrameKind, InterfaceFrame
from .pll import Pll, PllState
from .signals import (
    SHIFT,
    SQRT2,
    TWO_PI,
    ZERO_SAMPLE,
    DynamicPhasor,
    MovingAverageRms,
    SlidingPhasor,
    ThreePhaseSample,
    dp_to_three_phase,
    period_samples,
    positive_sequence,
    to_dynamic_phasor,
)
from .transport import Endpoint


class LossPolicy(str, enum.Enum):
    ZERO_FILL = "zero-fill"
    HOLD_LAST = "hold-last"


class ItmVariant(str, enum.Enum):
    RAW = "raw"
    DYNAMIC_PHASOR = "dynamic_phasor"


def dp_exchange_encode(window: Sequence[ThreePhaseSample], omega0: float, dt: float, kind: FrameKind = FrameKind.DP_VOLTAGE, seq: int = 0, step_index: int = 0) -> InterfaceFrame:
    """Positive-sequence phasor of one nominal period of samples as a dp frame.

    An underfull window yields a frame flagged not ready.
    """
    if not kind.is_dp:
        raise ValueError(f"{kind.name} is not a dynamic-phasor kind")
    n = period_samples(omega0, dt)
    if len(window) < n:
        return InterfaceFrame(seq, step_index, kind, (0.0, 0.0, omega0), ready=False)
    w = window[-n:]
    t0 = w[0].t
    per_phase = [to_dynamic_phasor([getattr(s, ph) for s in w], omega0, dt, t0).value for ph in "abc"]
    p = positive_sequence(*per_phase)
    return InterfaceFrame(seq, step_index, kind, (p.real, p.imag, omega0))


def dp_exchange_decode(f: InterfaceFrame, t: float) -> ThreePhaseSample:
    if not f.kind.is_dp:
        raise FrameError(f"expected a dynamic-phasor frame, got {f.kind.name}")
    re, im, omega0 = f.payload
    if not (math.isfinite(re) and math.isfinite(im) and omega0 > 0):
        raise FrameError(f"malformed phasor payload {f.payload}")
    return dp_to_three_phase(DynamicPhasor(re, im, omega0), t)


@dataclass
class ExchangeStats:
    missing: int = 0
    not_ready: int = 0


class _Side:
    send_kind: FrameKind
    recv_kind: FrameKind

    def __init__(self, endpoint: Endpoint, variant: ItmVariant | str = ItmVariant.RAW, loss_policy: LossPolicy | str = LossPolicy.ZERO_FILL, f_nom: float = 50.0, dt: float = 50e-6):
        self.endpoint = endpoint
        self.variant = ItmVariant(variant)
        self.loss_policy = LossPolicy(loss_policy)
        self.omega0 = TWO_PI * f_nom
        self.dt = dt
        self.stats = ExchangeStats()
        self._last = ZERO_SAMPLE
        self._phasor = DynamicPhasor(0.0, 0.0, self.omega0)
        self._sliding = SlidingPhasor(self.omega0, dt) if self.variant is ItmVariant.DYNAMIC_PHASOR else None
        if self._sliding is not None:
            self.send_kind = FrameKind(self.send_kind + 2)
            self.recv_kind = FrameKind(self.recv_kind + 2)

    def send(self, step: int, sample: ThreePhaseSample) -> None:
        if self._sliding is None:
            frame = InterfaceFrame(step, step, self.send_kind, (sample.a, sample.b, sample.c))
        else:
            p = self._sliding.update(sample)
            frame = InterfaceFrame(step, step, self.send_kind, (p.re, p.im, p.omega0), ready=self._sliding.ready)
        self.endpoint.send(frame)

    def receive(self, step: int, t: float) -> ThreePhaseSample:
        frame = self.endpoint.recv_for_step(step)
        if frame is not None and frame.kind is not self.recv_kind:
            raise FrameError(f"expected {self.recv_kind.name} frame, got {frame.kind.name}")
        if self._sliding is not None:
            # a phasor varies slowly: lost or not-ready frames keep the previous one
            if frame is None:
                self.stats.missing += 1
            elif not frame.ready:
                self.stats.not_ready += 1
            else:
                self._phasor = DynamicPhasor(*frame.payload)
            return dp_to_three_phase(self._phasor, t)
        if frame is None:
            self.stats.missing += 1
            if self.loss_policy is LossPolicy.ZERO_FILL:
                self._last = ThreePhaseSample(t, 0.0, 0.0, 0.0)
            else:
                self._last = ThreePhaseSample(t, self._last.a, self._last.b, self._last.c)
            return self._last
        a, b, c = frame.payload
        self._last = ThreePhaseSample(t, a, b, c)
        return self._last

    def exchange(self, step: int, t: float, sample: ThreePhaseSample) -> ThreePhaseSample:
        """Send this step's sample and return the peer's sample for this step."""
        self.send(step, sample)
        return self.receive(step, t)


class GridSide(_Side):
    """Voltage-sending, current-receiving end (hold-last by default)."""

    send_kind = FrameKind.VOLTAGE
    recv_kind = FrameKind.CURRENT

    def __init__(self, endpoint: Endpoint, variant=ItmVariant.RAW, loss_policy=LossPolicy.HOLD_LAST, f_nom: float = 50.0, dt: float = 50e-6):
        super().__init__(endpoint, variant, loss_policy, f_nom, dt)


class MicrogridSide(_Side):
    """Current-sending, voltage-receiving end (zero-fill by default)."""

    send_kind = FrameKind.CURRENT
    recv_kind = FrameKind.VOLTAGE


def grid_side_exchange(side: GridSide, step: int, t: float, v_pcc: ThreePhaseSample) -> ThreePhaseSample:
    return side.exchange(step, t, v_pcc)


def microgrid_side_exchange(side: MicrogridSide, step: int, t: float, i_total: ThreePhaseSample) -> ThreePhaseSample:
    return side.exchange(step, t, i_total)


@dataclass
class ReconstructorState:
    pll: PllState
    ma: MovingAverageRms
    amplitude_floor: float


class VoltageReconstructor:
    """Rebuilds a clean balanced voltage from a possibly zero-filled one.

    Angle from the PLL (no buffering), amplitude from the one-period moving
    RMS.  Returns the clean sample plus the PLL angle, frequency and RMS so the
    microgrid controllers can reuse them.
    """

    def __init__(self, dt: float, f_nom: float = 50.0, v_nominal_rms: float = 230.0, kp: float | None = None, ki: float | None = None, window_len: int | None = None, floor_ratio: float = 0.1):
        self.dt = dt
        n = window_len or period_samples(TWO_PI * f_nom, dt)
        v_pk = SQRT2 * v_nominal_rms
        pll_kwargs = {"f_nominal": f_nom, "v_nominal_peak": v_pk, "floor_ratio": floor_ratio}
        if kp is not None:
            pll_kwargs["kp_pll"] = kp
        if ki is not None:
            pll_kwargs["ki_pll"] = ki
        self.state = ReconstructorState(PllState(**pll_kwargs), MovingAverageRms(n), floor_ratio * v_pk)
        self.pll = Pll(self.state.pll)
        self.theta = 0.0
        self.f_est = f_nom
        self.v_rms = 0.0

    def step(self, v_raw: ThreePhaseSample) -> ThreePhaseSample:
        ms = (v_raw.a * v_raw.a + v_raw.b * v_raw.b + v_raw.c * v_raw.c) / 3.0
        self.v_rms = self.state.ma.update_square(ms)
        amp = SQRT2 * self.v_rms
        self.theta, self.f_est = self.pll.step(v_raw, self.dt, amplitude=amp)
        th = self.theta
        return ThreePhaseSample(v_raw.t, amp * math.cos(th), amp * math.cos(th - SHIFT), amp * math.cos(th + SHIFT))


def reconstruct_voltage(state: VoltageReconstructor, v_raw: ThreePhaseSample, dt: float) -> ThreePhaseSample:
    if abs(dt - state.dt) > 1e-15:
        raise ConfigError(f"reconstructor was built for dt={state.dt}, called with {dt}")
    return state.step(v_raw)
