"""Three-phase signal mathematics shared by the grid, microgrid and coupling code.

Conventions
-----------
* Waveforms use the cosine reference on phase a; phases b and c lag by
  2*pi/3 and 4*pi/3.
* The Park transform is amplitude invariant (peak convention).  A voltage
  ``A*cos(phi)`` seen in a frame at angle ``theta`` maps to
  ``d + j*q = A*exp(j*(phi - theta))``, so a voltage that leads the frame
  (positive frequency error) drives ``q`` positive.
* Power: ``P = 1.5*(vd*id + vq*iq)``, ``Q = 1.5*(vq*id - vd*iq)``; positive Q
  is absorbed by an inductive load.
"""
from __future__ import annotations

import cmath
import math
from typing import NamedTuple, Sequence

TWO_PI = 2.0 * math.pi
SHIFT = TWO_PI / 3.0
SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)
ALPHA = cmath.exp(1j * SHIFT)  # 120 degree rotation operator
ALPHA2 = ALPHA * ALPHA

# relative tolerance for "window spans exactly one period"
_PERIOD_RTOL = 1e-6


class ThreePhaseSample(NamedTuple):
    """One time-stamped instantaneous (a, b, c) triple."""

    t: float
    a: float
    b: float
    c: float


class DqFrame(NamedTuple):
    d: float
    q: float
    zero: float
    theta: float

    @property
    def phasor(self) -> complex:
        return complex(self.d, self.q)


class DynamicPhasor(NamedTuple):
    """Fundamental-frequency Fourier coefficient, peak convention."""

    re: float
    im: float
    omega0: float

    @property
    def value(self) -> complex:
        return complex(self.re, self.im)

    def __abs__(self) -> float:
        return math.hypot(self.re, self.im)


ZERO_SAMPLE = ThreePhaseSample(0.0, 0.0, 0.0, 0.0)


def synth_three_phase(amplitude_peak: float, freq: float, phase0: float, t: float) -> ThreePhaseSample:
    if amplitude_peak < 0:
        raise ValueError(f"amplitude must be non-negative, got {amplitude_peak}")
    if freq <= 0:
        raise ValueError(f"frequency must be positive, got {freq}")
    ang = TWO_PI * freq * t + phase0
    return ThreePhaseSample(
        t,
        amplitude_peak * math.cos(ang),
        amplitude_peak * math.cos(ang - SHIFT),
        amplitude_peak * math.cos(ang - 2.0 * SHIFT),
    )


def balanced_from_phasor(phasor: complex, theta: float, t: float) -> ThreePhaseSample:
    """Balanced abc set whose phase-a component is ``Re(phasor*exp(j*theta))``."""
    return inverse_park(DqFrame(phasor.real, phasor.imag, 0.0, theta), theta, t)


def park_transform(s: ThreePhaseSample, theta: float) -> DqFrame:
    ca, sa = math.cos(theta), math.sin(theta)
    cb, sb = math.cos(theta - SHIFT), math.sin(theta - SHIFT)
    cc, sc = math.cos(theta + SHIFT), math.sin(theta + SHIFT)
    d = (2.0 / 3.0) * (s.a * ca + s.b * cb + s.c * cc)
    q = -(2.0 / 3.0) * (s.a * sa + s.b * sb + s.c * sc)
    return DqFrame(d, q, (s.a + s.b + s.c) / 3.0, theta)


def inverse_park(f: DqFrame, theta: float, t: float = 0.0) -> ThreePhaseSample:
    d, q, z = f.d, f.q, f.zero
    return ThreePhaseSample(
        t,
        d * math.cos(theta) - q * math.sin(theta) + z,
        d * math.cos(theta - SHIFT) - q * math.sin(theta - SHIFT) + z,
        d * math.cos(theta + SHIFT) - q * math.sin(theta + SHIFT) + z,
    )


def instantaneous_power(v: ThreePhaseSample, i: ThreePhaseSample, dt: float | None = None) -> float:
    """Total three-phase instantaneous power ``va*ia + vb*ib + vc*ic``.

    The two samples may be at most one step ``dt`` apart (the coupling pipeline
    pairs the voltage sent at step k with the current produced at k-1).
    """
    skew = abs(v.t - i.t)
    limit = (dt if dt is not None else 0.0) + 1e-9
    if skew > limit:
        raise ValueError(f"timestamp mismatch {skew:.3g} s between voltage and current samples")
    return v.a * i.a + v.b * i.b + v.c * i.c


def pq_from_dq(v: DqFrame, i: DqFrame) -> tuple[float, float]:
    if abs(v.theta - i.theta) > 1e-12:
        raise ValueError("voltage and current frames use different angles")
    p = 1.5 * (v.d * i.d + v.q * i.q)
    q = 1.5 * (v.q * i.d - v.d * i.q)
    return p, q


class MovingAverage:
    """Running mean over the last ``window_len`` inputs (real or complex).

    The buffer starts zero-filled, so the output ramps up over the first
    window.  The running sum is kept as a compensated (hi, lo) pair, so a
    large sample leaving the window does not leave rounding residue behind,
    and it is rebuilt from the buffer once per window.
    """

    def __init__(self, window_len: int, initial: float | complex = 0.0):
        if window_len < 1:
            raise ValueError(f"window_len must be >= 1, got {window_len}")
        self.window_len = window_len
        self.buffer = [initial] * window_len
        self._hi = initial * window_len
        self._lo = initial * 0
        self._idx = 0

    def _add(self, v) -> None:
        # TwoSum: hi + lo carries the exact rounding error of each addition
        a = self._hi
        t = a + v
        bp = t - a
        self._lo += (a - (t - bp)) + (v - bp)
        self._hi = t

    def update(self, x):
        buf = self.buffer
        idx = self._idx
        self._add(x)
        self._add(-buf[idx])
        buf[idx] = x
        idx += 1
        if idx == self.window_len:
            idx = 0
            self._hi, self._lo = _split_sum(buf)
        self._idx = idx
        return self.total / self.window_len

    @property
    def total(self):
        return self._hi + self._lo

    @property
    def value(self):
        return self.total / self.window_len

    def exact_total(self):
        hi, lo = _split_sum(self.buffer)
        return hi + lo


def _split_sum(values):
    """Correctly rounded sum plus the remainder it dropped (component-wise for complex)."""
    if any(isinstance(v, complex) for v in values):
        re_hi, re_lo = _split_sum([v.real for v in values])
        im_hi, im_lo = _split_sum([v.imag for v in values])
        return complex(re_hi, im_hi), complex(re_lo, im_lo)
    hi = math.fsum(values)
    return hi, math.fsum([*values, -hi])


class MovingAverageRms(MovingAverage):
    """RMS over a trailing window: ``sqrt(mean(x**2))``.

    Group delay is ``window_len/2`` samples.
    """

    def update(self, x: float) -> float:
        return math.sqrt(max(MovingAverage.update(self, x * x), 0.0))

    def update_square(self, x2: float) -> float:
        return math.sqrt(max(MovingAverage.update(self, x2), 0.0))

    @property
    def rms(self) -> float:
        return math.sqrt(max(self.value, 0.0))


def moving_average_rms(state: MovingAverageRms, x: float) -> tuple[MovingAverageRms, float]:
    """Functional wrapper around :meth:`MovingAverageRms.update` (mutates ``state``)."""
    return state, state.update(x)


def period_samples(omega0: float, dt: float) -> int:
    """Samples in one period of ``omega0``; raises if the period is not a whole number of steps."""
    if omega0 <= 0 or dt <= 0:
        raise ValueError("omega0 and dt must be positive")
    exact = TWO_PI / (omega0 * dt)
    n = round(exact)
    if n < 2 or abs(n - exact) > _PERIOD_RTOL * exact:
        raise ValueError(
            f"period 2*pi/omega0 = {TWO_PI / omega0:.6g} s is not an integer multiple of dt = {dt:.6g} s"
        )
    return n


def to_dynamic_phasor(window: Sequence[float], omega0: float, dt: float, t0: float = 0.0) -> DynamicPhasor:
    """Single-bin Fourier coefficient at ``omega0`` of one period of samples.

    ``t0`` is the time of the first sample; the phasor is referenced to
    absolute time so that ``Re(X*exp(j*omega0*t))`` reproduces the signal.
    """
    n = period_samples(omega0, dt)
    if len(window) != n:
        raise ValueError(f"window has {len(window)} samples, one period needs {n}")
    acc = 0j
    for k, x in enumerate(window):
        acc += x * cmath.exp(-1j * omega0 * (t0 + k * dt))
    acc *= 2.0 / n
    return DynamicPhasor(acc.real, acc.imag, omega0)


def from_dynamic_phasor(p: DynamicPhasor, t: float) -> float:
    return (p.value * cmath.exp(1j * p.omega0 * t)).real


def positive_sequence(xa: complex, xb: complex, xc: complex) -> complex:
    return (xa + ALPHA * xb + ALPHA2 * xc) / 3.0


class SlidingPhasor:
    """Streaming positive-sequence dynamic phasor of a three-phase signal.

    Keeps one period of ``x * exp(-j*omega0*t)`` terms per phase; O(1) per
    sample.  ``ready`` is False until one full period has been seen.
    """

    def __init__(self, omega0: float, dt: float):
        self.omega0 = omega0
        self.dt = dt
        self.n = period_samples(omega0, dt)
        self._avg = MovingAverage(self.n, 0j)
        self.count = 0

    @property
    def ready(self) -> bool:
        return self.count >= self.n

    def update(self, s: ThreePhaseSample) -> DynamicPhasor:
        rot = cmath.exp(-1j * self.omega0 * s.t)
        # positive-sequence combination of the three per-phase bin terms
        term = (s.a + ALPHA * s.b + ALPHA2 * s.c) * rot / 3.0
        mean = self._avg.update(term)
        self.count += 1
        val = 2.0 * mean
        return DynamicPhasor(val.real, val.imag, self.omega0)


def dp_to_three_phase(p: DynamicPhasor, t: float) -> ThreePhaseSample:
    """Balanced abc waveform of a positive-sequence phasor at time ``t``."""
    return balanced_from_phasor(p.value, p.omega0 * t, t)


def rms(values: Sequence[float]) -> float:
    if len(values) == 0:
        return 0.0
    return math.sqrt(sum(x * x for x in values) / len(values))
