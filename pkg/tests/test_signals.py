import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from philsim.signals import (
    SQRT2,
    TWO_PI,
    DqFrame,
    DynamicPhasor,
    MovingAverage,
    MovingAverageRms,
    SlidingPhasor,
    ThreePhaseSample,
    balanced_from_phasor,
    dp_to_three_phase,
    from_dynamic_phasor,
    instantaneous_power,
    inverse_park,
    moving_average_rms,
    park_transform,
    period_samples,
    positive_sequence,
    pq_from_dq,
    synth_three_phase,
    to_dynamic_phasor,
)

DT = 50e-6
W0 = TWO_PI * 50.0
N = 400

angles = st.floats(-10.0, 10.0, allow_nan=False)
amps = st.floats(0.0, 1000.0, allow_nan=False)


def window(fn, n=N, t0=0.0):
    return [fn(t0 + k * DT) for k in range(n)]


# ---------------------------------------------------------------- synthesis


def test_synth_at_zero():
    s = synth_three_phase(1.0, 50.0, 0.0, 0.0)
    assert (s.a, s.b, s.c) == pytest.approx((1.0, -0.5, -0.5), abs=1e-15)


@given(phase=angles, t=st.floats(0, 100))
def test_synth_zero_amplitude(phase, t):
    s = synth_three_phase(0.0, 50.0, phase, t)
    assert (s.a, s.b, s.c) == (0.0, 0.0, 0.0)


def test_synth_quarter_period():
    assert synth_three_phase(325.27, 50.0, 0.0, 0.005).a == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("bad", [(-1.0, 50.0), (1.0, 0.0), (1.0, -50.0)])
def test_synth_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        synth_three_phase(bad[0], bad[1], 0.0, 0.0)


# ---------------------------------------------------------------- Park


def test_park_aligned_frame():
    s = synth_three_phase(1.0, 50.0, 0.3, 0.0)
    f = park_transform(s, 0.3)
    assert (f.d, f.q, f.zero) == pytest.approx((1.0, 0.0, 0.0), abs=1e-12)


def test_park_quadrature_frame_sign():
    # the input lags a frame advanced by pi/2, so q is negative
    s = synth_three_phase(1.0, 50.0, 0.0, 0.0)
    f = park_transform(s, math.pi / 2)
    assert (f.d, f.q, f.zero) == pytest.approx((0.0, -1.0, 0.0), abs=1e-12)


def test_park_leading_voltage_drives_q_positive():
    s = synth_three_phase(1.0, 50.0, 0.01, 0.0)
    assert park_transform(s, 0.0).q > 0


@given(theta=angles)
def test_park_pure_zero_sequence(theta):
    f = park_transform(ThreePhaseSample(0.0, 1.0, 1.0, 1.0), theta)
    assert f.d == pytest.approx(0.0, abs=1e-12)
    assert f.q == pytest.approx(0.0, abs=1e-12)
    assert f.zero == pytest.approx(1.0)


@given(amp=amps, phi=angles, theta=angles)
def test_park_magnitude_is_amplitude(amp, phi, theta):
    f = park_transform(synth_three_phase(amp, 50.0, phi, 0.0), theta)
    assert math.hypot(f.d, f.q) == pytest.approx(amp, rel=1e-9, abs=1e-9)


@given(d=st.floats(-500, 500), q=st.floats(-500, 500), theta=angles)
def test_park_inverse_round_trip(d, q, theta):
    s = inverse_park(DqFrame(d, q, 0.0, theta), theta)
    f = park_transform(s, theta)
    assert f.d == pytest.approx(d, rel=1e-9, abs=1e-9)
    assert f.q == pytest.approx(q, rel=1e-9, abs=1e-9)


@given(a=st.floats(-500, 500), b=st.floats(-500, 500), theta=angles)
def test_inverse_park_of_park_is_identity(a, b, theta):
    s = ThreePhaseSample(0.0, a, b, -a - b)
    r = inverse_park(park_transform(s, theta), theta)
    scale = max(1.0, abs(a), abs(b))
    for x, y in zip((r.a, r.b, r.c), (s.a, s.b, s.c)):
        assert abs(x - y) <= 1e-9 * scale


def test_inverse_park_unit_d_is_balanced_cosine():
    for k in range(0, N, 37):
        t = k * DT
        s = inverse_park(DqFrame(1.0, 0.0, 0.0, W0 * t), W0 * t, t)
        ref = synth_three_phase(1.0, 50.0, 0.0, t)
        assert (s.a, s.b, s.c) == pytest.approx((ref.a, ref.b, ref.c), abs=1e-12)


def test_inverse_park_zero():
    assert inverse_park(DqFrame(0, 0, 0, 1.2), 1.2)[1:] == (0.0, 0.0, 0.0)


def test_balanced_from_phasor_matches_complex_oracle():
    ph = cmath.rect(2.0, 0.4)
    s = balanced_from_phasor(ph, 1.1, 0.0)
    assert s.a == pytest.approx((ph * cmath.exp(1.1j)).real)
    assert s.b == pytest.approx((ph * cmath.exp(1j * (1.1 - TWO_PI / 3))).real)


# ---------------------------------------------------------------- power


def test_power_in_phase_is_constant():
    for k in range(0, N, 50):
        t = k * DT
        v = synth_three_phase(325.0, 50.0, 0.2, t)
        i = synth_three_phase(10.0, 50.0, 0.2, t)
        assert instantaneous_power(v, i) == pytest.approx(1.5 * 325.0 * 10.0)


def test_power_zero_current():
    v = synth_three_phase(325.0, 50.0, 0.0, 0.0)
    assert instantaneous_power(v, ThreePhaseSample(0.0, 0, 0, 0)) == 0.0


def test_power_quadrature_averages_to_zero():
    ps = [instantaneous_power(synth_three_phase(325, 50, 0, t), synth_three_phase(10, 50, -math.pi / 2, t)) for t in np.arange(N) * DT]
    assert abs(np.mean(ps)) < 1e-9


def test_power_timestamp_mismatch():
    v = synth_three_phase(1, 50, 0, 0.0)
    i = synth_three_phase(1, 50, 0, 2 * DT)
    with pytest.raises(ValueError):
        instantaneous_power(v, i, DT)
    # one step of skew is the pipeline's normal pairing
    instantaneous_power(v, synth_three_phase(1, 50, 0, DT), DT)


def test_pq_aligned():
    p, q = pq_from_dq(DqFrame(325.27, 0, 0, 0), DqFrame(10, 0, 0, 0))
    assert p == pytest.approx(4879.05)
    assert q == 0.0
    assert pq_from_dq(DqFrame(325.27, 0, 0, 0), DqFrame(0, 0, 0, 0)) == (0.0, 0.0)


def test_pq_rejects_mixed_frames():
    with pytest.raises(ValueError):
        pq_from_dq(DqFrame(1, 0, 0, 0.0), DqFrame(1, 0, 0, 0.1))


@settings(max_examples=40)
@given(av=st.floats(50, 400), ai=st.floats(1, 200), pv=angles, pi=angles, theta=angles)
def test_pq_matches_mean_instantaneous_power(av, ai, pv, pi, theta):
    v0 = synth_three_phase(av, 50, pv, 0.0)
    i0 = synth_three_phase(ai, 50, pi, 0.0)
    p, q = pq_from_dq(park_transform(v0, theta), park_transform(i0, theta))
    ts = np.arange(0, N, 8) * DT
    mean_p = np.mean([instantaneous_power(synth_three_phase(av, 50, pv, t), synth_three_phase(ai, 50, pi, t)) for t in ts])
    s = 1.5 * av * ai
    assert abs(p - mean_p) <= 5e-3 * s + 1e-9
    # oracle: complex power of peak phasors
    sc = 1.5 * cmath.rect(av, pv) * cmath.rect(ai, pi).conjugate()
    assert p == pytest.approx(sc.real, abs=1e-9 * s)
    assert q == pytest.approx(sc.imag, abs=1e-9 * s)


# ---------------------------------------------------------------- moving averages


def test_ma_constant():
    ma = MovingAverageRms(N)
    for _ in range(N):
        r = ma.update(-3.5)
    assert r == pytest.approx(3.5)


def test_ma_rms_of_sine():
    ma = MovingAverageRms(N)
    for t in np.arange(2 * N) * DT:
        r = ma.update(325.27 * math.cos(W0 * t + 0.3))
    assert 0.999 * 325.27 / SQRT2 <= r <= 1.001 * 325.27 / SQRT2
    assert r == pytest.approx(230.0, rel=1e-3)


def test_ma_functional_wrapper():
    st_, r = moving_average_rms(MovingAverageRms(4), 2.0)
    assert isinstance(st_, MovingAverageRms)
    assert r == pytest.approx(1.0)  # sqrt(4/4) with three zeros in the buffer


def test_ma_window_must_be_positive():
    with pytest.raises(ValueError):
        MovingAverage(0)


@given(xs=st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), n=st.integers(1, 9))
def test_ma_matches_numpy_oracle(xs, n):
    ma = MovingAverageRms(n)
    buf = [0.0] * n
    for x in xs:
        r = ma.update(x)
        buf = (buf + [x])[-n:]
        assert r == pytest.approx(math.sqrt(np.mean(np.square(buf))), rel=1e-9, abs=1e-9)
    assert ma.total == pytest.approx(ma.exact_total(), rel=1e-9, abs=1e-6)


def test_ma_running_sum_is_rebuilt_each_window():
    ma = MovingAverage(3)
    for x in (1e16, 1.0, -1e16, 2.0, 3.0, 4.0):
        ma.update(x)
    assert ma.total == ma.exact_total() == 9.0


# ---------------------------------------------------------------- dynamic phasors


def test_period_samples():
    assert period_samples(W0, DT) == 400
    assert period_samples(W0, 100e-6) == 200
    with pytest.raises(ValueError):
        period_samples(W0, 30e-6)


def test_dp_of_cosine():
    p = to_dynamic_phasor(window(lambda t: 2.0 * math.cos(W0 * t)), W0, DT)
    assert (p.re, p.im) == pytest.approx((2.0, 0.0), abs=1e-2 * 2.0)


def test_dp_of_sine():
    p = to_dynamic_phasor(window(lambda t: 2.0 * math.sin(W0 * t)), W0, DT)
    assert (p.re, p.im) == pytest.approx((0.0, -2.0), abs=1e-2)


def test_dp_rejects_wrong_window():
    with pytest.raises(ValueError):
        to_dynamic_phasor([0.0] * 399, W0, DT)


def test_dp_fundamental_with_harmonic():
    x = window(lambda t: math.cos(W0 * t) + 0.3 * math.cos(3 * W0 * t + 0.7))
    p = to_dynamic_phasor(x, W0, DT)
    # numerical quadrature oracle of the fundamental coefficient
    ts = np.arange(N) * DT
    ref = 2.0 / N * np.sum(np.array(x) * np.exp(-1j * W0 * ts))
    assert abs(p) == pytest.approx(1.0, rel=1e-2)
    assert p.value == pytest.approx(complex(ref), abs=1e-12)


@given(amp=st.floats(0.1, 500), phi=angles, k0=st.integers(0, 5000))
@settings(max_examples=30)
def test_dp_magnitude_and_absolute_time_reference(amp, phi, k0):
    t0 = k0 * DT
    p = to_dynamic_phasor(window(lambda t: amp * math.cos(W0 * t + phi), t0=t0), W0, DT, t0)
    assert abs(p) == pytest.approx(amp, rel=5e-3)
    assert p.value == pytest.approx(cmath.rect(amp, phi), abs=1e-9 * amp)


def test_from_dp():
    assert from_dynamic_phasor(DynamicPhasor(3.0, 0.0, W0), 0.0) == 3.0
    for t in (0.0, 0.0123, 7.0):
        assert from_dynamic_phasor(DynamicPhasor(0.0, 0.0, W0), t) == 0.0


@given(amp=st.floats(0.1, 500), phi=angles)
@settings(max_examples=30)
def test_dp_round_trip(amp, phi):
    fn = lambda t: amp * math.cos(W0 * t + phi)
    p = to_dynamic_phasor(window(fn), W0, DT)
    ts = (N + np.arange(N)) * DT
    err = [from_dynamic_phasor(p, t) - fn(t) for t in ts]
    assert math.sqrt(np.mean(np.square(err))) < 0.01 * amp / SQRT2


def test_positive_sequence_of_balanced_set():
    x = cmath.rect(1.0, 0.3)
    assert positive_sequence(x, x * cmath.exp(-2j * math.pi / 3), x * cmath.exp(2j * math.pi / 3)) == pytest.approx(x)
    # a negative-sequence set has no positive component
    assert abs(positive_sequence(x, x * cmath.exp(2j * math.pi / 3), x * cmath.exp(-2j * math.pi / 3))) < 1e-12


def test_sliding_phasor_matches_block_phasor():
    sp = SlidingPhasor(W0, DT)
    amp, phi = 100.0, 0.8
    samples = [synth_three_phase(amp, 50, phi, k * DT) for k in range(N + 137)]
    for s in samples[:-1]:
        sp.update(s)
    assert sp.ready
    p = sp.update(samples[-1])
    w = samples[-N:]
    ref = positive_sequence(*[to_dynamic_phasor([getattr(s, ph) for s in w], W0, DT, w[0].t).value for ph in "abc"])
    assert p.value == pytest.approx(ref, abs=1e-9)
    assert p.value == pytest.approx(cmath.rect(amp, phi), abs=1e-6)


def test_sliding_phasor_not_ready_at_start():
    sp = SlidingPhasor(W0, DT)
    sp.update(synth_three_phase(1, 50, 0, 0))
    assert not sp.ready


def test_dp_to_three_phase_reproduces_waveform():
    p = DynamicPhasor(7 * math.cos(-0.4), 7 * math.sin(-0.4), W0)
    for t in (0.0, 0.013, 1.2345):
        s = dp_to_three_phase(p, t)
        ref = synth_three_phase(7.0, 50.0, -0.4, t)
        assert (s.a, s.b, s.c) == pytest.approx((ref.a, ref.b, ref.c), abs=1e-9)
