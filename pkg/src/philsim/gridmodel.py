"""Reduced dynamic equivalent of the 20 kV campus network.

One aggregate swing machine feeds a radial MV feeder

    source --z_seg-- n3 --z_seg-- n2 --z_seg-- n1 (PCC station) --z_thev-- PCC (400 V)

so n1, n2, n3 are consecutive stations moving away from the point of common
coupling.  Node loads are constant power; the microgrid enters as the
positive-sequence current measured at the PCC.  The PCC voltage is a balanced
positive-sequence waveform whose angle integrates the grid frequency.

Events placed at ``"pcc"`` act on the MV side of the PCC station (bus n1);
a megawatt-scale load cannot sit on the 400 V bus itself.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, DivergenceError
from .signals import (
    SQRT2,
    SQRT3,
    TWO_PI,
    MovingAverage,
    ThreePhaseSample,
    balanced_from_phasor,
    park_transform,
    period_samples,
)

NODES = ("n1", "n2", "n3")
LOCATIONS = ("pcc",) + NODES
MAX_DELTA_F = 5.0


@dataclass
class GridParams:
    s_base: float = 20e6
    f_nom: float = 50.0
    v_nom_ll: float = 400.0
    v_mv_ll: float = 20e3
    h: float = 3.0
    d_damp: float = 25.0
    z_thev: complex = complex(0.04, 0.04)  # ohms, 400 V side
    z_seg: complex = complex(0.3, 0.3)  # ohms per segment, 20 kV side
    p_base_load: float = 6e6
    v_source_pu: float = 1.0

    def validate(self) -> None:
        for name in ("s_base", "f_nom", "v_nom_ll", "v_mv_ll", "h", "d_damp"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"must be > 0, got {getattr(self, name)}", field=f"grid.{name}")
        if not abs(self.z_thev) > 0:
            raise ConfigError("must have non-zero magnitude", field="grid.z_thev")
        for name in ("z_thev", "z_seg"):
            z = getattr(self, name)
            if z.real < 0 or z.imag < 0:
                raise ConfigError(f"must be passive (non-negative R and X), got {z}", field=f"grid.{name}")
        if self.p_base_load < 0:
            raise ConfigError("must be >= 0", field="grid.p_base_load")
        if not 0.8 <= self.v_source_pu <= 1.2:
            raise ConfigError(f"must lie in [0.8, 1.2], got {self.v_source_pu}", field="grid.v_source_pu")

    @property
    def v_phase_rms(self) -> float:
        return self.v_nom_ll / SQRT3

    @property
    def i_base_lv(self) -> float:
        return self.s_base / (SQRT3 * self.v_nom_ll)

    @property
    def z_seg_pu(self) -> complex:
        return self.z_seg / (self.v_mv_ll**2 / self.s_base)


@dataclass(frozen=True)
class LoadStepEvent:
    t_event: float
    delta_p: float
    delta_q: float = 0.0
    location: str = "pcc"
    event_id: str = ""

    def __post_init__(self):
        if self.location not in LOCATIONS:
            raise ConfigError(f"unknown event location {self.location!r}; expected one of {LOCATIONS}")

    @property
    def key(self):
        return (self.event_id, self.t_event, self.location, self.delta_p, self.delta_q)


@dataclass
class GridState:
    delta_f: float = 0.0
    p_load: float = 0.0
    v_source_pu: float = 1.0
    t: float = 0.0
    theta: float = 0.0
    # constant pre-event dispatch in per unit of s_base
    p_gen_pu: float = 0.0
    extra_load: dict = field(default_factory=lambda: {n: 0j for n in NODES})
    applied: set = field(default_factory=set)

    @classmethod
    def initial(cls, params: GridParams, p_exchange: float = 0.0) -> "GridState":
        return cls(
            p_load=params.p_base_load,
            v_source_pu=params.v_source_pu,
            p_gen_pu=(params.p_base_load + p_exchange) / params.s_base,
        )

    def rebalance(self, params: GridParams, p_exchange: float) -> None:
        """Set the dispatch so the current operating point is an equilibrium."""
        self.p_gen_pu = (self.p_load + p_exchange) / params.s_base


def frequency_derivative(delta_f: float, p_load: float, p_exchange: float, p_gen_pu: float, params: GridParams) -> float:
    imbalance = -(p_load + p_exchange) / params.s_base + p_gen_pu - params.d_damp * delta_f / params.f_nom
    return params.f_nom / (2.0 * params.h) * imbalance


def grid_step(state: GridState, params: GridParams, p_exchange: float, q_exchange: float, dt: float, step: int | None = None) -> GridState:
    """Forward-Euler swing update; ``q_exchange`` does not enter the frequency dynamics."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    state.delta_f += dt * frequency_derivative(state.delta_f, state.p_load, p_exchange, state.p_gen_pu, params)
    state.t += dt
    if not abs(state.delta_f) < MAX_DELTA_F:
        raise DivergenceError(f"frequency deviation {state.delta_f:.3f} Hz exceeds {MAX_DELTA_F} Hz", step=step)
    return state


def steady_state_delta_f(delta_p: float, params: GridParams) -> float:
    return -(delta_p / params.s_base) * params.f_nom / params.d_damp


def apply_event(state: GridState, e: LoadStepEvent) -> GridState:
    if e.key in state.applied:
        raise ValueError(f"event {e.event_id or e.key} already applied")
    state.applied.add(e.key)
    if e.delta_p == 0 and e.delta_q == 0:
        return state
    state.p_load += e.delta_p
    node = "n1" if e.location == "pcc" else e.location
    state.extra_load[node] += complex(e.delta_p, e.delta_q)
    return state


@dataclass
class FeederSolution:
    v_nodes_pu: dict  # n1..n3 complex per unit, source frame
    v_pcc: complex  # phase RMS volts, source frame
    i_pcc: complex  # positive-sequence phase RMS amps into the microgrid


class CampusGrid:
    """Grid-side solver: swing equation plus the quasi-static feeder."""

    def __init__(self, params: GridParams, dt: float, state: GridState | None = None):
        params.validate()
        self.params = params
        self.dt = dt
        self.state = state if state is not None else GridState.initial(params)
        self._ipos = MovingAverage(period_samples(TWO_PI * params.f_nom, dt), 0j)
        self._v = {n: complex(self.state.v_source_pu, 0.0) for n in NODES}
        self.solution = FeederSolution(dict(self._v), complex(params.v_phase_rms * self.state.v_source_pu, 0.0), 0j)

    def measure_current(self, i_pcc: ThreePhaseSample) -> complex:
        """Feed one current sample; returns the one-period positive-sequence phasor (peak amps)."""
        dq = park_transform(i_pcc, self.state.theta)
        return self._ipos.update(complex(dq.d, dq.q))

    def solve(self, i_pos_peak: complex, sweeps: int = 2) -> FeederSolution:
        p = self.params
        st = self.state
        z = p.z_seg_pu
        i_rms = i_pos_peak / SQRT2
        i_mg = i_rms / p.i_base_lv
        base = p.p_base_load / 3.0 / p.s_base
        e = complex(st.v_source_pu, 0.0)
        v = self._v
        s_pu = {n: complex(base, 0.0) + st.extra_load[n] / p.s_base for n in NODES}
        for _ in range(sweeps):
            i1 = (s_pu["n1"] / v["n1"]).conjugate() + i_mg
            i2 = (s_pu["n2"] / v["n2"]).conjugate() + i1
            i3 = (s_pu["n3"] / v["n3"]).conjugate() + i2
            v3 = e - z * i3
            v2 = v3 - z * i2
            v1 = v2 - z * i1
            v = {"n1": v1, "n2": v2, "n3": v3}
        self._v = v
        v_pcc = v["n1"] * p.v_phase_rms - p.z_thev * i_rms
        self.solution = FeederSolution(v, v_pcc, i_rms)
        return self.solution

    def pcc_voltage(self, i_pcc: ThreePhaseSample, t: float | None = None) -> ThreePhaseSample:
        sol = self.solve(self.measure_current(i_pcc))
        return balanced_from_phasor(SQRT2 * sol.v_pcc, self.state.theta, self.state.t if t is None else t)

    def node_voltages(self) -> tuple[float, float, float]:
        """Phase RMS voltages at n1, n2, n3 referred to the 400 V side."""
        v = self.solution.v_nodes_pu
        base = self.params.v_phase_rms
        return abs(v["n1"]) * base, abs(v["n2"]) * base, abs(v["n3"]) * base

    def exchange_power(self) -> tuple[float, float]:
        """Three-phase (P, Q) flowing from the grid into the microgrid."""
        s = 3.0 * self.solution.v_pcc * self.solution.i_pcc.conjugate()
        return s.real, s.imag

    def step(self, p_exchange: float, q_exchange: float, frozen: bool = False, step: int | None = None) -> None:
        """Advance the frequency state and the source angle by one step."""
        st = self.state
        if frozen:
            st.t += self.dt
        else:
            grid_step(st, self.params, p_exchange, q_exchange, self.dt, step=step)
        st.theta = (st.theta + TWO_PI * (self.params.f_nom + st.delta_f) * self.dt) % TWO_PI

    def apply_event(self, e: LoadStepEvent) -> None:
        apply_event(self.state, e)

    @property
    def frequency(self) -> float:
        return self.params.f_nom + self.state.delta_f

