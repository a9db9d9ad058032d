"""Microgrid-under-test: RL load bank, profile loads and a droop-controlled BESS.

Sign convention for currents returned to the coupling: positive = drawn from
the grid.  The BESS current reference is computed in generator convention
(positive P = injection into the PCC) and subtracted.
"""
from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .signals import ALPHA, ALPHA2, DqFrame, ThreePhaseSample, inverse_park, park_transform

LOADBANK_STEP = 330.0
LOADBANK_MAX = 89_000.0
_MAX_STEPS = int(LOADBANK_MAX // LOADBANK_STEP)  # 269 -> 88 770
PHASES = ("a", "b", "c")


def quantize_power(x: float) -> float:
    """Nearest multiple of 330 (ties up), clipped into [0, 89 kW]."""
    if not math.isfinite(x):
        raise ValueError(f"load bank request must be finite, got {x}")
    k = math.floor(max(x, 0.0) / LOADBANK_STEP + 0.5)
    return min(k, _MAX_STEPS) * LOADBANK_STEP


def is_quantized(x: float) -> bool:
    k = round(x / LOADBANK_STEP)
    return 0 <= k <= _MAX_STEPS and x == k * LOADBANK_STEP


@dataclass(frozen=True)
class LoadBankSetting:
    p_req: float
    q_req: float
    p_act: float
    q_act: float
    # per-phase active power overrides (already quantized), phase -> watts
    overrides: tuple = ()

    def phase_powers(self) -> tuple[tuple[float, float], ...]:
        """(p, q) per phase a, b, c."""
        ovr = dict(self.overrides)
        q = self.q_act / 3.0
        return tuple((ovr.get(ph, self.p_act / 3.0), q) for ph in PHASES)

    def realized_values(self) -> list[float]:
        return [self.p_act, self.q_act] + [p for _, p in self.overrides]


def loadbank_quantize(p_req: float, q_req: float, overrides: dict | None = None) -> LoadBankSetting:
    ovr = tuple(sorted((ph, quantize_power(p)) for ph, p in (overrides or {}).items()))
    for ph, _ in ovr:
        if ph not in PHASES:
            raise ConfigError(f"unknown phase {ph!r}")
    return LoadBankSetting(p_req, q_req, quantize_power(p_req), quantize_power(q_req), ovr)


def loadbank_current(setting: LoadBankSetting, v: ThreePhaseSample, theta: float, v_nominal: float = 230.0) -> ThreePhaseSample:
    """Current of a constant-impedance RL bank sized for ``v_nominal`` (phase RMS).

    ``v`` is projected on the frame at ``theta``; the bank sees its balanced
    positive-sequence part, which is exact for the reconstructed voltage.
    """
    dq = park_transform(v, theta)
    vph = complex(dq.d, dq.q) * complex(math.cos(theta), math.sin(theta))
    if vph == 0:
        return ThreePhaseSample(v.t, 0.0, 0.0, 0.0)
    y2 = v_nominal * v_nominal
    out = []
    for (p, q), rot in zip(setting.phase_powers(), (1.0, ALPHA2, ALPHA)):
        y = complex(p, -q) / y2
        out.append((y * vph * rot).real)
    return ThreePhaseSample(v.t, *out)


def pq_current(p: float, q: float, theta: float, v_m: float, t: float = 0.0) -> ThreePhaseSample:
    """Balanced current that carries (p, q) at phase RMS voltage ``v_m`` aligned with ``theta``.

    Load convention: the returned current absorbs p and q.
    """
    v_peak = math.sqrt(2.0) * v_m
    i_d = (2.0 / 3.0) * p / v_peak
    i_q = -(2.0 / 3.0) * q / v_peak
    return inverse_park(DqFrame(i_d, i_q, 0.0, theta), theta, t)


@dataclass
class LoadProfile:
    t: list
    p: list
    q: list
    name: str = ""

    def __post_init__(self):
        if not self.t:
            raise ConfigError(f"load profile {self.name!r} is empty")
        if not (len(self.t) == len(self.p) == len(self.q)):
            raise ConfigError("profile columns have different lengths")
        if any(b <= a for a, b in zip(self.t, self.t[1:])):
            raise ConfigError(f"profile {self.name} breakpoints must be strictly increasing in t")

    @classmethod
    def from_csv(cls, path: str | Path) -> "LoadProfile":
        path = Path(path)
        try:
            with path.open(newline="", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames != ["t_s", "p_w", "q_var"]:
                    raise ConfigError(f"{path}: header must be t_s,p_w,q_var, got {reader.fieldnames}")
                rows = [(float(r["t_s"]), float(r["p_w"]), float(r["q_var"])) for r in reader]
        except OSError as exc:
            raise ConfigError(f"cannot read profile {path}: {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: malformed row ({exc})") from exc
        return cls([r[0] for r in rows], [r[1] for r in rows], [r[2] for r in rows], name=path.stem)

    def sample(self, t: float) -> tuple[float, float]:
        k = bisect.bisect_right(self.t, t) - 1
        if k < 0:
            k = 0
        return self.p[k], self.q[k]

    def peak_apparent(self) -> float:
        return max(math.hypot(p, q) for p, q in zip(self.p, self.q))


def profile_sample(profile: LoadProfile, t: float) -> tuple[float, float]:
    return profile.sample(t)


@dataclass
class DroopParams:
    k_p: float = 2e6  # W/Hz
    k_q: float = 50e3  # var/V
    f_star: float = 50.0
    v_star: float = 230.0
    p_star: float = 0.0
    q_star: float = 0.0
    p_max: float = 500e3
    q_max: float = 500e3

    def validate(self) -> None:
        if self.k_p < 0 or self.k_q < 0:
            raise ConfigError("droop gains must be non-negative")
        if not (self.p_max > 0 and self.q_max > 0):
            raise ConfigError("droop saturation limits must be positive")
        if not (self.f_star > 0 and self.v_star > 0):
            raise ConfigError("droop nominal values must be positive")


def _clamp(x: float, lim: float) -> float:
    return lim if x > lim else (-lim if x < -lim else x)


def droop_setpoint(d: DroopParams, f_m: float, v_m: float) -> tuple[float, float]:
    p_ref = _clamp(d.p_star + d.k_p * (d.f_star - f_m), d.p_max)
    q_ref = _clamp(d.q_star + d.k_q * (d.v_star - v_m), d.q_max)
    return p_ref, q_ref


def bess_current_ref(p_ref: float, q_ref: float, theta: float, v_m: float, v_floor: float = 23.0, t: float = 0.0) -> ThreePhaseSample:
    """Injected current for (p_ref, q_ref); generator convention, zero below ``v_floor``."""
    if v_m < v_floor or (p_ref == 0 and q_ref == 0):
        return ThreePhaseSample(t, 0.0, 0.0, 0.0)
    return pq_current(p_ref, q_ref, theta, v_m, t)


@dataclass
class BessState:
    droop: DroopParams = field(default_factory=DroopParams)
    enabled: bool = False
    # first-order lag of the converter's power loop; 0 passes setpoints straight through
    power_loop_tau: float = 0.1
    p_ref: float = 0.0
    q_ref: float = 0.0
    p_cmd: float = 0.0
    q_cmd: float = 0.0
    i_ref: ThreePhaseSample = ThreePhaseSample(0.0, 0.0, 0.0, 0.0)

    def update(self, theta: float, f_m: float, v_m: float, dt: float, v_floor: float, t: float) -> ThreePhaseSample:
        self.p_ref, self.q_ref = droop_setpoint(self.droop, f_m, v_m)
        if self.power_loop_tau > 0:
            a = dt / (self.power_loop_tau + dt)
            self.p_cmd += a * (self.p_ref - self.p_cmd)
            self.q_cmd += a * (self.q_ref - self.q_cmd)
        else:
            self.p_cmd, self.q_cmd = self.p_ref, self.q_ref
        self.i_ref = bess_current_ref(self.p_cmd, self.q_cmd, theta, v_m, v_floor, t)
        return self.i_ref


@dataclass
class MicrogridConfig:
    v_nominal: float = 230.0  # phase RMS the load bank impedances are sized at
    loadbank_p: float = 0.0  # constant request used when no residential profile is given
    loadbank_q: float = 0.0
    residential: LoadProfile | None = None
    hp_house: LoadProfile | None = None
    profile_t0: float = 0.0  # profile clock at simulation t = 0
    amplitude_floor_ratio: float = 0.1


class Microgrid:
    """Composition of load bank, HP house and BESS for one coupling point."""

    def __init__(self, config: MicrogridConfig, bess: BessState | None = None, dt: float = 50e-6):
        self.config = config
        self.bess = bess if bess is not None else BessState()
        self.bess.droop.validate()
        self.dt = dt
        self.overrides: dict = {}
        self._setting_key = None
        self.setting = loadbank_quantize(config.loadbank_p, config.loadbank_q)
        self.v_floor = config.amplitude_floor_ratio * config.v_nominal

    def set_phase_override(self, phase: str, p_w: float | None) -> None:
        if phase not in PHASES:
            raise ConfigError(f"unknown phase {phase!r}")
        if p_w is None:
            self.overrides.pop(phase, None)
        else:
            self.overrides[phase] = p_w
        self._setting_key = None

    def loadbank_setting(self, t: float) -> LoadBankSetting:
        cfg = self.config
        if cfg.residential is not None:
            p_req, q_req = cfg.residential.sample(cfg.profile_t0 + t)
        else:
            p_req, q_req = cfg.loadbank_p, cfg.loadbank_q
        key = (p_req, q_req)
        if key != self._setting_key:
            self.setting = loadbank_quantize(p_req, q_req, self.overrides)
            self._setting_key = key
        return self.setting

    def step(self, v_pcc: ThreePhaseSample, theta: float, f_m: float, v_m: float, t: float) -> ThreePhaseSample:
        """Total current drawn from the PCC at this step."""
        cfg = self.config
        i = loadbank_current(self.loadbank_setting(t), v_pcc, theta, cfg.v_nominal)
        ia, ib, ic = i.a, i.b, i.c
        if cfg.hp_house is not None and v_m >= self.v_floor:
            p, q = cfg.hp_house.sample(cfg.profile_t0 + t)
            h = pq_current(p, q, theta, v_m)
            ia, ib, ic = ia + h.a, ib + h.b, ic + h.c
        if self.bess.enabled:
            b = self.bess.update(theta, f_m, v_m, self.dt, self.v_floor, t)
            ia, ib, ic = ia - b.a, ib - b.b, ic - b.c
        return ThreePhaseSample(v_pcc.t, ia, ib, ic)


def microgrid_step(state: Microgrid, v_pcc_reconstructed: ThreePhaseSample, theta: float, f_m: float, v_m: float, t: float) -> ThreePhaseSample:
    return state.step(v_pcc_reconstructed, theta, f_m, v_m, t)
