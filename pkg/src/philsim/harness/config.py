"""Scenario configuration: YAML files <-> dataclasses, with strict validation.

Complex impedances are written as ``[re, im]``.  Unknown keys are rejected so
a typo never silently falls back to a default.  Errors carry the dotted field
path and, when the config came from a file, the YAML line number.
"""
from __future__ import annotations

import copy
import dataclasses
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from ..coupling import ItmVariant, LossPolicy
from ..errors import ConfigError
from ..gridmodel import LOCATIONS, GridParams, LoadStepEvent
from ..microgrid import PHASES, DroopParams
from ..transport import TransportConfig

BUNDLED = {
    "e1-benchmark": "e1_benchmark.yaml",
    "e2-loadstep": "e2_loadstep.yaml",
    "e3-unbalance-b": "e3_unbalance_b.yaml",
    "e4-unbalance-c": "e4_unbalance_c.yaml",
}

CHANNELS = (
    "f_grid",
    "p_pcc",
    "q_pcc",
    "v_rms_pcc",
    "v_rms_n1",
    "v_rms_n2",
    "v_rms_n3",
    "i_abc_pcc",
    "v_abc_pcc",
    "v_abc_mg",
    "p_ref",
    "q_ref",
    "f_m",
    "v_m",
    "lost",
    "duplicate",
    "stale",
    "lb_p",
    "lb_q",
    "lb_override",
)


@dataclass
class PhaseOverrideEvent:
    t_event: float
    phase: str
    p_w: Optional[float]  # None removes the override


@dataclass
class ProfilesConfig:
    residential: Optional[str] = None
    hp_house: Optional[str] = None
    t0: float = 0.0  # profile clock (seconds of day) at recorded t = 0


@dataclass
class LoadBankConfig:
    p_w: float = 0.0
    q_var: float = 0.0
    phase_p: dict = field(default_factory=dict)  # initial per-phase overrides


@dataclass
class MicrogridSection:
    v_nominal: float = 230.0
    loadbank: LoadBankConfig = field(default_factory=LoadBankConfig)
    profiles: ProfilesConfig = field(default_factory=ProfilesConfig)


@dataclass
class BessConfig:
    enabled: bool = False
    power_loop_tau: float = 0.1
    droop: DroopParams = field(default_factory=DroopParams)


@dataclass
class CouplingConfig:
    itm_variant: str = "raw"
    reconstruction: bool = True
    grid_loss_policy: str = "hold-last"
    microgrid_loss_policy: str = "zero-fill"
    pll_kp: float = 92.0
    pll_ki: float = 4230.0


@dataclass
class RecorderConfig:
    channels: list = field(default_factory=lambda: list(CHANNELS))
    decimation: int = 40  # waveform channels in CSV
    plot_decimation: int = 40
    event_plot_decimation: int = 2


@dataclass
class BenchmarkConfig:
    probes: int = 1000


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    description: str = ""
    kind: str = "cosim"  # or "benchmark"
    dt: float = 50e-6
    horizon: float = 10.0
    warmup: float = 1.0
    grid: GridParams = field(default_factory=GridParams)
    microgrid: MicrogridSection = field(default_factory=MicrogridSection)
    bess: BessConfig = field(default_factory=BessConfig)
    coupling: CouplingConfig = field(default_factory=CouplingConfig)
    transport: TransportConfig = field(default_factory=TransportConfig)
    events: list = field(default_factory=list)
    recorder: RecorderConfig = field(default_factory=RecorderConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    base_dir: Optional[Path] = field(default=None, compare=False, repr=False)

    @property
    def n_warmup(self) -> int:
        return int(round(self.warmup / self.dt))

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def resolve(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        path = Path(p)
        if not path.is_absolute() and self.base_dir is not None:
            path = self.base_dir / path
        return path

    def load_events(self) -> list:
        return [e for e in self.events if isinstance(e, LoadStepEvent)]

    def override_events(self) -> list:
        return [e for e in self.events if isinstance(e, PhaseOverrideEvent)]

    def validate(self) -> None:
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be > 0", field="dt")
        if not self.horizon > 0:
            raise ConfigError("horizon must be > 0", field="horizon")
        if self.warmup < 0:
            raise ConfigError("warmup must be >= 0", field="warmup")
        if self.kind not in ("cosim", "benchmark"):
            raise ConfigError("kind must be 'cosim' or 'benchmark'", field="kind")
        self.grid.validate()
        try:
            self.bess.droop.validate()
        except ConfigError as exc:
            if exc.field is None:
                exc.field = "bess.droop"
            raise
        self.transport.validate()
        try:
            ItmVariant(self.coupling.itm_variant)
        except ValueError:
            raise ConfigError("must be 'raw' or 'dynamic_phasor'", field="coupling.itm_variant") from None
        for f in ("grid_loss_policy", "microgrid_loss_policy"):
            try:
                LossPolicy(getattr(self.coupling, f))
            except ValueError:
                raise ConfigError("must be 'zero-fill' or 'hold-last'", field=f"coupling.{f}") from None
        if self.coupling.pll_kp <= 0 or self.coupling.pll_ki <= 0:
            raise ConfigError("PLL gains must be positive", field="coupling.pll_kp")
        if self.bess.power_loop_tau < 0:
            raise ConfigError("must be >= 0", field="bess.power_loop_tau")
        for ph in self.microgrid.loadbank.phase_p:
            if ph not in PHASES:
                raise ConfigError(f"unknown phase {ph!r}", field="microgrid.loadbank.phase_p")
        last = 0.0
        for i, e in enumerate(self.events):
            if e.t_event < 0 or e.t_event > self.horizon:
                raise ConfigError(f"event time {e.t_event} outside [0, horizon]", field=f"events[{i}].t")
            last = max(last, e.t_event)
        if self.events and self.horizon < last + 1.0:
            raise ConfigError(f"horizon must be >= last event time + 1 s ({last + 1.0} s)", field="horizon")
        for ch in self.recorder.channels:
            if ch not in CHANNELS:
                raise ConfigError(f"unknown channel {ch!r}", field="recorder.channels")
        for f in ("decimation", "plot_decimation", "event_plot_decimation"):
            if getattr(self.recorder, f) < 1:
                raise ConfigError("must be >= 1", field=f"recorder.{f}")
        if self.benchmark.probes < 1:
            raise ConfigError("must be >= 1", field="benchmark.probes")
        if self.kind == "cosim":
            from ..signals import TWO_PI, period_samples

            try:
                period_samples(TWO_PI * self.grid.f_nom, self.dt)
            except ValueError as exc:
                raise ConfigError(str(exc), field="dt") from None


# ---------------------------------------------------------------- parsing

_SECTIONS = {
    "grid": GridParams,
    "microgrid": MicrogridSection,
    "bess": BessConfig,
    "coupling": CouplingConfig,
    "transport": TransportConfig,
    "recorder": RecorderConfig,
    "benchmark": BenchmarkConfig,
}


def _build(cls, data: Any, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping, got {type(data).__name__}", field=path)
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, val in data.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in fields or key == "base_dir":
            raise ConfigError(f"unknown key {key!r}", field=sub)
        kwargs[key] = _convert(cls, fields[key], val, sub)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        if exc.field is None:
            exc.field = path
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field=path) from None


def _convert(owner, f: dataclasses.Field, val: Any, path: str):
    nested = {
        (MicrogridSection, "loadbank"): LoadBankConfig,
        (MicrogridSection, "profiles"): ProfilesConfig,
        (BessConfig, "droop"): DroopParams,
    }
    if (owner, f.name) in nested:
        return _build(nested[(owner, f.name)], val, path)
    if owner is GridParams and f.name in ("z_thev", "z_seg"):
        if not (isinstance(val, (list, tuple)) and len(val) == 2 and all(_is_num(x) for x in val)):
            raise ConfigError("impedance must be [re, im]", field=path)
        return complex(float(val[0]), float(val[1]))
    default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(f"expected true/false, got {val!r}", field=path)
        return val
    if isinstance(default, int):
        if not (isinstance(val, int) and not isinstance(val, bool)):
            raise ConfigError(f"expected an integer, got {val!r}", field=path)
        return val
    if isinstance(default, float):
        if not _is_num(val):
            raise ConfigError(f"expected a number, got {val!r}", field=path)
        return float(val)
    if f.name in ("max_burst",):
        if val is not None and not (isinstance(val, int) and not isinstance(val, bool)):
            raise ConfigError(f"expected an integer or null, got {val!r}", field=path)
        return val
    if f.name == "recv_timeout":
        if val is not None and not _is_num(val):
            raise ConfigError(f"expected a number or null, got {val!r}", field=path)
        return None if val is None else float(val)
    if f.name == "phase_p":
        if not isinstance(val, dict) or not all(_is_num(v) for v in val.values()):
            raise ConfigError("expected a mapping phase -> watts", field=path)
        return {str(k): float(v) for k, v in val.items()}
    if f.name == "channels":
        if not isinstance(val, list) or not all(isinstance(v, str) for v in val):
            raise ConfigError("expected a list of channel names", field=path)
        return list(val)
    if isinstance(default, str) or default is None:
        if val is not None and not isinstance(val, str):
            raise ConfigError(f"expected a string, got {val!r}", field=path)
        return val
    return val


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _parse_event(d: Any, i: int):
    path = f"events[{i}]"
    if not isinstance(d, dict):
        raise ConfigError("event must be a mapping", field=path)
    kind = d.get("type")
    if kind == "load_step":
        allowed = {"type", "t", "delta_p", "delta_q", "location"}
    elif kind == "phase_override":
        allowed = {"type", "t", "phase", "p_w"}
    else:
        raise ConfigError(f"event type must be 'load_step' or 'phase_override', got {kind!r}", field=f"{path}.type")
    for k in d:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r}", field=f"{path}.{k}")
    if not _is_num(d.get("t")):
        raise ConfigError("event needs a numeric 't'", field=f"{path}.t")
    if kind == "load_step":
        for k in ("delta_p", "delta_q"):
            if k in d and not _is_num(d[k]):
                raise ConfigError("expected a number", field=f"{path}.{k}")
        if "delta_p" not in d:
            raise ConfigError("load_step needs 'delta_p'", field=path)
        loc = d.get("location", "pcc")
        if loc not in LOCATIONS:
            raise ConfigError(f"location must be one of {LOCATIONS}", field=f"{path}.location")
        return LoadStepEvent(float(d["t"]), float(d["delta_p"]), float(d.get("delta_q", 0.0)), loc, event_id=str(i))
    if d.get("phase") not in PHASES:
        raise ConfigError(f"phase must be one of {PHASES}", field=f"{path}.phase")
    p = d.get("p_w")
    if p is not None and not _is_num(p):
        raise ConfigError("expected a number or null", field=f"{path}.p_w")
    return PhaseOverrideEvent(float(d["t"]), d["phase"], None if p is None else float(p))


def config_from_dict(data: Any, base_dir: Optional[Path] = None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level of a scenario must be a mapping")
    top_fields = {f.name for f in dataclasses.fields(ScenarioConfig)} - {"base_dir"}
    kwargs: dict = {}
    for key, val in data.items():
        if key not in top_fields:
            raise ConfigError(f"unknown key {key!r}", field=str(key))
        if key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], val, key)
        elif key == "events":
            if val is None:
                val = []
            if not isinstance(val, list):
                raise ConfigError("events must be a list", field="events")
            kwargs[key] = [_parse_event(e, i) for i, e in enumerate(val)]
        elif key in ("name", "description", "kind"):
            if not isinstance(val, str):
                raise ConfigError("expected a string", field=key)
            kwargs[key] = val
        else:
            if not _is_num(val):
                raise ConfigError(f"expected a number, got {val!r}", field=key)
            kwargs[key] = float(val)
    cfg = ScenarioConfig(**kwargs, base_dir=base_dir)
    cfg.validate()
    return cfg


def _event_to_dict(e) -> dict:
    if isinstance(e, LoadStepEvent):
        return {"type": "load_step", "t": e.t_event, "delta_p": e.delta_p, "delta_q": e.delta_q, "location": e.location}
    return {"type": "phase_override", "t": e.t_event, "phase": e.phase, "p_w": e.p_w}


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.name != "base_dir"}
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: ScenarioConfig) -> dict:
    d = _plain(cfg)
    d["events"] = [_event_to_dict(e) for e in cfg.events]
    return d


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# -------------------------------------------------------------- file I/O


class _Loader(yaml.SafeLoader):
    """SafeLoader that also reads ``1e6`` and ``20.0e6`` as floats (YAML 1.2 style)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def _line_of(node, dotted: Optional[str]) -> Optional[int]:
    """1-based line of the YAML node addressed by ``a.b[2].c``, best effort."""
    if node is None or not dotted:
        return None
    parts = []
    for chunk in dotted.split("."):
        name, _, rest = chunk.partition("[")
        parts.append(name)
        while rest:
            idx, _, rest = rest.partition("]")
            parts.append(int(idx))
            rest = rest.lstrip("[")
    line = None
    for part in parts:
        if isinstance(node, yaml.MappingNode) and isinstance(part, str):
            for k, v in node.value:
                if k.value == part:
                    line = k.start_mark.line + 1
                    node = v
                    break
            else:
                return line
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int) and part < len(node.value):
            node = node.value[part]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def load_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return loads_config(text, base_dir=path.parent)


def loads_config(text: str, base_dir: Optional[Path] = None) -> ScenarioConfig:
    try:
        data = yaml.load(text, Loader=_Loader)
        node = yaml.compose(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", line=None if mark is None else mark.line + 1) from None
    try:
        return config_from_dict(data, base_dir)
    except ConfigError as exc:
        if exc.line is None:
            exc.line = _line_of(node, exc.field)
        raise


def bundled_dir() -> Path:
    return Path(str(resources.files("philsim") / "scenarios"))


def resolve_scenario(name_or_path: str) -> Path:
    """Accept a bundled name (``e2-loadstep`` or just ``e2``) or a file path."""
    if name_or_path in BUNDLED:
        return bundled_dir() / BUNDLED[name_or_path]
    for name, fname in BUNDLED.items():
        if name.split("-")[0] == name_or_path:
            return bundled_dir() / fname
    path = Path(name_or_path)
    if not path.exists():
        raise ConfigError(f"no such scenario file or bundled scenario: {name_or_path!r}")
    return path


def with_overrides(cfg: ScenarioConfig, changes: dict) -> ScenarioConfig:
    """Deep copy with dotted-path overrides, e.g. ``{"bess.enabled": True}``."""
    new = copy.deepcopy(cfg)
    for dotted, val in changes.items():
        obj = new
        *head, last = dotted.split(".")
        for h in head:
            obj = getattr(obj, h)
        if not hasattr(obj, last):
            raise ConfigError(f"unknown field {dotted!r}")
        setattr(obj, last, val)
    new.validate()
    return new
