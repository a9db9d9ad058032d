"""Time-series recording plus CSV and SVG export."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

# vector channels carry one column per phase
VECTOR_CHANNELS = {"i_abc_pcc", "v_abc_pcc", "v_abc_mg", "lb_override"}

GROUPS = {
    "frequency": ("f_grid", "f_m"),
    "power": ("p_pcc", "q_pcc", "p_ref", "q_ref"),
    "voltage": ("v_rms_pcc", "v_rms_n1", "v_rms_n2", "v_rms_n3", "v_m"),
    "waveforms": ("i_abc_pcc", "v_abc_pcc", "v_abc_mg"),
    "transport": ("lost", "duplicate", "stale"),
    "loadbank": ("lb_p", "lb_q", "lb_override"),
}
DECIMATED_GROUPS = {"waveforms"}


def columns_of(channel: str) -> list[str]:
    if channel in VECTOR_CHANNELS:
        stem = channel.replace("_abc", "")
        return [f"{stem}_{ph}" for ph in "abc"]
    return [channel]


@dataclass
class Recording:
    dt: float
    n_steps: int
    channels: list
    data: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def allocate(cls, dt: float, n_steps: int, channels, meta: dict | None = None) -> "Recording":
        data = {}
        for ch in channels:
            shape = (n_steps, 3) if ch in VECTOR_CHANNELS else (n_steps,)
            data[ch] = np.zeros(shape)
        return cls(dt, n_steps, list(channels), data, dict(meta or {}))

    @property
    def t(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt

    def __getitem__(self, ch: str) -> np.ndarray:
        return self.data[ch]

    def index_at(self, t: float) -> int:
        return int(math.ceil(t / self.dt - 1e-9))

    def window(self, ch: str, t0: float, t1: float) -> np.ndarray:
        return self.data[ch][self.index_at(t0) : self.index_at(t1)]


def _fmt(x: float) -> str:
    return repr(float(x))


def export_csv(rec: Recording, path: str | Path) -> list[Path]:
    """One CSV per channel group; waveform groups decimated per ``meta['decimation']``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    dec = int(rec.meta.get("decimation", 1))
    written = []
    t = rec.t
    for group, chans in GROUPS.items():
        present = [c for c in chans if c in rec.channels]
        if not present:
            continue
        step = dec if group in DECIMATED_GROUPS else 1
        fname = out / f"{group}.csv"
        cols = [rec.data[c].reshape(rec.n_steps, len(columns_of(c)))[::step] for c in present]
        header = ["t"] + [name for c in present for name in columns_of(c)]
        try:
            with fname.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                if rec.n_steps:
                    block = np.column_stack([t[::step]] + cols)
                    w.writerows([_fmt(x) for x in row] for row in block.tolist())
        except OSError as exc:
            raise OSError(f"cannot write {fname}: {exc}") from exc
        written.append(fname)
    meta = dict(rec.meta, dt=rec.dt, n_steps=rec.n_steps, channels=rec.channels)
    mpath = out / "metadata.json"
    mpath.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
    written.append(mpath)
    return written


def export_delay_csv(report, path: str | Path) -> Path:
    """Per-probe loopback delays (steps and seconds); lost probes have empty cells."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    fname = out / "loopback_delay.csv"
    try:
        with fname.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["probe", "delay_steps", "delay_s"])
            for k, d in enumerate(report.delays_steps):
                w.writerow([k, "" if d is None else d, "" if d is None else _fmt(d * report.dt)])
    except OSError as exc:
        raise OSError(f"cannot write {fname}: {exc}") from exc
    return fname


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.array([[float(x) for x in r] for r in body]) if body else np.zeros((0, len(header)))
    return header, arr


# ------------------------------------------------------------------- SVG

_W, _H, _PAD = 900, 360, 60
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd")


def _svg_plot(path: Path, title: str, xlabel: str, ylabel: str, t: np.ndarray, series: list) -> None:
    """Minimal self-contained line plot: one <polyline> per (label, values)."""
    finite = [v[np.isfinite(v)] for _, v in series]
    finite = [v for v in finite if v.size]
    y0 = min(float(v.min()) for v in finite) if finite else 0.0
    y1 = max(float(v.max()) for v in finite) if finite else 1.0
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    x0, x1 = (float(t[0]), float(t[-1])) if t.size > 1 else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    sx = (_W - 2 * _PAD) / (x1 - x0)
    sy = (_H - 2 * _PAD) / (y1 - y0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
        f'<rect x="{_PAD}" y="{_PAD}" width="{_W - 2 * _PAD}" height="{_H - 2 * _PAD}" fill="none" stroke="#888"/>',
        f'<text x="{_W / 2}" y="{_H - 12}" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{_H / 2}" transform="rotate(-90 14 {_H / 2})" text-anchor="middle" font-family="sans-serif" font-size="12">{escape(ylabel)}</text>',
        f'<text x="{_PAD - 4}" y="{_PAD + 4}" text-anchor="end" font-family="sans-serif" font-size="10">{y1:.6g}</text>',
        f'<text x="{_PAD - 4}" y="{_H - _PAD}" text-anchor="end" font-family="sans-serif" font-size="10">{y0:.6g}</text>',
        f'<text x="{_PAD}" y="{_H - _PAD + 14}" text-anchor="middle" font-family="sans-serif" font-size="10">{x0:.4g}</text>',
        f'<text x="{_W - _PAD}" y="{_H - _PAD + 14}" text-anchor="middle" font-family="sans-serif" font-size="10">{x1:.4g}</text>',
    ]
    for k, (label, v) in enumerate(series):
        color = _COLORS[k % len(_COLORS)]
        vv = np.where(np.isfinite(v), v, y0)
        xs = _PAD + (t - x0) * sx
        ys = _H - _PAD - (vv - y0) * sy
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs.tolist(), ys.tolist()))
        parts.append(f'<polyline data-label="{escape(label)}" fill="none" stroke="{color}" stroke-width="1" points="{pts}"/>')
        parts.append(
            f'<text x="{_W - _PAD - 4}" y="{_PAD + 14 + 14 * k}" text-anchor="end" font-family="sans-serif" font-size="11" fill="{color}">{escape(label)}</text>'
        )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")


def export_plots(rec: Recording, path: str | Path) -> list[Path]:
    """SVG plots of frequency, PCC power, PCC voltage, node voltages and event currents."""
    if rec.n_steps == 0:
        raise ValueError("cannot plot an empty recording")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    dec = int(rec.meta.get("plot_decimation", 40))
    edec = int(rec.meta.get("event_plot_decimation", 2))
    t = rec.t
    td = t[::dec]
    written = []

    def plot(name, title, ylabel, chans, tt=td, sl=slice(None, None, dec)):
        series = [(c, rec.data[c][sl]) for c in chans if c in rec.channels]
        if not series:
            return
        p = out / f"{name}.svg"
        _svg_plot(p, title, "t [s]", ylabel, tt, series)
        written.append(p)

    plot("frequency", "Grid frequency", "f [Hz]", ["f_grid"])
    plot("pcc_power", "Active power into the microgrid at the PCC", "P [W]", ["p_pcc"])
    plot("pcc_voltage", "PCC RMS voltage (grid side)", "V [V]", ["v_rms_pcc"])
    plot("node_voltages", "RMS voltage at n1, n2, n3", "V [V]", ["v_rms_n1", "v_rms_n2", "v_rms_n3"])
    if "i_abc_pcc" in rec.channels:
        for k, te in enumerate(rec.meta.get("event_times", [])):
            i0 = max(rec.index_at(te - 0.2), 0)
            i1 = min(rec.index_at(te + 0.2), rec.n_steps)
            if i1 - i0 < 2:
                continue
            sl = slice(i0, i1, edec)
            i = rec.data["i_abc_pcc"][sl]
            p = out / f"currents_event{k}.svg"
            _svg_plot(p, f"PCC currents around t = {te:g} s", "t [s]", "i [A]", t[sl], [(f"i_{ph}", i[:, j]) for j, ph in enumerate("abc")])
            written.append(p)
    return written
