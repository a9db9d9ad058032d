"""Lock-step frame transport with loss and delay injection.

Every endpoint sends exactly one frame per step, numbered ``seq = step``.
The frame a receiver needs at local step ``k`` is the one its peer sent at
``k - 1 - extra_delay_steps``; anything else is held (early), discarded
(stale or duplicate) or reported as missing.  Delay is therefore enforced at
the receiver, which makes the in-process and UDP wires behave identically.
"""
from __future__ import annotations

import logging
import random
import socket
import threading
from dataclasses import dataclass, field
from typing import Optional

from .errors import ConfigError, FrameError, TransportError
from .frames import FrameKind, InterfaceFrame, decode_frame, encode_frame

log = logging.getLogger(__name__)

MODES = ("in-process", "udp", "loopback")
SEQ_MOD = 1 << 32
PROBE_TIMEOUT_STEPS = 1000


def seq_diff(a: int, b: int) -> int:
    """Signed distance a - b on the u32 sequence circle."""
    d = (a - b) % SEQ_MOD
    return d - SEQ_MOD if d >= SEQ_MOD // 2 else d


def _parse_addr(s: str) -> tuple[str, int]:
    host, _, port = s.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"address must look like host:port, got {s!r}")
    return host, int(port)


@dataclass
class TransportConfig:
    mode: str = "in-process"
    loss_probability: float = 0.0
    extra_delay_steps: int = 0
    rng_seed: int = 0
    # longest run of consecutive drops; None = unbounded
    max_burst: Optional[int] = None
    grid_addr: str = "127.0.0.1:0"
    microgrid_addr: str = "127.0.0.1:0"
    # UDP receive deadline; None = 0.8*dt in real-time runs, 0.05 s otherwise
    recv_timeout: Optional[float] = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"transport.mode must be one of {MODES}, got {self.mode!r}", field="transport.mode")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ConfigError("transport.loss_probability must lie in [0, 1]", field="transport.loss_probability")
        if self.extra_delay_steps < 0 or int(self.extra_delay_steps) != self.extra_delay_steps:
            raise ConfigError("transport.extra_delay_steps must be a non-negative integer", field="transport.extra_delay_steps")
        if self.max_burst is not None and self.max_burst < 1:
            raise ConfigError("transport.max_burst must be >= 1", field="transport.max_burst")
        if not 0 <= self.rng_seed < 1 << 64:
            raise ConfigError("transport.rng_seed must fit in 64 bits", field="transport.rng_seed")
        _parse_addr(self.grid_addr)
        _parse_addr(self.microgrid_addr)


@dataclass
class Counters:
    sent: int = 0
    dropped: int = 0  # discarded by the loss injector at the sender
    delivered: int = 0
    missing: int = 0  # expected frame absent at its step
    duplicate: int = 0
    stale: int = 0
    corrupt: int = 0


class Mailbox:
    """Sequenced receive buffer shared by the wire (producer) and the owner loop."""

    def __init__(self):
        self.frames: dict[int, InterfaceFrame] = {}
        self.counters = Counters()
        self._cond = threading.Condition()
        self._floor: Optional[int] = None  # last expected seq handed to the owner
        self._last_delivered: Optional[int] = None

    def put(self, data: bytes) -> None:
        try:
            frame = decode_frame(data)
        except FrameError as exc:
            log.debug("discarding corrupt frame: %s", exc)
            with self._cond:
                self.counters.corrupt += 1
            return
        with self._cond:
            c = self.counters
            if self._last_delivered is not None and frame.seq == self._last_delivered:
                c.duplicate += 1
            elif self._floor is not None and seq_diff(frame.seq, self._floor) <= 0:
                c.stale += 1
            elif frame.seq in self.frames:
                c.duplicate += 1
            else:
                self.frames[frame.seq] = frame
                self._cond.notify_all()

    def take(self, expected: int, timeout: float = 0.0) -> Optional[InterfaceFrame]:
        expected %= SEQ_MOD
        with self._cond:
            if timeout > 0 and expected not in self.frames:
                self._cond.wait_for(lambda: expected in self.frames, timeout)
            frame = self.frames.pop(expected, None)
            old = [s for s in self.frames if seq_diff(s, expected) < 0]
            for s in old:
                del self.frames[s]
            self.counters.stale += len(old)
            self._floor = expected
            if frame is None:
                self.counters.missing += 1
            else:
                self.counters.delivered += 1
                self._last_delivered = expected
            return frame


class Endpoint:
    """One side of a bidirectional lock-step link."""

    def __init__(self, name: str, config: TransportConfig, wire_send, timeout: float = 0.0, frame_log: list | None = None):
        self.name = name
        self.config = config
        self.mailbox = Mailbox()
        self._wire_send = wire_send
        self._rng = random.Random(f"{config.rng_seed}:{name}")
        self._burst = 0
        self.timeout = timeout
        self.frame_log = frame_log
        self.closed = False

    @property
    def counters(self) -> Counters:
        return self.mailbox.counters

    def send(self, frame: InterfaceFrame) -> None:
        if self.closed:
            raise TransportError(f"endpoint {self.name} is closed")
        data = encode_frame(frame)
        if self.frame_log is not None:
            self.frame_log.append(data)
        c = self.mailbox.counters
        c.sent += 1
        p = self.config.loss_probability
        drop = self._rng.random() < p
        mb = self.config.max_burst
        if drop and (mb is None or self._burst < mb):
            self._burst += 1
            c.dropped += 1
            return
        self._burst = 0
        try:
            self._wire_send(data)
        except OSError as exc:
            raise TransportError(f"{self.name}: send failed: {exc}", step=frame.step_index) from exc

    def recv_for_step(self, step: int) -> Optional[InterfaceFrame]:
        expected = step - 1 - self.config.extra_delay_steps
        if expected < 0:
            return None
        return self.mailbox.take(expected, self.timeout)

    def close(self) -> None:
        self.closed = True


class _UdpWire:
    def __init__(self, sock: socket.socket, mailbox: Mailbox):
        self.sock = sock
        self.remote = None
        self.mailbox = mailbox
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._rx, daemon=True)

    def start(self):
        self.sock.settimeout(0.05)
        self._thread.start()

    def send(self, data: bytes) -> None:
        self.sock.sendto(data, self.remote)

    def _rx(self):
        while not self._stop.is_set():
            try:
                data, _ = self.sock.recvfrom(2048)
            except socket.timeout:
                continue
            except OSError:
                break
            self.mailbox.put(data)

    def close(self):
        self._stop.set()
        self._thread.join(timeout=1.0)
        self.sock.close()


@dataclass
class Link:
    """A connected pair of endpoints: grid side and microgrid side."""

    grid: Endpoint
    microgrid: Endpoint
    _closers: list = field(default_factory=list)
    frame_log: Optional[list] = None

    def close(self) -> None:
        for ep in (self.grid, self.microgrid):
            ep.close()
        for c in self._closers:
            c()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_link(config: TransportConfig, dt: float, realtime: bool = False, log_frames: bool = False) -> Link:
    config.validate()
    frame_log = [] if log_frames else None
    if config.mode in ("in-process", "loopback"):
        holder: dict[str, Endpoint] = {}
        g = Endpoint("grid", config, lambda d: holder["mg"].mailbox.put(d), frame_log=frame_log)
        m = Endpoint("microgrid", config, lambda d: holder["grid"].mailbox.put(d), frame_log=frame_log)
        holder.update(grid=g, mg=m)
        return Link(g, m, frame_log=frame_log)
    timeout = config.recv_timeout
    if timeout is None:
        timeout = 0.8 * dt if realtime else 0.05
    socks = []
    try:
        for addr in (config.grid_addr, config.microgrid_addr):
            s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            socks.append(s)
            s.bind(_parse_addr(addr))
    except OSError as exc:
        for s in socks:
            s.close()
        raise TransportError(f"cannot bind UDP sockets: {exc}") from exc
    g_wire = _UdpWire(socks[0], None)
    m_wire = _UdpWire(socks[1], None)
    g = Endpoint("grid", config, g_wire.send, timeout=timeout, frame_log=frame_log)
    m = Endpoint("microgrid", config, m_wire.send, timeout=timeout, frame_log=frame_log)
    g_wire.mailbox, m_wire.mailbox = g.mailbox, m.mailbox
    g_wire.remote, m_wire.remote = socks[1].getsockname(), socks[0].getsockname()
    g_wire.start()
    m_wire.start()
    return Link(g, m, [g_wire.close, m_wire.close], frame_log=frame_log)


@dataclass
class DelayReport:
    dt: float
    delays_steps: list  # None marks a lost probe

    @property
    def measured(self) -> list:
        return [d for d in self.delays_steps if d is not None]

    @property
    def delays_s(self) -> list:
        return [d * self.dt for d in self.measured]

    @property
    def count(self) -> int:
        return len(self.measured)

    @property
    def lost(self) -> int:
        return len(self.delays_steps) - self.count

    @property
    def min_steps(self):
        return min(self.measured) if self.measured else None

    @property
    def max_steps(self):
        return max(self.measured) if self.measured else None

    @property
    def mean_steps(self):
        m = self.measured
        return sum(m) / len(m) if m else None

    @property
    def variance_steps(self):
        m = self.measured
        if not m:
            return None
        mu = sum(m) / len(m)
        return sum((x - mu) ** 2 for x in m) / len(m)

    def summary(self) -> str:
        if not self.measured:
            return f"loopback delay: all {self.lost} probes lost"
        us = 1e6 * self.dt
        return (
            f"loopback delay over {self.count} probes (dt = {us:g} us, lost {self.lost}): "
            f"min {self.min_steps} / max {self.max_steps} / mean {self.mean_steps:g} steps "
            f"= {self.min_steps * us:g} / {self.max_steps * us:g} / {self.mean_steps * us:g} us, "
            f"variance {self.variance_steps:g} steps^2"
        )


def _loop_sender(ep: Endpoint, probes: int, delays: list, n_steps: int):
    for k in range(n_steps):
        r = ep.recv_for_step(k)
        if r is not None and r.payload[0] > 0:
            pid = int(r.payload[0]) - 1
            if delays[pid] is None and k - r.step_index <= PROBE_TIMEOUT_STEPS:
                delays[pid] = k - r.step_index
        payload = (float(k + 1), 0.0, 0.0) if k < probes else (0.0, 0.0, 0.0)
        ep.send(InterfaceFrame(k, k, FrameKind.VOLTAGE, payload))
        yield


def _loop_echo(ep: Endpoint, n_steps: int):
    for k in range(n_steps):
        r = ep.recv_for_step(k)
        if r is None:
            ep.send(InterfaceFrame(k, k, FrameKind.VOLTAGE, (0.0, 0.0, 0.0)))
        else:
            ep.send(InterfaceFrame(k, r.step_index, r.kind, r.payload))
        yield


def measure_loopback_delay(probes: int, dt: float, config: TransportConfig | None = None) -> DelayReport:
    """Send ``probes`` numbered frames (one per step) and time their echoes."""
    if probes < 1:
        raise ValueError("need at least one probe")
    config = config or TransportConfig(mode="loopback")
    n_steps = probes + 2 * config.extra_delay_steps + PROBE_TIMEOUT_STEPS
    delays: list = [None] * probes
    with make_link(config, dt) as link:
        tx = _loop_sender(link.grid, probes, delays, n_steps)
        rx = _loop_echo(link.microgrid, n_steps)
        if config.mode == "udp":
            threads = [threading.Thread(target=lambda g=g: [None for _ in g]) for g in (tx, rx)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        else:
            for _ in zip(tx, rx):
                if all(d is not None for d in delays):
                    break
    return DelayReport(dt, delays)
