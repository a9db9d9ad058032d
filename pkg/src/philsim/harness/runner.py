"""Scenario execution: two lock-step subsystem loops joined over a transport.

Each loop is a generator that performs one step per ``next()``.  In-process
runs interleave them deterministically (grid step k, then microgrid step k);
UDP runs drive each loop in its own thread over real sockets.
"""
from __future__ import annotations

import logging
import math
import threading
import time

from ..coupling import GridSide, MicrogridSide, VoltageReconstructor
from ..errors import ConfigError, ItmInstabilityError
from ..gridmodel import CampusGrid
from ..microgrid import BessState, LoadProfile, Microgrid, MicrogridConfig
from ..signals import TWO_PI, period_samples
from ..transport import DelayReport, Link, make_link, measure_loopback_delay
from .config import ScenarioConfig
from .recording import Recording

log = logging.getLogger(__name__)

GUARD_SECONDS = 0.5
GUARD_GROWTH = 1.01  # per nominal period


def _event_step(cfg: ScenarioConfig, t_event: float) -> int:
    return cfg.n_warmup + int(math.ceil(t_event / cfg.dt - 1e-9))


def build_microgrid(cfg: ScenarioConfig) -> Microgrid:
    m = cfg.microgrid
    profiles = {}
    for key in ("residential", "hp_house"):
        p = cfg.resolve(getattr(m.profiles, key))
        profiles[key] = LoadProfile.from_csv(p) if p is not None else None
    mcfg = MicrogridConfig(
        v_nominal=m.v_nominal,
        loadbank_p=m.loadbank.p_w,
        loadbank_q=m.loadbank.q_var,
        residential=profiles["residential"],
        hp_house=profiles["hp_house"],
        profile_t0=m.profiles.t0,
    )
    b = cfg.bess
    bess = BessState(droop=b.droop, enabled=b.enabled, power_loop_tau=b.power_loop_tau)
    mg = Microgrid(mcfg, bess, cfg.dt)
    for ph, p in m.loadbank.phase_p.items():
        mg.set_phase_override(ph, p)
    return mg


def _guard(blocks: list, step: int) -> None:
    """Abort if the per-period interface current RMS grew geometrically over the guard window.

    A control loop still settling rises with shrinking increments; an unstable
    ITM loop multiplies the current by a roughly constant factor each period.
    """
    if len(blocks) < 3:
        return
    ratios = [b / a if a > 0 else math.inf for a, b in zip(blocks, blocks[1:])]
    if all(r >= GUARD_GROWTH for r in ratios):
        raise ItmInstabilityError(
            f"interface current RMS grew geometrically over the warm-up ({blocks[0]:.3g} A -> {blocks[-1]:.3g} A); "
            "the source/load impedance ratio makes this ITM loop unstable",
            step=step,
        )


def _grid_loop(cfg: ScenarioConfig, grid: CampusGrid, side: GridSide, link: Link, rec: Recording):
    dt, nw = cfg.dt, cfg.n_warmup
    total = nw + cfg.n_steps
    events: dict = {}
    for e in cfg.load_events():
        events.setdefault(_event_step(cfg, e.t_event), []).append(e)
    d = rec.data
    f_ch, p_ch, q_ch = d.get("f_grid"), d.get("p_pcc"), d.get("q_pcc")
    vr_ch = d.get("v_rms_pcc")
    n_ch = [d.get(f"v_rms_n{j}") for j in (1, 2, 3)]
    i_ch, v_ch = d.get("i_abc_pcc"), d.get("v_abc_pcc")
    cnt = [d.get(c) for c in ("lost", "duplicate", "stale")]
    want_nodes = any(c is not None for c in n_ch)
    want_cnt = any(c is not None for c in cnt)

    period = period_samples(TWO_PI * cfg.grid.f_nom, dt)
    guard_start = max(0, nw - int(round(GUARD_SECONDS / dt)))
    blocks: list = []
    acc = 0.0
    mb_g, mb_m = link.grid.mailbox.counters, link.microgrid.mailbox.counters
    f_nom = cfg.grid.f_nom

    for k in range(total):
        t = k * dt
        i_rx = side.receive(k, t)
        if not math.isfinite(i_rx.a + i_rx.b + i_rx.c):
            raise ItmInstabilityError("non-finite interface current", step=k)
        for e in events.get(k, ()):
            grid.apply_event(e)
        v = grid.pcc_voltage(i_rx, t)
        side.send(k, v)
        p, q = grid.exchange_power()
        if k == nw:
            # latch the dispatch: the post-warm-up operating point is the equilibrium
            grid.state.rebalance(grid.params, p)
        grid.step(p, q, frozen=k < nw, step=k)

        if guard_start <= k < nw:
            acc += (i_rx.a * i_rx.a + i_rx.b * i_rx.b + i_rx.c * i_rx.c) / 3.0
            if (k - guard_start + 1) % period == 0:
                blocks.append(math.sqrt(acc / period))
                acc = 0.0
            if k == nw - 1:
                _guard(blocks, k)
        if k >= nw:
            r = k - nw
            if f_ch is not None:
                f_ch[r] = f_nom + grid.state.delta_f
            if p_ch is not None:
                p_ch[r] = p
            if q_ch is not None:
                q_ch[r] = q
            if vr_ch is not None:
                vr_ch[r] = abs(grid.solution.v_pcc)
            if want_nodes:
                for ch, val in zip(n_ch, grid.node_voltages()):
                    if ch is not None:
                        ch[r] = val
            if i_ch is not None:
                i_ch[r] = (i_rx.a, i_rx.b, i_rx.c)
            if v_ch is not None:
                v_ch[r] = (v.a, v.b, v.c)
            if want_cnt:
                vals = (mb_g.missing + mb_m.missing, mb_g.duplicate + mb_m.duplicate, mb_g.stale + mb_m.stale)
                for ch, val in zip(cnt, vals):
                    if ch is not None:
                        ch[r] = val
        yield


def _microgrid_loop(cfg: ScenarioConfig, mg: Microgrid, recon: VoltageReconstructor, side: MicrogridSide, rec: Recording):
    dt, nw = cfg.dt, cfg.n_warmup
    total = nw + cfg.n_steps
    overrides: dict = {}
    for e in cfg.override_events():
        overrides.setdefault(_event_step(cfg, e.t_event), []).append(e)
    use_clean = cfg.coupling.reconstruction
    d = rec.data
    pr_ch, qr_ch, fm_ch, vm_ch = d.get("p_ref"), d.get("q_ref"), d.get("f_m"), d.get("v_m")
    vmg_ch = d.get("v_abc_mg")
    lbp_ch, lbq_ch, lbo_ch = d.get("lb_p"), d.get("lb_q"), d.get("lb_override")
    bess = mg.bess
    nan = float("nan")

    for k in range(total):
        t = k * dt
        v_raw = side.receive(k, t)
        for e in overrides.get(k, ()):
            mg.set_phase_override(e.phase, e.p_w)
        v_clean = recon.step(v_raw)
        v_use = v_clean if use_clean else v_raw
        i = mg.step(v_use, recon.theta, recon.f_est, recon.v_rms, t)
        side.send(k, i)
        if k >= nw:
            r = k - nw
            if pr_ch is not None:
                pr_ch[r] = bess.p_ref if bess.enabled else 0.0
            if qr_ch is not None:
                qr_ch[r] = bess.q_ref if bess.enabled else 0.0
            if fm_ch is not None:
                fm_ch[r] = recon.f_est
            if vm_ch is not None:
                vm_ch[r] = recon.v_rms
            if vmg_ch is not None:
                vmg_ch[r] = (v_use.a, v_use.b, v_use.c)
            s = mg.setting
            if lbp_ch is not None:
                lbp_ch[r] = s.p_act
            if lbq_ch is not None:
                lbq_ch[r] = s.q_act
            if lbo_ch is not None:
                ovr = dict(s.overrides)
                lbo_ch[r] = (ovr.get("a", nan), ovr.get("b", nan), ovr.get("c", nan))
        yield


def _drain(gen, errors: list) -> None:
    try:
        for _ in gen:
            pass
    except BaseException as exc:  # surfaced by the orchestrator
        errors.append(exc)


def run_scenario(cfg: ScenarioConfig, realtime: bool = False, log_frames: bool = False) -> Recording:
    """Run warm-up plus ``horizon/dt`` recorded steps and return the recording.

    With ``log_frames`` the encoded frames are kept in ``rec.meta['frame_log']``.
    """
    cfg.validate()
    if cfg.kind != "cosim":
        raise ConfigError(f"scenario {cfg.name!r} is a {cfg.kind} scenario, not a co-simulation", field="kind")
    dt = cfg.dt
    grid = CampusGrid(cfg.grid, dt)
    mg = build_microgrid(cfg)
    recon = VoltageReconstructor(dt, cfg.grid.f_nom, cfg.microgrid.v_nominal, cfg.coupling.pll_kp, cfg.coupling.pll_ki)
    meta = {
        "scenario": cfg.name,
        "seed": cfg.transport.rng_seed,
        "decimation": cfg.recorder.decimation,
        "plot_decimation": cfg.recorder.plot_decimation,
        "event_plot_decimation": cfg.recorder.event_plot_decimation,
        "event_times": sorted({e.t_event for e in cfg.events}),
        "warmup": cfg.warmup,
        "itm_variant": cfg.coupling.itm_variant,
        "bess_enabled": cfg.bess.enabled,
    }
    rec = Recording.allocate(dt, cfg.n_steps, cfg.recorder.channels, meta)
    link = make_link(cfg.transport, dt, realtime=realtime, log_frames=log_frames)
    try:
        gside = GridSide(link.grid, cfg.coupling.itm_variant, cfg.coupling.grid_loss_policy, cfg.grid.f_nom, dt)
        mside = MicrogridSide(link.microgrid, cfg.coupling.itm_variant, cfg.coupling.microgrid_loss_policy, cfg.grid.f_nom, dt)
        g_loop = _grid_loop(cfg, grid, gside, link, rec)
        m_loop = _microgrid_loop(cfg, mg, recon, mside, rec)
        if cfg.transport.mode == "udp":
            errors: list = []
            threads = [threading.Thread(target=_drain, args=(g, errors), name=n) for g, n in ((g_loop, "grid"), (m_loop, "microgrid"))]
            for th in threads:
                th.start()
            for th in threads:
                th.join()
            if errors:
                raise errors[0]
        elif realtime:
            start = time.perf_counter()
            for k, _ in enumerate(zip(g_loop, m_loop)):
                target = start + (k + 1) * dt
                while time.perf_counter() < target:
                    pass
        else:
            for _ in zip(g_loop, m_loop):
                pass
    finally:
        link.close()
    counters = {name: vars(ep.counters).copy() for name, ep in (("grid", link.grid), ("microgrid", link.microgrid))}
    rec.meta["transport_counters"] = counters
    rec.meta["final_dispatch_pu"] = grid.state.p_gen_pu
    if log_frames:
        rec.meta["frame_log"] = link.frame_log
    return rec


def run_benchmark(cfg: ScenarioConfig) -> DelayReport:
    """Loopback delay probe at the scenario's dt; in-memory unless the transport is udp."""
    cfg.validate()
    return measure_loopback_delay(cfg.benchmark.probes, cfg.dt, cfg.transport)
