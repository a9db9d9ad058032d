"""Command-line entry point: ``philsim run|benchmark|validate-config|list-scenarios``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from ..errors import ConfigError, SimulationError
from .config import BUNDLED, bundled_dir, load_config, resolve_scenario, with_overrides
from .recording import export_csv, export_delay_csv, export_plots
from .runner import run_benchmark, run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse already exits 2 on usage errors; keep the message on stderr
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _transport_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transport", choices=("in-process", "loopback", "udp"))
    p.add_argument("--grid-addr", metavar="HOST:PORT", help="UDP address of the grid endpoint")
    p.add_argument("--microgrid-addr", metavar="HOST:PORT", help="UDP address of the microgrid endpoint")


def _transport_changes(a) -> dict:
    changes = {}
    for opt, key in (("transport", "mode"), ("grid_addr", "grid_addr"), ("microgrid_addr", "microgrid_addr")):
        val = getattr(a, opt)
        if val is not None:
            changes[f"transport.{key}"] = val
    return changes


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="philsim", description="Grid/microgrid co-simulation over a lock-step ITM interface.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a co-simulation scenario")
    r.add_argument("--config", required=True, help="scenario file or bundled name (e2-loadstep, e2, ...)")
    r.add_argument("--droop", choices=("on", "off"))
    r.add_argument("--itm", choices=("raw", "dp"))
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="out", help="output directory (default: ./out)")
    r.add_argument("--realtime", action="store_true", help="pace steps to wall-clock time")
    r.add_argument("--no-plots", action="store_true")
    _transport_args(r)

    b = sub.add_parser("benchmark", help="measure the loopback delay")
    b.add_argument("--config", default="e1-benchmark")
    b.add_argument("--dt", type=float, help="override the step size in seconds")
    b.add_argument("--probes", type=int)
    b.add_argument("--out", help="also write loopback_delay.csv here")
    _transport_args(b)

    v = sub.add_parser("validate-config", help="check a scenario file")
    v.add_argument("config")

    sub.add_parser("list-scenarios", help="list bundled scenarios")
    return p


def _load(name: str):
    return load_config(resolve_scenario(name))


def _cmd_run(a) -> int:
    cfg = _load(a.config)
    changes = _transport_changes(a)
    if a.droop is not None:
        changes["bess.enabled"] = a.droop == "on"
    if a.itm is not None:
        changes["coupling.itm_variant"] = "dynamic_phasor" if a.itm == "dp" else "raw"
    if a.seed is not None:
        changes["transport.rng_seed"] = a.seed
    cfg = with_overrides(cfg, changes)
    if cfg.kind == "benchmark":
        report = run_benchmark(cfg)
        print(report.summary())
        print(f"wrote {export_delay_csv(report, a.out)}")
        return EXIT_OK
    rec = run_scenario(cfg, realtime=a.realtime)
    out = Path(a.out)
    files = export_csv(rec, out)
    if not a.no_plots:
        files += export_plots(rec, out)
    f = rec["f_grid"] if "f_grid" in rec.channels else None
    if f is not None and f.size:
        print(f"{cfg.name}: {rec.n_steps} steps, f min {f.min():.5f} Hz, f end {f[-1]:.5f} Hz")
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def _cmd_benchmark(a) -> int:
    cfg = _load(a.config)
    changes = _transport_changes(a)
    if a.dt is not None:
        changes["dt"] = a.dt
    if a.probes is not None:
        changes["benchmark.probes"] = a.probes
    cfg = with_overrides(cfg, changes)
    report = run_benchmark(cfg)
    print(report.summary())
    if a.out:
        print(f"wrote {export_delay_csv(report, a.out)}")
    return EXIT_OK


def _cmd_validate(a) -> int:
    cfg = load_config(a.config)
    print(f"{a.config}: ok ({cfg.name}, {cfg.kind}, dt={cfg.dt:g} s, horizon={cfg.horizon:g} s, {len(cfg.events)} events)")
    return EXIT_OK


def _cmd_list(_a) -> int:
    for name, fname in BUNDLED.items():
        path = bundled_dir() / fname
        try:
            desc = (yaml.safe_load(path.read_text(encoding="utf-8")) or {}).get("description", "")
        except (OSError, yaml.YAMLError):
            desc = "(unreadable)"
        print(f"{name:16s} {desc.strip().splitlines()[0] if desc else ''}")
    return EXIT_OK


def cli_main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "benchmark": _cmd_benchmark, "validate-config": _cmd_validate, "list-scenarios": _cmd_list}[a.cmd]
    try:
        return handler(a)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
