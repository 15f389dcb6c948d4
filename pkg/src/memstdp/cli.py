"""Command-line entry point: ``memstdp {stdp,characterize,iv,run,replay}``.

Exit codes: 0 ok, 1 validation or configuration error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional

from . import __version__
from .device import DeviceParams, params_from_mapping, params_to_mapping
from .protocol import (CharacterizationConfig, IvSweepConfig, StdpSweepConfig,
                       characterization_csv, default_characterization_configs, iv_csv,
                       run_characterization, run_iv_sweep, run_stdp_sweep, summarize)
from .script import ScriptError, execute, parse

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# command -> setting -> (type, default). Flags override config, config overrides these.
SETTINGS: Dict[str, Dict[str, tuple]] = {
    "stdp": {"trials": (int, 100), "dt_start_ms": (float, 0.0), "dt_stop_ms": (float, 8.0),
             "dt_step_ms": (float, 0.1)},
    "characterize": {"kind": (str, "all"), "axis": (str, "all"), "pulses": (int, 50)},
    "iv": {"vmax": (float, 1.0), "vmin": (float, -1.0), "step": (float, 0.05),
           "dwell": (float, 1000.0)},
    "run": {"script": (str, None)},
}
GLOBAL = {"seed": (int, 0), "format": (str, "csv"), "jobs": (int, 1), "plot": (bool, False)}


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("common options")
    g.add_argument("--seed", type=int, help="master random seed (default: 0)")
    g.add_argument("--config", help="INI file with [device] and per-command sections")
    g.add_argument("--out", help="output directory (default: runs/<command>)")
    g.add_argument("--format", choices=["csv", "json"], help="table format (default: csv)")
    g.add_argument("--plot", action="store_true", default=None, help="also write an SVG plot")
    g.add_argument("--jobs", type=int, help="worker processes; affects wall time only (default: 1)")
    g.add_argument("--dry-run", action="store_true", help="validate inputs, write nothing")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memstdp", description="Stochastic memristor STDP virtual lab.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("stdp", help="delta-t sweep of write probability")
    p.add_argument("--trials", type=int, help="trials per delta-t point (default: 100)")
    p.add_argument("--dt-start-ms", type=float, help="first delta-t in ms (default: 0)")
    p.add_argument("--dt-stop-ms", type=float, help="last delta-t in ms, inclusive (default: 8)")
    p.add_argument("--dt-step-ms", type=float, help="delta-t step in ms (default: 0.1)")
    _common(p)

    p = sub.add_parser("characterize", help="write/erase pulse characterization")
    p.add_argument("--kind", help="write, erase or all (default: all)")
    p.add_argument("--axis", help="amplitude, width or all (default: all)")
    p.add_argument("--pulses", type=int, help="pulses per sweep value (default: 50)")
    _common(p)

    p = sub.add_parser("iv", help="quasi-static I-V staircase sweep")
    p.add_argument("--vmax", type=float, help="positive turning point in V (default: 1.0)")
    p.add_argument("--vmin", type=float, help="negative turning point in V (default: -1.0)")
    p.add_argument("--step", type=float, help="voltage step in V (default: 0.05)")
    p.add_argument("--dwell", type=float, help="time per step in us (default: 1000)")
    _common(p)

    p = sub.add_parser("run", help="parse and execute an experiment script")
    p.add_argument("script", help="script file")
    _common(p)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest", help="manifest.json written by an earlier run")
    p.add_argument("--out", help="output directory (default: the recorded one)")
    p.add_argument("--jobs", type=int, help="worker processes (default: 1)")
    return parser


# --- settings resolution -------------------------------------------------------

def _read_config(path: Optional[str]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is None:
        return cp
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise UsageError(f"config {path}: {exc}") from None
    return cp


def _convert(name: str, typ, raw):
    if typ is bool:
        if isinstance(raw, bool):
            return raw
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    try:
        return typ(raw)
    except (TypeError, ValueError):
        raise UsageError(f"{name}: cannot convert {raw!r} to {typ.__name__}") from None


def resolve(ns: argparse.Namespace) -> tuple:
    """Merge defaults < config file < flags into (settings, device params)."""
    cp = _read_config(ns.config)
    settings = {}
    spec = {**GLOBAL, **SETTINGS[ns.command]}
    for name, (typ, default) in spec.items():
        value = default
        for section in ("global", ns.command):
            if cp.has_option(section, name):
                value = _convert(name, typ, cp.get(section, name))
        flag = getattr(ns, name, None)
        if flag is not None:
            value = flag
        settings[name] = value
    try:
        params = params_from_mapping(dict(cp["device"])) if cp.has_section("device") else DeviceParams()
    except ValueError as exc:
        raise UsageError(f"config [device]: {exc}") from None
    if settings["format"] not in ("csv", "json"):
        raise UsageError("format must be 'csv' or 'json'")
    if settings["jobs"] < 1:
        raise UsageError("jobs must be >= 1")
    return settings, params


# --- output helpers --------------------------------------------------------------

def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table(records: List[dict], csv_text: str, fmt: str) -> str:
    return csv_text if fmt == "csv" else json.dumps(records, indent=1) + "\n"


class _Run:
    def __init__(self, command: str, settings: dict, params: DeviceParams, out: Path,
                 config: Optional[str]):
        self.command = command
        self.settings = settings
        self.params = params
        self.out = out
        self.config = config
        self.outputs: List[str] = []
        self.started = datetime.now(timezone.utc).isoformat()

    def write(self, name: str, text: str) -> None:
        _atomic_write(self.out / name, text)
        self.outputs.append(name)

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.config,
            "seed": self.settings["seed"],
            "started": self.started,
            "version": __version__,
            "outputs": self.outputs,
            "settings": {k: v for k, v in self.settings.items() if k != "jobs"},
            "params": params_to_mapping(self.params),
        }
        _atomic_write(self.out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _plot_stdp(curve, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "memstdp"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    dts = [p.dt / 1000 for p in curve.points]
    ax.plot(dts, [100 * p.p_hat for p in curve.points], "o", ms=3, label="simulated")
    ax.plot(dts, [100 * p.p_analytic for p in curve.points], "-", lw=1, label="analytic")
    ax.set_xlabel("delta t (ms)")
    ax.set_ylabel("write probability (%)")
    ax.legend()
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _plot_xy(xs, ys, xlabel, ylabel, path: Path, style="-") -> None:
    import matplotlib
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "memstdp"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(xs, ys, style, ms=3)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# --- commands --------------------------------------------------------------------

def cmd_stdp(run: _Run, dry_run: bool) -> int:
    s = run.settings
    cfg = StdpSweepConfig(dt_start=s["dt_start_ms"] * 1000, dt_stop=s["dt_stop_ms"] * 1000,
                          dt_step=s["dt_step_ms"] * 1000, trials=s["trials"], seed=s["seed"])
    cfg.validate()
    if dry_run:
        print(f"stdp: {len(cfg.grid())} points x {cfg.trials} trials (dry run)")
        return EXIT_OK
    curve = run_stdp_sweep(cfg, run.params, jobs=s["jobs"])
    summary = summarize(curve)
    run.write(f"stdp.{s['format']}", _table(curve.to_records(), curve.to_csv(), s["format"]))
    run.write("summary.json", summary.to_json())
    if s["plot"]:
        _plot_stdp(curve, run.out / "stdp.svg")
        run.outputs.append("stdp.svg")
    run.finish()
    d = summary.to_dict()
    baseline = "n/a" if d["baseline_p"] is None else f"{d['baseline_p']:.4f}"
    print(f"peak_p={d['peak_p']:.3f} at {d['peak_dt_ms']} ms, baseline_p={baseline}, "
          f"window=[{d['window_lo_ms']}, {d['window_hi_ms']}] ms")
    return EXIT_OK


def cmd_characterize(run: _Run, dry_run: bool) -> int:
    s = run.settings
    kinds = ("write", "erase") if s["kind"] == "all" else (s["kind"],)
    axes = ("amplitude", "width") if s["axis"] == "all" else (s["axis"],)
    for k in kinds:
        if k not in ("write", "erase"):
            raise UsageError(f"kind must be write, erase or all, got {k!r}")
    for a in axes:
        if a not in ("amplitude", "width"):
            raise UsageError(f"axis must be amplitude, width or all, got {a!r}")
    configs = [c for c in default_characterization_configs(s["seed"], s["pulses"])
               if c.kind in kinds and c.sweep_axis in axes]
    for c in configs:
        c.validate()
    if dry_run:
        print(f"characterize: {len(configs)} panels (dry run)")
        return EXIT_OK
    for c in configs:
        rows = run_characterization(c, run.params)
        records = [{"sweep_value": r.sweep_value, "pulse_index": r.pulse_index,
                    "resistance_ohm": round(r.resistance, 3), "state": r.state.value} for r in rows]
        stem = f"characterize_{c.kind}_{c.sweep_axis}"
        run.write(f"{stem}.{s['format']}", _table(records, characterization_csv(rows), s["format"]))
        if s["plot"]:
            _plot_xy(range(len(rows)), [r.resistance for r in rows], "pulse", "resistance (ohm)",
                     run.out / f"{stem}.svg", "o")
            run.outputs.append(f"{stem}.svg")
        n_lrs = sum(r.state.value == "LRS" for r in rows)
        print(f"{stem}: {len(rows)} reads, {n_lrs} LRS")
    run.finish()
    return EXIT_OK


def cmd_iv(run: _Run, dry_run: bool) -> int:
    s = run.settings
    cfg = IvSweepConfig(v_max=s["vmax"], v_min=s["vmin"], step=s["step"], dwell=s["dwell"],
                        seed=s["seed"])
    cfg.validate()
    if dry_run:
        print(f"iv: {len(cfg.staircase())} steps (dry run)")
        return EXIT_OK
    points = run_iv_sweep(cfg, run.params)
    records = [{"v_volts": p.v, "i_amps": p.i, "state": p.state.value} for p in points]
    run.write(f"iv.{s['format']}", _table(records, iv_csv(points), s["format"]))
    if s["plot"]:
        _plot_xy([p.v for p in points], [p.i for p in points], "V (V)", "I (A)", run.out / "iv.svg")
        run.outputs.append("iv.svg")
    run.finish()
    print(f"iv: {len(points)} steps, final state {points[-1].state.value}")
    return EXIT_OK


def cmd_run(run: _Run, dry_run: bool) -> int:
    s = run.settings
    try:
        text = Path(s["script"]).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise UsageError(f"{s['script']}: not UTF-8 text ({exc.reason})") from None
    program = parse(text)
    if dry_run:
        print(f"{s['script']}: {len(program.statements)} top-level statements (dry run)")
        return EXIT_OK
    log = execute(program, run.params, s["seed"])
    run.write(f"runlog.{s['format']}", _table(log.to_records(), log.to_csv(), s["format"]))
    run.finish()
    print(f"run: {len(log.rows)} log rows")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[_Run, bool], int]] = {
    "stdp": cmd_stdp, "characterize": cmd_characterize, "iv": cmd_iv, "run": cmd_run,
}


def _replay(ns: argparse.Namespace) -> int:
    with open(ns.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    command = manifest["command"]
    if command not in COMMANDS:
        raise UsageError(f"manifest names unknown command {command!r}")
    settings = {**manifest["settings"], "jobs": ns.jobs or 1}
    params = params_from_mapping(manifest["params"])
    out = Path(ns.out) if ns.out else Path(ns.manifest).parent
    run = _Run(command, settings, params, out, manifest.get("config"))
    return COMMANDS[command](run, False)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "replay":
            return _replay(ns)
        settings, params = resolve(ns)
        out = Path(ns.out) if ns.out else Path("runs") / ns.command
        run = _Run(ns.command, settings, params, out, ns.config)
        return COMMANDS[ns.command](run, ns.dry_run)
    except ScriptError as exc:
        print(f"{getattr(ns, 'script', '')}:{exc}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, ValueError, KeyError) as exc:
        print(f"memstdp {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"memstdp {ns.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
