"""Command-line front end: ``swinglink <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import energy
from .cdr import PI_STEPS, lock_sweep
from .channel import ChannelConfig
from .link import measure_ber, run_transfer
from .scenario import CHANNEL_KEYS, ConfigError, Scenario, load_scenario
from .trace import Trace

EXIT_OK, EXIT_ERRORS, EXIT_PROTOCOL, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _workers() -> int:
    raw = os.environ.get("SWINGLINK_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SWINGLINK_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("SWINGLINK_THREADS must be >= 1")
    return n


def _pool_map(fn, items: list) -> list:
    """Map in worker processes; results come back in input order."""
    n = min(_workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    wr.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out_dir: Path | None, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(text)


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else Path.cwd()


def _duty(args) -> energy.DutyCycleParams:
    return energy.DutyCycleParams(accounting=args.accounting)


def _require_config(args) -> Path:
    if not args.config:
        raise UsageError(f"{args.command} needs --config")
    return Path(args.config)


# -- subcommands -------------------------------------------------------------

def cmd_transfer(args) -> int:
    sc = load_scenario(_require_config(args))
    seed = sc.seed if args.seed is None else args.seed
    trace = Trace()
    report = run_transfer(sc.payload(), tx_cfg=sc.chip(), rx_cfg=sc.chip(), channel_cfg=sc.channel(seed),
                          seed=seed, params=sc.link_params(), trace=trace)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv())
    trace.write(out / "trace.tsv")
    (out / "payload_out.bin").write_bytes(report.payload_out)
    print(f"bit_errors={report.bit_errors} corrupt_words={report.corrupt_words} "
          f"cycles={report.cycles_completed} lock_failure={int(report.lock_failure)} "
          f"exit={report.exit_status}")
    for v in report.protocol_violations:
        print(f"protocol violation: {v}", file=sys.stderr)
    return report.exit_status


def _ber_job(job):
    values, jitter, bits, seed = job
    sc = Scenario(values)
    base = sc.channel(seed)
    cfg = ChannelConfig(base.phase_offset, round(jitter * 65536), base.freq_offset_ppm,
                        base.metastability_window, seed)
    r = measure_ber(bits, cfg, seed=seed, params=sc.link_params(), rx_cfg=sc.chip())
    return [f"{jitter:g}", r.bits, r.errors, f"{r.ber:.6e}", f"{r.ci_low:.6e}", f"{r.ci_high:.6e}",
            int(r.report.lock_failure)]


def cmd_ber_sweep(args) -> int:
    sc = load_scenario(_require_config(args), payload=False)
    seed = sc.seed if args.seed is None else args.seed
    bits = sc.get("ber_bits", 100_000)
    if bits < 10_000:
        raise ConfigError("ber_bits: must be >= 10000")
    jobs = [(sc.values, j, bits, seed) for j in sc.jitter_sweep()]
    rows = _pool_map(_ber_job, jobs)
    header = ("jitter_sigma_ui", "bits", "errors", "ber", "ci_low", "ci_high", "lock_failure")
    _emit(_csv_text(header, rows), _out_dir(args), "ber_sweep.csv")
    return EXIT_OK


def _lock_job(job):
    values, p0, budget, seed = job
    sc = Scenario(values)
    (res,) = lock_sweep(sc.channel(seed), sc.values["divider_n"], budget, phases=[p0], record=True)
    return p0, res


def cmd_cdr_lock(args) -> int:
    sc = load_scenario(_require_config(args), keys=CHANNEL_KEYS + ("divider_n",), payload=False)
    seed = sc.seed if args.seed is None else args.seed
    budget = sc.get("lock_budget_cycles", 1024)
    results = _pool_map(_lock_job, [(sc.values, p0, budget, seed) for p0 in range(PI_STEPS)])
    curve, summary = [], []
    for p0, res in results:
        for rec in res.windows:
            curve.append([p0, rec.window, rec.net, rec.pi_code])
        summary.append([p0, int(res.locked), res.settle_cycles, res.phase.pi_code])
    out = _out_dir(args)
    _emit(_csv_text(("initial_pi_code", "window", "net", "pi_code"), curve), out, "lock_curve.csv")
    _emit(_csv_text(("initial_pi_code", "locked", "settle_cycles", "final_pi_code"), summary), out, "lock_summary.csv")
    locked = sum(r[1] for r in summary)
    print(f"locked {locked}/{PI_STEPS}, max settle {max(r[2] for r in summary)} cycles")
    return EXIT_OK


def _parse_bw_list(raw: str) -> list[float]:
    try:
        vals = [float(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--bw expects comma-separated Mbps values, got {raw!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise UsageError("--bw values must be positive")
    return vals


def _parse_sweep(raw: str) -> list[float]:
    parts = raw.split(":")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        ppd = int(parts[2]) if len(parts) > 2 else 10
    except (ValueError, IndexError):
        raise UsageError(f"--sweep expects LO:HI[:POINTS_PER_DECADE], got {raw!r}") from None
    if not 0 < lo < hi or ppd < 1:
        raise UsageError("--sweep needs 0 < LO < HI and POINTS_PER_DECADE >= 1")
    return energy.log_sweep(lo, hi, ppd)


def cmd_energy_curve(args) -> int:
    p = energy.PowerProfile()
    if args.bw:
        bws = _parse_bw_list(args.bw)
    else:
        bws = _parse_sweep(args.sweep or "0.1:787:10")
    text = energy.energy_curve_csv(bws, p, _duty(args))
    _emit(text, Path(args.out) if args.out else None, "energy_curve.csv")
    return EXIT_OK


def cmd_compare(args) -> int:
    p = energy.PowerProfile()
    d = _duty(args)
    serdes_bw = energy.bw_max(p, d)
    bws = _parse_bw_list(args.bw) if args.bw else [10.0, 50.0, 800.0]
    rows = []
    for bw in bws:
        # "same": SerDes throttled to the peripheral's rate (capped at bw_max)
        s_bw = serdes_bw if args.serdes_bw == "max" else min(bw * 1e6, serdes_bw)
        for r in energy.compare(bw * 1e6, p=p, d=d, serdes_bw_bps=s_bw):
            if r.name == "serdes" or r.pj_per_bit is None:
                continue
            rows.append([f"{bw:g}", r.name, r.pads, f"{r.pj_per_bit:.6g}",
                         f"{energy.energy_per_bit(s_bw, p, d) * 1e12:.6g}", f"{s_bw / 1e6:.6g}",
                         f"{r.ratio_vs_serdes:.4f}", f"{s_bw / (bw * 1e6):.4f}"])
    header = ("bandwidth_mbps", "peripheral", "pads", "peripheral_pj_per_bit", "serdes_pj_per_bit",
              "serdes_bandwidth_mbps", "energy_ratio", "bandwidth_ratio")
    _emit(_csv_text(header, rows), Path(args.out) if args.out else None, "compare.csv")
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    ok = run_selftest(print)
    return EXIT_OK if ok else EXIT_ERRORS


COMMANDS = {
    "transfer": cmd_transfer,
    "ber-sweep": cmd_ber_sweep,
    "cdr-lock": cmd_cdr_lock,
    "energy-curve": cmd_energy_curve,
    "compare": cmd_compare,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="swinglink", description="Low-swing SerDes link simulator and energy model.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="scenario file (key = value)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--accounting", choices=("line", "goodput"), default="line")
        sp.add_argument("--format", choices=("csv",), default="csv")
        if name in ("energy-curve", "compare"):
            sp.add_argument("--bw", help="comma-separated bandwidths in Mbps")
        if name == "compare":
            sp.add_argument("--serdes-bw", choices=("max", "same"), default="max",
                            help="SerDes operating point: bw_max or the peripheral's bandwidth")
        if name == "energy-curve":
            sp.add_argument("--sweep", help="log sweep LO:HI[:POINTS_PER_DECADE] in Mbps")
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"swinglink: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
