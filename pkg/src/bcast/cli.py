"""``bcast`` command line: bounds, gap study, sum-rate sweeps and PE simulation.

Exit status: 0 on success, 2 for configuration errors (bad arguments or
input files), 3 when an LP fails its numerical checks.
"""
import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .channel import ChannelError, load_channel, make_spatially_independent
from .experiments import (
    bounds_report,
    gapstudy,
    parse_grid,
    parse_rates,
    parse_ray,
    simulate,
    slots_for,
    sweep_hetero,
    sweep_symmetric,
)
from .lp import LpError
from .pe import Scripted, ScriptError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class ConfigError(Exception):
    pass


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def config_hash(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "func", "quiet")}
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def header_line(args):
    return f"# bcast {__version__} seed={getattr(args, 'seed', None)} config_hash={config_hash(args)}"


def write_csv(path, rows, args, footer=None):
    """CSV with a provenance comment row first and optional ``# key=value`` footer rows."""
    cols = []
    for r in rows:
        for c in r:
            if c not in cols:
                cols.append(c)
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header_line(args) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in cols])
        for k, v in (footer or {}).items():
            fh.write(f"# {k}={_fmt(v)}\n")


def _channel(args):
    if args.channel and args.p:
        raise ConfigError("give either --channel or --p, not both")
    if args.channel:
        if not os.path.exists(args.channel):
            raise ConfigError(f"channel file not found: {args.channel}")
        return load_channel(args.channel)
    if args.p:
        try:
            p = [float(x) for x in args.p.split(",")]
        except ValueError:
            raise ConfigError(f"--p must be a comma list of probabilities, got {args.p!r}") from None
        return make_spatially_independent(p)
    return None


def _int_list(spec, name):
    try:
        out = [int(x) for x in spec.split(",")]
    except ValueError:
        raise ConfigError(f"{name} must be a comma list of integers, got {spec!r}") from None
    return out


# commands ------------------------------------------------------------------


def cmd_bounds(args, out=None):
    out = out or sys.stdout
    ch = _channel(args)
    if ch is None:
        raise ConfigError("bounds needs --channel or --p")
    phi = parse_ray(args.ray, ch)
    rep = bounds_report(ch, phi, method=args.method)
    print(f"K={rep['K']} channel={rep['kind']} ray={','.join(f'{x:g}' for x in rep['ray'])}", file=out)
    print(f"t_outer  {rep['t_outer']:.12g}", file=out)
    print(f"t_inner  {rep['t_inner']:.12g}", file=out)
    print(f"gap      {rep['gap']:.3e}", file=out)
    for name, val in rep["closed_forms"].items():
        print(f"{name:<14} {val:.12g}", file=out)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"provenance": header_line(args)[2:], **rep}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return rep


def cmd_gapstudy(args, out=None):
    out = out or sys.stdout
    def progress(i, n):
        if not args.quiet and (i % 100 == 0 or i == n):
            print(f"  {i}/{n}", file=sys.stderr)

    rows, summary = gapstudy(args.K, args.trials, args.seed, method=args.method, workers=args.workers, progress=progress)
    if args.out:
        write_csv(args.out, rows, args, footer={"max_gap": summary["max_gap"], "trials": summary["trials"]})
    print(f"K={args.K} trials={args.trials} max_gap={summary['max_gap']:.3e} min_gap={summary['min_gap']:.3e}", file=out)
    return summary


def cmd_sweep(args, out=None):
    out = out or sys.stdout
    Ks = _int_list(args.K, "--K")
    grid = parse_grid(args.pgrid)
    if args.mode == "sym":
        rows = sweep_symmetric(Ks, grid)
    else:
        if any(K > 6 for K in Ks):
            raise ConfigError("heterogeneous sweep solves the inner-bound LP; use K <= 6")
        rows = sweep_hetero(Ks, grid, method=args.method)
    if args.out:
        write_csv(args.out, rows, args)
    else:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
    return rows


def cmd_simulate(args, out=None):
    out = out or sys.stdout
    policy = args.policy
    script = None
    if policy.startswith("scripted:"):
        path = policy.split(":", 1)[1]
        if not os.path.exists(path):
            raise ConfigError(f"script file not found: {path}")
        script = Scripted.from_json(path)
        policy = script
    ch = _channel(args)
    if ch is None:
        if script is None or "K" not in script.meta:
            raise ConfigError("simulate needs --channel or --p")
        # receptions come from the script; the channel only fixes K
        ch = make_spatially_independent([0.5] * int(script.meta["K"]))
    if args.packets:
        counts = _int_list(args.packets, "--packets")
    elif script is not None and "counts" in script.meta and not args.rates:
        counts = [int(c) for c in script.meta["counts"]]
    else:
        counts = None
    rates = parse_rates(args.rates, ch) if args.rates else None
    n = args.slots
    if counts is None:
        if rates is None or n is None:
            raise ConfigError("give --rates with --slots, or --packets")
        counts = [int(math.floor(r * n)) for r in rates]
    if n is None:
        if rates is None:
            n = len(script.slots) if script is not None else None
        else:
            n = slots_for(counts, rates, args.slack)
        if n is None:
            raise ConfigError("cannot infer the slot budget; give --slots")
    if len(counts) != ch.K:
        raise ConfigError(f"need {ch.K} packet counts, got {len(counts)}")
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    keep = {"none": 0, "first": 1, "all": args.trials}[args.traces]
    rows, summary, traces = simulate(
        ch,
        counts,
        n,
        args.trials,
        policy,
        q=args.q,
        seed=args.seed,
        payload_len=args.payload,
        check_lemmas=args.check_lemmas,
        keep_traces=keep if args.out else 0,
        record_states=args.record_states,
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        write_csv(os.path.join(args.out, "trials.csv"), rows, args)
        with open(os.path.join(args.out, "summary.json"), "w") as fh:
            json.dump({"provenance": header_line(args)[2:], **summary}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        for i, tr in enumerate(traces):
            tr.to_jsonl(os.path.join(args.out, f"trace_{i}.jsonl"))
    print(f"K={ch.K} packets={counts} slots={n} trials={args.trials} policy={args.policy}", file=out)
    print("decode frequency  " + " ".join(f"{x:.3f}" for x in summary["decode_frequency"]), file=out)
    print("mean throughput   " + " ".join(f"{x:.5f}" for x in summary["mean_throughput"]), file=out)
    print(f"exhaustion rate   {summary['exhaustion_rate']:.3f}", file=out)
    print(f"lemma violations  {summary['lemma3_violations']} / {summary['lemma4_violations']}", file=out)
    if "throughput_inside_inner_bound" in summary:
        print(f"inside inner bound {summary['throughput_inside_inner_bound']}", file=out)
    return summary


# parser --------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="bcast", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bcast {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def channel_opts(p):
        p.add_argument("--channel", help="channel spec JSON file")
        p.add_argument("--p", help="inline spatially independent channel: comma list of marginals")

    def method_opt(p):
        p.add_argument("--method", choices=["auto", "simplex", "highs"], default="auto", help="LP backend")

    p = sub.add_parser("bounds", help="outer/inner boundary scale along a ray")
    channel_opts(p)
    p.add_argument("--ray", default="fair", help="fair | prop | custom:v1,v2,...")
    method_opt(p)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("gapstudy", help="fair-ray inner/outer gap over random independent channels")
    p.add_argument("--K", type=int, required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    method_opt(p)
    p.add_argument("--out", help="per-trial CSV")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_gapstudy)

    p = sub.add_parser("sweep", help="sum-rate capacity against marginal success probability")
    p.add_argument("--mode", choices=["sym", "hetero"], required=True)
    p.add_argument("--K", required=True, help="comma list of receiver counts")
    p.add_argument("--pgrid", required=True, help="a:b:step, inclusive")
    method_opt(p)
    p.add_argument("--out", help="CSV file (default: stdout)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", help="Monte Carlo packet-evolution sessions")
    channel_opts(p)
    p.add_argument("--rates", help="comma list of packets/slot, or cap:<fraction>[:fair|prop]")
    p.add_argument("--packets", help="comma list of packet counts per receiver")
    p.add_argument("--slots", type=int, help="slot budget n")
    p.add_argument("--slack", type=float, default=1.10, help="slot slack when n is derived from --packets and --rates")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--policy", default="phase-order", help="phase-order | greedy-max | scripted:<file>")
    p.add_argument("--q", type=int, default=256, choices=[16, 256, 65536])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--payload", type=int, default=0, help="simulate this many payload symbols per packet")
    p.add_argument("--check-lemmas", action="store_true", help="assert the non-interference and remaining-space invariants")
    p.add_argument("--traces", choices=["none", "first", "all"], default="first")
    p.add_argument("--record-states", action="store_true", help="add every packet's v and S to each trace record")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except (ConfigError, ChannelError, ScriptError, ValueError, OSError) as exc:
        print(f"bcast: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LpError as exc:
        print(f"bcast: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
