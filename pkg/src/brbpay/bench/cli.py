"""brbpay command line.

    brbpay run --n 4 --brb sig --payments 200 --seed 7 --out out/
    brbpay run --scenario robust-crash --out out/ --plot
    brbpay run --config bench.toml --repeat 4 --out out/
    brbpay scenarios

Exit status: 0 clean, 1 if a safety check tripped (``violations.json`` is
written next to the CSVs), 2 on bad usage, 4 if a scenario ran clean but did
not show its expected behavior.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import tomli

from ..engine import ECHO, SIG
from ..model import ConfigError, SystemConfig
from ..shard import ShardTopology
from ..sim import TRACE_FULL, FaultPlan, LatencyModel, RunConfig, run
from .metrics import plot_timeline, report, write_csvs
from .scenarios import SCENARIOS, run_scenario
from .workload import SMALLBANK, UNIFORM, gen_smallbank, gen_uniform, shard_of_owner_from_config, smallbank_config

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
EXIT_UNEXPECTED = 4

DEFAULTS = {
    "f": 1, "shards": 1, "brb": SIG, "workload": UNIFORM, "payments": 200, "rate": 100.0,
    "seed": 1, "horizon_ms": 60_000.0, "clients": 10, "balance": 1000, "max_amount": 100,
    "batch_delay_ms": 5.0, "adversarial": False,
}

# config file keys per section, mapped onto option names
SECTIONS = {
    "topology": ("n", "f", "shards", "brb", "clients", "balance", "batch_delay_ms", "adversarial"),
    "workload": ("workload", "payments", "rate", "max_amount", "seed"),
    "run": ("seed", "horizon_ms", "repeat", "scenario"),
}


def load_config(path: str) -> dict:
    """Flatten a TOML file with [topology], [faults], [workload] (and optional [run])."""
    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    flat: dict = {}
    for section, keys in SECTIONS.items():
        body = doc.get(section, {})
        for k, v in body.items():
            key = "workload" if (section == "workload" and k == "kind") else k
            if key not in keys:
                raise ConfigError(f"unknown key {k!r} in [{section}]")
            flat[key] = v
    for k in ("seed", "horizon_ms"):
        if k in doc:
            flat[k] = doc[k]
    if "faults" in doc:
        flat["faults"] = doc["faults"]
    return flat


def load_fault_plan(path: str) -> FaultPlan:
    with open(path, "rb") as fh:
        raw = fh.read()
    if path.endswith(".json"):
        d = json.loads(raw)
    else:
        d = tomli.loads(raw.decode())
        d = d.get("faults", d)
    return FaultPlan.from_dict(d)


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = dict(DEFAULTS)
    from_file = load_config(args.config) if args.config else {}
    opts.update(from_file)
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "cmd", "func"):
            opts[k] = v
    n = opts.get("n")
    if n is not None and args.f is None and "f" not in from_file:
        opts["f"] = (n - 1) // 3
    f = opts["f"]
    if n is not None and n != 3 * f + 1:
        raise ConfigError(f"n={n} does not match 3f+1 for f={f}")
    opts["n"] = 3 * f + 1
    return opts


def build_run(opts: dict):
    f, shards = opts["f"], opts["shards"]
    if opts["workload"] == SMALLBANK:
        system = smallbank_config(shards, f, opts["clients"], balance=opts["balance"])
        wl = gen_smallbank(opts["clients"], opts["payments"], shards, seed=opts["seed"],
                           shard_of_owner=shard_of_owner_from_config(system), rate=opts["rate"])
    elif opts["workload"] == UNIFORM:
        system = SystemConfig.uniform(shards, f, opts["clients"], balance=opts["balance"])
        wl = gen_uniform(opts["clients"], opts["payments"], seed=opts["seed"], rate=opts["rate"],
                         max_amount=opts["max_amount"])
    else:
        raise ConfigError(f"unknown workload {opts['workload']!r}")
    cfg = RunConfig(system, variant=opts["brb"], batch_delay_ms=float(opts["batch_delay_ms"]),
                    latency=LatencyModel(adversarial=bool(opts["adversarial"])), trace_level=TRACE_FULL)
    cfg.validate()
    plan = FaultPlan.from_dict(opts["faults"]) if "faults" in opts else FaultPlan()
    if opts.get("fault_plan"):
        plan = load_fault_plan(opts["fault_plan"])
    plan.check(ShardTopology.from_config(system))
    return cfg, plan, wl


def _one(opts: dict, seed: int) -> dict:
    o = dict(opts, seed=seed)
    if o.get("scenario"):
        res = run_scenario(o["scenario"], seed=seed, **_scenario_params(o))
        return {"seed": seed, "trace": res.trace, "findings": res.findings, "ok": res.ok, "name": res.name}
    cfg, plan, wl = build_run(o)
    trace = run(cfg, plan, wl, seed=seed, horizon_ms=float(o["horizon_ms"]))
    findings = {"drained": trace.drained, "stalled": len(trace.stalled)}
    return {"seed": seed, "trace": trace, "findings": findings, "ok": True, "name": "run"}


def _scenario_params(o: dict) -> dict:
    # only flags the user set explicitly reach the scenario; DEFAULTS stay out
    out = {k: o[k] for k in o.get("_explicit", ()) if k in o}
    if "brb" in out:
        out["variant"] = out.pop("brb")
    return out


def emit(result: dict, out_dir: str, plot: bool, write_trace: bool) -> int:
    os.makedirs(out_dir, exist_ok=True)
    trace = result["trace"]
    rep = report(trace)
    write_csvs(rep, out_dir)
    with open(os.path.join(out_dir, "findings.json"), "w") as fh:
        json.dump({"name": result["name"], "seed": result["seed"], "ok": result["ok"],
                   "findings": result["findings"]}, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    if write_trace:
        with open(os.path.join(out_dir, "trace.jsonl"), "w") as fh:
            fh.write(trace.to_jsonl())
    if plot:
        plot_timeline(rep, os.path.join(out_dir, "timeline.png"), title=f"{result['name']} seed {result['seed']}")
    if trace.violations:
        with open(os.path.join(out_dir, "violations.json"), "w") as fh:
            json.dump({"seed": result["seed"], "violations": trace.violations}, fh, indent=2)
            fh.write("\n")
        return EXIT_VIOLATION
    return EXIT_OK if result["ok"] else EXIT_UNEXPECTED


def cmd_run(args: argparse.Namespace) -> int:
    try:
        opts = resolve(args)
        opts["_explicit"] = [k for k, v in vars(args).items()
                             if v is not None and k in ("f", "shards", "brb", "payments", "horizon_ms")]
        if opts.get("scenario") is None:
            build_run(opts)  # fail fast on bad configuration
    except (ConfigError, ValueError, OSError, tomli.TOMLDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    repeat = int(opts.get("repeat") or 1)
    seeds = [int(opts["seed"]) + i for i in range(repeat)]
    if repeat == 1:
        results = [_one(opts, seeds[0])]
    else:
        with ThreadPoolExecutor(max_workers=min(repeat, os.cpu_count() or 1)) as pool:
            results = list(pool.map(lambda s: _one(opts, s), seeds))
    codes = []
    for res in results:
        out = args.out if repeat == 1 else os.path.join(args.out, f"seed-{res['seed']}")
        code = emit(res, out, args.plot, args.trace)
        codes.append(code)
        status = {EXIT_OK: "ok", EXIT_VIOLATION: "VIOLATION", EXIT_UNEXPECTED: "unexpected"}[code]
        print(f"{res['name']} seed={res['seed']} {status} " + json.dumps(res["findings"], sort_keys=True, default=str))
    if EXIT_VIOLATION in codes:
        return EXIT_VIOLATION
    return max(codes)


def cmd_scenarios(args: argparse.Namespace) -> int:
    for name in sorted(SCENARIOS):
        doc = (SCENARIOS[name].__doc__ or "").strip().splitlines()
        print(f"{name:18s} {doc[0] if doc else ''}")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brbpay", description="Broadcast-based payment simulator and benchmarks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run a workload or a named scenario")
    r.add_argument("--config", help="TOML file with [topology], [faults], [workload] sections")
    r.add_argument("--scenario", choices=sorted(SCENARIOS))
    r.add_argument("--n", type=int, help="replicas per shard (3f+1)")
    r.add_argument("--f", type=int, help="faults tolerated per shard")
    r.add_argument("--shards", type=int)
    r.add_argument("--brb", choices=(ECHO, SIG))
    r.add_argument("--workload", choices=(UNIFORM, SMALLBANK))
    r.add_argument("--payments", type=int)
    r.add_argument("--clients", type=int, help="clients (uniform) or owners (smallbank)")
    r.add_argument("--rate", type=float, help="offered load, payments per sim-second")
    r.add_argument("--seed", type=int)
    r.add_argument("--fault-plan", dest="fault_plan", help="JSON or TOML fault plan")
    r.add_argument("--horizon-ms", dest="horizon_ms", type=float)
    r.add_argument("--repeat", type=int, help="independent runs with seeds seed, seed+1, ...")
    r.add_argument("--out", default="out")
    r.add_argument("--plot", action="store_true", help="also render timeline.png")
    r.add_argument("--trace", action="store_true", help="also write trace.jsonl")
    r.set_defaults(func=cmd_run)
    s = sub.add_parser("scenarios", help="list named scenarios")
    s.set_defaults(func=cmd_scenarios)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    del args.verbose
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
