"""Command line: ``cvtrust run | analyze | inspect``.

Exit codes: 0 success, 2 bad input (config, preset, sweep), 3 invariant
violated during a run, 4 corrupted ledger.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import resources as rm
from .chain import BlockKind, load_ledger_json, verify_chain
from .sim import PRESETS as SCENARIO_PRESETS
from .sim import ConfigError, load_config, run_scenario

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT, EXIT_CORRUPT = 0, 2, 3, 4


class InvariantViolation(RuntimeError):
    pass


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


# -- run ----------------------------------------------------------------------

def check_invariants(series) -> None:
    ledger = series.ledger
    bad = verify_chain(ledger.blocks)
    if bad is not None:
        raise InvariantViolation(f"ledger fails verification at block {bad}")
    for v, rec in ledger.state.items():
        tp = rec.get("tp", 0)
        if tp < -1 or int(tp) != tp:
            raise InvariantViolation(f"trust points of {v.label} out of domain: {tp}")


def cmd_run(args) -> int:
    if bool(args.config) == bool(args.preset):
        return _fail(EXIT_INPUT, "give exactly one of --config or --preset")
    try:
        if args.config:
            text = Path(args.config).read_text()
            cfg = load_config(args.config)
            source = str(args.config)
        else:
            if args.preset not in SCENARIO_PRESETS:
                return _fail(EXIT_INPUT, f"unknown preset {args.preset!r}; "
                                         f"choose from {', '.join(sorted(SCENARIO_PRESETS))}")
            cfg = SCENARIO_PRESETS[args.preset]
            text, source = cfg.to_ini(), f"preset:{args.preset}"
        if args.seed is not None:
            cfg = cfg.with_(seed=args.seed)
    except ConfigError as exc:
        where = f"{args.config}:" if args.config else ""
        return _fail(EXIT_INPUT, f"{where}{exc}")
    except OSError as exc:
        return _fail(EXIT_INPUT, str(exc))
    try:
        series = run_scenario(cfg)
        check_invariants(series)
    except InvariantViolation as exc:
        return _fail(EXIT_INVARIANT, f"invariant violated: {exc}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(series.to_csv())
    (out / "audit.json").write_text(series.audit_json())
    (out / "ledger.json").write_text(json.dumps(series.ledger.to_json(), indent=1))
    manifest = {
        "config": source,
        "config_digest": hashlib.sha256(text.encode()).hexdigest(),
        "seed": cfg.seed,
        "output": str(out),
        "version": __version__,
        "metrics_digest": hashlib.sha256(series.to_csv().encode()).hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    print(json.dumps(series.summary, sort_keys=True, default=str))
    return EXIT_OK


# -- analyze ------------------------------------------------------------------

DEFAULT_SWEEPS = {
    "d_0": "10:10:300",
    "h": "0.7:0.05:1.0",
    "t_lat": "10:10:60",
}


def parse_sweep(spec: str) -> tuple:
    """``KEY=START:STEP:END`` (inclusive end) -> (key, values)."""
    key, _, rng = spec.partition("=")
    parts = rng.split(":")
    if not key or len(parts) != 3:
        raise ValueError(f"sweep must look like KEY=START:STEP:END, got {spec!r}")
    start, step, end = (float(p) for p in parts)
    if step <= 0:
        raise ValueError("sweep step must be positive")
    n = int(np.floor((end - start) / step + 1e-9)) + 1 if end >= start else 0
    return key, [round(start + k * step, 12) for k in range(n)]


def cmd_analyze(args) -> int:
    if args.preset not in rm.PRESETS:
        return _fail(EXIT_INPUT, f"unknown preset {args.preset!r}; choose from {', '.join(rm.PRESETS)}")
    p = rm.PRESETS[args.preset]
    sweeps = {k: parse_sweep(f"{k}={v}")[1] for k, v in DEFAULT_SWEEPS.items()}
    try:
        for spec in args.sweep or []:
            key, values = parse_sweep(spec)
            if key not in sweeps:
                return _fail(EXIT_INPUT, f"unknown sweep key {key!r}; choose from {', '.join(sweeps)}")
            sweeps[key] = values
    except ValueError as exc:
        return _fail(EXIT_INPUT, str(exc))
    tables = {
        "latency": rm.latency_table(sweeps["d_0"], p),
        "cpu": rm.cpu_table(sweeps["h"], p),
        "communication": rm.communication_table(sweeps["h"], sweeps["t_lat"], sweeps["d_0"], p),
        "storage": rm.storage_table(sweeps["d_0"], p),
    }
    if args.format == "json":
        tables = {k: _csv_to_records(v) for k, v in tables.items()}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, body in tables.items():
            if args.format == "json":
                (out / f"{name}.json").write_text(json.dumps(body, indent=1))
            else:
                (out / f"{name}.csv").write_text(body)
    elif args.format == "json":
        print(json.dumps(tables, indent=1))
    else:
        for name, body in tables.items():
            print(f"# {name}")
            print(body, end="")
    return EXIT_OK


def _csv_to_records(body: str) -> list:
    return list(csv.DictReader(io.StringIO(body)))


# -- inspect ------------------------------------------------------------------

def vehicle_history(ledger, label: str) -> list:
    rows, tp = [], None
    for b in ledger.blocks:
        for u in b.state_updates:
            if u.vehicle.label == label and u.field == "tp":
                tp = u.value if u.op == "set" else (tp or 0) + u.value
                rows.append({"round": b.round, "time": b.timestamp, "op": u.op,
                             "value": u.value, "tp": tp})
    return rows


def debate_timeline(ledger, label: str) -> list:
    rows = []
    for b in ledger.blocks:
        for tx in b.transactions:
            if tx.debate is not None and tx.debate.label == label:
                rows.append({"round": b.round, "time": tx.time, "sender": tx.sender.label,
                             "kind": tx.scid.name, "opinion": tx.payload.get("opinion")})
        for u in b.state_updates:
            if u.vehicle.label == label and u.field == "tp":
                rows.append({"round": b.round, "time": b.timestamp, "sender": None,
                             "kind": "trust_update", "opinion": f"{u.op} {u.value}"})
    return rows


def pot_credits(ledger) -> list:
    return [{"round": b.round, "vehicle": u.vehicle.label, "credits": u.value}
            for b in ledger.blocks if b.kind is BlockKind.Final
            for u in b.state_updates if u.field == "pot_period"]


def cmd_inspect(args) -> int:
    try:
        raw = Path(args.ledger).read_bytes()
    except OSError as exc:
        return _fail(EXIT_INPUT, f"cannot read ledger: {exc}")
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        return _fail(EXIT_CORRUPT, f"ledger file is damaged: {exc}")
    try:
        ledger, bad = load_ledger_json(doc)
    except (KeyError, ValueError, TypeError) as exc:
        return _fail(EXIT_CORRUPT, f"ledger unreadable: {exc}")
    if bad is not None:
        return _fail(EXIT_CORRUPT, f"hash chain broken at block {bad}")
    result = {"region": ledger.region, "blocks": len(ledger)}
    if args.vehicle:
        result["vehicle"] = args.vehicle
        result["trust_history"] = vehicle_history(ledger, args.vehicle)
    if args.debate:
        result["debate"] = args.debate
        result["timeline"] = debate_timeline(ledger, args.debate)
    if args.pot:
        result["pot_credits"] = pot_credits(ledger)
    print(json.dumps(result, indent=1))
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cvtrust", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("--config", type=str)
    run.add_argument("--preset", type=str, help=", ".join(sorted(SCENARIO_PRESETS)))
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=str, required=True)
    run.set_defaults(func=cmd_run)

    an = sub.add_parser("analyze", help="resource-model tables")
    an.add_argument("--preset", default="paper-2020")
    an.add_argument("--sweep", action="append", metavar="KEY=START:STEP:END",
                    help="keys: " + ", ".join(DEFAULT_SWEEPS))
    an.add_argument("--out", type=str)
    an.add_argument("--format", choices=("csv", "json"), default="csv")
    an.set_defaults(func=cmd_analyze)

    ins = sub.add_parser("inspect", help="query an exported ledger")
    ins.add_argument("ledger")
    ins.add_argument("--vehicle")
    ins.add_argument("--debate")
    ins.add_argument("--pot", action="store_true")
    ins.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
