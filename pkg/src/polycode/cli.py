"""Command-line entry point wiring codes, block store, and simulators.

Subcommands::

    code info|encode|decode|repair-plan
    store init|put|get|kill|revive|fsck|repair
    sim locality|reliability
    report

Exit codes: 0 success, 1 domain error (unrecoverable pattern, checksum
mismatch, fatal stripe, ...), 2 usage error.  Randomized commands require
--seed and are reproducible: identical argv gives byte-identical outputs.
Flags override values from an optional key=value --config file.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import zlib
from pathlib import Path

from . import blockstore, codes, mapsched, reliability
from .codes import CodeError, parse_scheme, storage_overhead, tolerance

REPORT_SCHEMES = ["2-rep", "3-rep", "pentagon", "heptagon", "heptagon-local", "raidm-9", "raidm-11"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # return exit code 2 instead of sys.exit
        raise UsageError(message)


def _fmt(value) -> str:
    if isinstance(value, float):
        return format(value, ".10g")
    return str(value)


def emit_report(rows: list[dict], path: str | Path | None, fieldnames: list[str]) -> str:
    """Write rows as RFC-4180 CSV (header always present, CRLF line ends);
    byte-stable for identical rows.  Returns the text; writes it when
    *path* is given ('-' or None prints to stdout)."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\r\n")
    writer.writeheader()
    for row in rows:
        if set(row) != set(fieldnames):
            raise ValueError("row keys do not match the report schema")
        writer.writerow({k: _fmt(v) for k, v in row.items()})
    text = buf.getvalue()
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_bytes(text.encode())
    return text


def _parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x != ""]


def _parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x != ""]


def _parse_str_list(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def build_parser() -> tuple[_Parser, dict[str, _Parser]]:
    parser = _Parser(prog="polycode", description=__doc__)
    parser.add_argument("--config", help="key=value file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    registry: dict[str, _Parser] = {}

    def register(name, p):
        registry[name] = p
        p.add_argument("--config", help=argparse.SUPPRESS)

    code = sub.add_parser("code")
    code_sub = code.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = code_sub.add_parser("info")
    p.add_argument("--scheme", required=True)
    register("code info", p)

    p = code_sub.add_parser("encode")
    p.add_argument("--scheme", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--block-size", type=int, default=0, help="0 = fit input in one stripe")
    register("code encode", p)

    p = code_sub.add_parser("decode")
    p.add_argument("--in-dir", required=True)
    p.add_argument("--killed", default="", help="comma-separated failed node ids")
    p.add_argument("--output", required=True)
    register("code decode", p)

    p = code_sub.add_parser("repair-plan")
    p.add_argument("--scheme", required=True)
    p.add_argument("--failed", required=True, help="comma-separated failed node ids")
    register("code repair-plan", p)

    store = sub.add_parser("store")
    store_sub = store.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = store_sub.add_parser("init")
    p.add_argument("--root", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--nodes", type=int, default=0, help="0 = code length")
    p.add_argument("--block-size", type=int, default=4 * 1024 * 1024)
    p.add_argument("--seed", type=int, required=True)
    register("store init", p)

    for name, extra in [
        ("put", [("--file", str, True), ("--name", str, False)]),
        ("get", [("--name", str, True), ("--output", str, True)]),
        ("kill", [("--node", int, True)]),
        ("revive", [("--node", int, True)]),
        ("fsck", []),
        ("repair", []),
    ]:
        p = store_sub.add_parser(name)
        p.add_argument("--root", required=True)
        for flag, flag_type, required in extra:
            p.add_argument(flag, type=flag_type, required=required)
        register(f"store {name}", p)

    sim = sub.add_parser("sim")
    sim_sub = sim.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sim_sub.add_parser("locality")
    p.add_argument("--scheme", required=True, help="comma-separated scheme names")
    p.add_argument("--scheduler", default="delay", help="comma-separated: matching,delay,peeling")
    p.add_argument("--nodes", type=int, default=25)
    p.add_argument("--slots", default="4", help="comma-separated map slots per node")
    p.add_argument("--load", default="100", help="comma-separated load percentages")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--stripes", type=int, default=0, help="0 = default dataset size")
    p.add_argument("--delay-rounds", type=int, default=1)
    p.add_argument("--summary", action="store_true", help="aggregate per cell")
    p.add_argument("--out", default="-")
    register("sim locality", p)

    p = sim_sub.add_parser("reliability")
    p.add_argument("--scheme", required=True, help="comma-separated scheme names")
    p.add_argument("--mttf-hours", type=float, default=4 * reliability.HOURS_PER_YEAR)
    p.add_argument("--mttr-hours", type=float, default=24.0)
    p.add_argument("--mode", choices=["parallel", "serial"], default="parallel")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="-")
    register("sim reliability", p)

    p = sub.add_parser("report")
    p.add_argument("--kind", choices=["schemes", "locality-summary"], required=True)
    p.add_argument("--input", help="detail CSV for locality-summary")
    p.add_argument("--out", default="-")
    register("report", p)

    return parser, registry


def _extract_config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a value")
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _command_key(argv: list[str]) -> str | None:
    """The '<command> <subcommand>' registry key named by argv, config
    tokens excluded."""
    rest = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok == "--config":
            i += 2
            continue
        if tok.startswith("--config="):
            i += 1
            continue
        rest.append(tok)
        i += 1
    if not rest or rest[0].startswith("-"):
        return None
    if rest[0] == "report":
        return "report"
    if len(rest) >= 2 and not rest[1].startswith("-"):
        return f"{rest[0]} {rest[1]}"
    return None


def _apply_config(parser, registry, argv: list[str]) -> None:
    """Install config values as the target subcommand's defaults (and lift
    their required flags), so explicit argv flags keep precedence."""
    config_path = _extract_config_path(argv)
    if config_path is None:
        return
    path = Path(config_path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    values = {}
    for ln, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{ln}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()

    key = _command_key(argv)
    if key is None or key not in registry:
        raise UsageError("--config requires a recognizable subcommand")
    known = {
        a.dest: a for a in registry[key]._actions if a.dest not in ("help", "config")
    }
    unknown = set(values) - set(known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    defaults = {}
    for dest, raw in values.items():
        action = known[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = raw.lower() in ("1", "true", "yes")
        elif action.type is not None:
            defaults[dest] = action.type(raw)
        else:
            defaults[dest] = raw
    target = registry[key]
    target.set_defaults(**defaults)
    for action in target._actions:
        if action.dest in defaults:
            action.required = False


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_code_info(args) -> int:
    scheme = parse_scheme(args.scheme)
    print(f"scheme: {scheme.name}")
    print(f"storage_overhead: {float(storage_overhead(scheme)):.3g}")
    print(f"code_length: {scheme.code_length}")
    print(f"data_blocks: {scheme.data_block_count}")
    print(f"coded_blocks: {scheme.block_count}")
    print(f"stored_blocks: {scheme.stored_block_count}")
    print(f"tolerance: {tolerance(scheme)}")
    return 0


def _cmd_code_encode(args) -> int:
    scheme = parse_scheme(args.scheme)
    data = Path(args.input).read_bytes()
    D = scheme.data_block_count
    block_size = args.block_size or max(1, -(-len(data) // D))
    if len(data) > D * block_size:
        raise UsageError("input exceeds one stripe; raise --block-size or use the store")
    padded = data.ljust(D * block_size, b"\0")
    payload = [padded[i * block_size : (i + 1) * block_size] for i in range(D)]
    encoded = codes.encode_stripe(scheme, payload)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layout = codes.build_layout(scheme, range(scheme.code_length), 0)
    meta = {
        "scheme": scheme.name,
        "block_size": block_size,
        "original_size": len(data),
        "blocks": {},
    }
    for block_id in sorted(encoded):
        name = f"b{block_id}.blk"
        (out / name).write_bytes(encoded[block_id])
        meta["blocks"][str(block_id)] = {
            "file": name,
            "role": layout.block_roles[block_id].as_string(),
            "nodes": list(layout.replicas(block_id)),
            "crc32": f"{zlib.crc32(encoded[block_id]):08x}",
        }
    (out / "stripe.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"encoded {len(data)} bytes into {len(encoded)} blocks under {out}")
    return 0


def _cmd_code_decode(args) -> int:
    src = Path(args.in_dir)
    meta = json.loads((src / "stripe.json").read_text())
    scheme = parse_scheme(meta["scheme"])
    killed = set(_parse_int_list(args.killed))
    surviving: dict[int, dict[int, bytes]] = {}
    for block_id, info in meta["blocks"].items():
        block_id = int(block_id)
        hosts = [n for n in info["nodes"] if n not in killed]
        if not hosts:
            continue
        body = (src / info["file"]).read_bytes()
        surviving.setdefault(hosts[0], {})[block_id] = body
    data = codes.decode_stripe(scheme, surviving, killed)
    raw = b"".join(data)[: meta["original_size"]]
    Path(args.output).write_bytes(raw)
    print(f"decoded {len(raw)} bytes to {args.output}")
    return 0


def _cmd_code_repair_plan(args) -> int:
    scheme = parse_scheme(args.scheme)
    plan = codes.plan_repair(scheme, _parse_int_list(args.failed))
    for t in plan.transfers:
        if isinstance(t.payload, codes.WholeCopy):
            what = f"copy block {t.payload.block_id}"
        else:
            terms = "+".join(
                f"{coef:#x}*b{b}" if coef != 1 else f"b{b}" for b, coef in t.payload.terms
            )
            what = f"partial parity {terms}"
        print(f"n{t.src} -> n{t.dst}: {what}")
    print(f"bandwidth_blocks: {plan.bandwidth_blocks}")
    return 0


def _cmd_store(args) -> int:
    sub = args.subcommand
    if sub == "init":
        scheme = parse_scheme(args.scheme)
        nodes = args.nodes or scheme.code_length
        blockstore.BlockStore.create(args.root, scheme, nodes, args.block_size, args.seed)
        print(f"initialized {scheme.name} store with {nodes} nodes at {args.root}")
        return 0
    store = blockstore.BlockStore(args.root)
    if sub == "put":
        manifest = store.put(args.file, args.name)
        print(f"stored {manifest.name}: {manifest.size} bytes in {manifest.stripe_count} stripes")
    elif sub == "get":
        data = store.get(args.name)
        Path(args.output).write_bytes(data)
        degraded = sum(bw for *_, bw in store.degraded_log)
        print(f"read {len(data)} bytes; degraded transfers: {degraded}")
    elif sub == "kill":
        state = store.kill_node(args.node)
        print(f"node {state.node_id} is {state.status}")
    elif sub == "revive":
        state = store.revive_node(args.node)
        print(f"node {state.node_id} is {state.status}")
    elif sub == "fsck":
        report = store.fsck()
        print(f"missing: {len(report.missing)}")
        print(f"corrupt: {len(report.corrupt)}")
        print(f"fatal_stripes: {len(report.fatal_stripes)}")
        print("clean" if report.is_clean else "damaged")
    elif sub == "repair":
        result = store.repair()
        print(f"plans_executed: {result.plans_executed}")
        print(f"bandwidth_blocks: {result.bandwidth_blocks}")
    return 0


def _cmd_sim_locality(args) -> int:
    schemes = _parse_str_list(args.scheme)
    schedulers = _parse_str_list(args.scheduler)
    for s in schedulers:
        if s not in mapsched.SCHEDULERS:
            raise UsageError(f"unknown scheduler: {s}")
    rows = mapsched.locality_sweep(
        schemes,
        schedulers,
        _parse_int_list(args.slots),
        _parse_float_list(args.load),
        reps=args.reps,
        node_count=args.nodes,
        base_seed=args.seed,
        stripes=args.stripes or None,
        rounds_before_remote=args.delay_rounds,
    )
    if args.summary:
        emit_report(mapsched.summarize_locality(rows), args.out, mapsched.SUMMARY_COLUMNS)
    else:
        emit_report(rows, args.out, mapsched.LOCALITY_COLUMNS)
    return 0


def _cmd_sim_reliability(args) -> int:
    schemes = [parse_scheme(s) for s in _parse_str_list(args.scheme)]
    model = reliability.FailureModel.from_mttf_mttr(args.mttf_hours, args.mttr_hours, args.mode)
    for scheme in schemes:
        chain = reliability.build_markov_chain(scheme, model)
        for note in chain.assumptions:
            print(f"# {scheme.name}: {note}", file=sys.stderr)
    rows = reliability.reliability_rows(schemes, model, args.trials, args.seed, args.threads)
    emit_report(rows, args.out, reliability.RELIABILITY_COLUMNS)
    return 0


def _cmd_report(args) -> int:
    if args.kind == "schemes":
        rows = []
        for name in REPORT_SCHEMES:
            scheme = parse_scheme(name)
            years = reliability.mttdl_analytic(scheme, reliability.DEFAULT_MODEL)
            rows.append(
                {
                    "scheme": scheme.name,
                    "storage_overhead": round(float(storage_overhead(scheme)), 3),
                    "code_length": scheme.code_length,
                    "tolerance": tolerance(scheme),
                    "mttdl_years_default_model": round(years / reliability.HOURS_PER_YEAR, 1),
                }
            )
        emit_report(
            rows,
            args.out,
            ["scheme", "storage_overhead", "code_length", "tolerance", "mttdl_years_default_model"],
        )
        return 0
    if not args.input:
        raise UsageError("--input is required for locality-summary")
    with open(args.input, newline="") as fh:
        detail = list(csv.DictReader(fh))
    rows = []
    for r in detail:
        rows.append(
            {
                "scheme": r["scheme"],
                "scheduler": r["scheduler"],
                "nodes": int(r["nodes"]),
                "slots": int(r["slots"]),
                "load_pct": float(r["load_pct"]),
                "seed": int(r["seed"]),
                "tasks": int(r["tasks"]),
                "local_tasks": int(r["local_tasks"]),
                "locality_pct": float(r["locality_pct"]),
                "remote_blocks": int(r["remote_blocks"]),
            }
        )
    emit_report(mapsched.summarize_locality(rows), args.out, mapsched.SUMMARY_COLUMNS)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        _apply_config(parser, registry, argv)
        args = parser.parse_args(argv)
        if args.command == "code":
            handler = {
                "info": _cmd_code_info,
                "encode": _cmd_code_encode,
                "decode": _cmd_code_decode,
                "repair-plan": _cmd_code_repair_plan,
            }[args.subcommand]
            return handler(args)
        if args.command == "store":
            return _cmd_store(args)
        if args.command == "sim":
            if args.subcommand == "locality":
                return _cmd_sim_locality(args)
            return _cmd_sim_reliability(args)
        return _cmd_report(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (CodeError, blockstore.StoreError, mapsched.OverloadError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
