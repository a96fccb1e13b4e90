"""Operator command line.

Verbs: serve (HTTP API + USSD bridge against a store directory), seed (load
fixture data), simulate (run a scenario script, write its trace), ussd
(conduct a USSD session from the terminal), export-aggregates, verify-audit.
Exit codes: 0 success, 1 operational failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
import uuid
from pathlib import Path

from . import analytics, netsim
from .audit import AuditLog, verify_log_lines
from .auth import AuthService
from .config import AppConfig
from .errors import EhrError
from .persist import AuditSink, EventJournal, LineCipher, load_credentials, save_credentials
from .service import EhrService
from .store import ReplicatedStore, wall_clock_ms
from .ussd.gateway import UssdGateway, UssdPdu
from .ussd.menu import tree_from_file
from .webapi import serve_api


def open_store(store_dir: str) -> tuple[ReplicatedStore, AuthService]:
    """Open (or create) a store directory with its audit chain intact."""
    cipher = LineCipher.from_env()
    journal = EventJournal(store_dir, cipher=cipher)
    sink = AuditSink(store_dir)
    audit = AuditLog(wall_clock_ms, sink=sink)
    existing = [json.loads(line) for line in sink.lines() if line.strip()]
    if existing:
        audit.bootstrap(existing)
    store = ReplicatedStore("central", audit=audit, journal=journal)
    auth = AuthService(wall_clock_ms, audit)
    auth.load_credentials(load_credentials(store_dir))
    auth.on_change = lambda: save_credentials(store_dir, auth.dump_credentials())
    return store, auth


def _config(args: argparse.Namespace) -> AppConfig:
    overrides = {
        "store_dir": getattr(args, "store_dir", None),
        "http_port": getattr(args, "http_port", None),
        "gateway_port": getattr(args, "gateway_port", None),
        "shortcode": getattr(args, "shortcode", None),
        "session_timeout_s": getattr(args, "session_timeout", None),
        "suppression_k": getattr(args, "k", None),
    }
    return AppConfig.load(getattr(args, "config", None), overrides)


def cmd_serve(args: argparse.Namespace) -> int:
    from .bridge import serve_bridge

    cfg = _config(args)
    store, auth = open_store(cfg.store_dir)
    service = EhrService(store, auth)
    tree = tree_from_file(args.menu) if args.menu else None
    gateway = UssdGateway(
        service, tree=tree, shortcode=cfg.shortcode, timeout_s=cfg.session_timeout_s
    )
    api = serve_api(service, port=cfg.http_port)
    bridge, _ = serve_bridge(gateway, wall_clock_ms, port=cfg.gateway_port)
    # Flush so supervisors reading a pipe see the bound ports immediately.
    print(
        f"http api on :{api.server_address[1]}  bridge on :{bridge.server_address[1]}/bridge",
        flush=True,
    )
    print(f"store: {cfg.store_dir}  shortcode: {cfg.shortcode}", flush=True)
    try:
        api.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        api.shutdown()
        bridge.shutdown()
        store.write_snapshot()
    return 0


def cmd_seed(args: argparse.Namespace) -> int:
    cfg = _config(args)
    store, auth = open_store(cfg.store_dir)
    data = json.loads(Path(args.file).read_text(encoding="utf-8"))
    for zone in data.get("zones", []):
        store.register_zone(zone["zone_id"], zone["name"], actor="seed")
    for facility in data.get("facilities", []):
        store.register_facility(
            facility["facility_id"], facility["name"], facility["zone_id"],
            facility.get("modality", "MES"), actor="seed",
        )
    for clinician in data.get("clinicians", []):
        auth.register_clinician(
            clinician["clinician_id"], clinician["role"], clinician["facility_id"],
            pin=clinician.get("pin", ""), password=clinician.get("password", ""),
            msisdn=clinician.get("msisdn"),
        )
    for patient in data.get("patients", []):
        store.register_patient(patient, actor="seed")
    for rx in data.get("prescriptions", []):
        store.create_prescription(rx, actor="seed")
    for encounter in data.get("encounters", []):
        store.record_encounter(encounter, actor="seed")
    store.write_snapshot()
    print(f"seeded {cfg.store_dir} from {args.file}")
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    script = netsim.load_script(args.scenario)
    trace_path = args.trace or (Path(args.scenario).stem + ".trace.jsonl")
    world = netsim.World(script, seed=args.seed)
    trace = world.run()
    trace.write(trace_path)
    failures = trace.failures
    print(f"trace written to {trace_path} ({len(trace.records)} records)")
    if failures:
        first = failures[0]
        print(f"ASSERTION_FAILED at_ms={first['at']}: {first['detail']}", file=sys.stderr)
        return 1
    return 0


def cmd_ussd(args: argparse.Namespace) -> int:
    cfg = _config(args)
    store, auth = open_store(cfg.store_dir)
    service = EhrService(store, auth)
    gateway = UssdGateway(service, shortcode=cfg.shortcode, timeout_s=cfg.session_timeout_s)
    session_id = args.session_id or f"cli-{uuid.uuid4().hex[:8]}"

    transcript: list[dict] = []

    def exchange(kind: str, text: str) -> UssdPdu:
        pdu = UssdPdu(session_id=session_id, msisdn=args.msisdn, kind=kind, text=text)
        response = gateway.handle_pdu(pdu, now=wall_clock_ms())
        transcript.append({"sent": text, "kind": response.kind, "screen": response.text})
        return response

    response = exchange("BEGIN", cfg.shortcode)
    print(response.text)
    if args.inputs is not None:
        for step in args.inputs.split(","):
            if response.kind == "END":
                break
            response = exchange("CONTINUE", step)
            print("---")
            print(response.text)
    else:
        while response.kind != "END":
            try:
                line = input("> ")
            except (EOFError, KeyboardInterrupt):
                print()
                break
            response = exchange("CONTINUE", line)
            print(response.text)
    if args.transcript_json:
        Path(args.transcript_json).write_text(
            json.dumps(transcript, indent=1, sort_keys=True) + "\n", encoding="utf-8"
        )
    return 0


def cmd_export_aggregates(args: argparse.Namespace) -> int:
    cfg = _config(args)
    store, _ = open_store(cfg.store_dir)
    rows = analytics.build_aggregates(store, args.period)
    kept = analytics.suppress_small_zones(rows, store, cfg.suppression_k)
    document = analytics.export_anonymized(
        kept, store, cfg.suppression_k, args.period, sink=args.out
    )
    store.audit.append("cli", "aggregates.export", args.period, "OK")
    if args.out:
        print(f"wrote {len(document['rows'])} rows to {args.out}")
    else:
        print(json.dumps(document, indent=1, sort_keys=True))
    return 0


def cmd_verify_audit(args: argparse.Namespace) -> int:
    cfg = _config(args)
    sink = AuditSink(cfg.store_dir)
    result = verify_log_lines(sink.lines())
    print(str(result))
    return 0 if result.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ehrmesh", description=__doc__)
    parser.add_argument("--config", help="path to a JSON config file")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_serve = sub.add_parser("serve", help="run the HTTP API and USSD bridge")
    p_serve.add_argument("--store-dir")
    p_serve.add_argument("--http-port", type=int)
    p_serve.add_argument("--gateway-port", type=int)
    p_serve.add_argument("--shortcode")
    p_serve.add_argument("--session-timeout", type=int)
    p_serve.add_argument("--menu", help="menu tree JSON overriding the default tree")
    p_serve.set_defaults(handler=cmd_serve)

    p_seed = sub.add_parser("seed", help="load fixture data into the store")
    p_seed.add_argument("--file", required=True)
    p_seed.add_argument("--store-dir")
    p_seed.set_defaults(handler=cmd_seed)

    p_sim = sub.add_parser("simulate", help="run a scenario script and write its trace")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--seed", type=int, default=None, help="override the script seed")
    p_sim.add_argument("--trace", help="trace output path")
    p_sim.set_defaults(handler=cmd_simulate)

    p_ussd = sub.add_parser("ussd", help="conduct a USSD session from the terminal")
    p_ussd.add_argument("--msisdn", required=True)
    p_ussd.add_argument("--session-id")
    p_ussd.add_argument("--inputs", help="comma-separated scripted inputs")
    p_ussd.add_argument("--transcript-json", help="write the transcript to this path")
    p_ussd.add_argument("--store-dir")
    p_ussd.add_argument("--shortcode")
    p_ussd.add_argument("--session-timeout", type=int)
    p_ussd.set_defaults(handler=cmd_ussd)

    p_agg = sub.add_parser("export-aggregates", help="write the anonymized zone export")
    p_agg.add_argument("--period", required=True, help="calendar month, YYYY-MM")
    p_agg.add_argument("--k", type=int)
    p_agg.add_argument("--out")
    p_agg.add_argument("--store-dir")
    p_agg.set_defaults(handler=cmd_export_aggregates)

    p_verify = sub.add_parser("verify-audit", help="check the audit hash chain")
    p_verify.add_argument("--store-dir")
    p_verify.set_defaults(handler=cmd_verify_audit)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except EhrError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
