"""Command line entry point: ``choreocep run | compare | catalog-serve``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .worker import STRATEGIES

log = logging.getLogger("choreocep")


def _cmd_run(args: argparse.Namespace) -> int:
    from .harness import ScenarioError, load_scenario, run_scenario

    try:
        cfg = load_scenario(args.scenario)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = run_scenario(cfg, strategy=args.strategy, out_dir=args.out)
    print(json.dumps(result.summary(), indent=2, sort_keys=True))
    print(f"outputs written to {args.out}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    from .harness import InputMismatchError, TraceFormatError, replay_compare

    exclude = None
    if args.exclude_from is not None or args.exclude_to is not None:
        if args.exclude_from is None or args.exclude_to is None:
            print("error: --exclude-from and --exclude-to go together", file=sys.stderr)
            return 2
        exclude = (args.exclude_from, args.exclude_to)
    try:
        report = replay_compare(args.a, args.b, exclude_occurrence=exclude)
    except (OSError, TraceFormatError, InputMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(report.summary())
    for eid in sorted(report.only_a)[:20]:
        print(f"  only in a: {eid}")
    for eid in sorted(report.only_b)[:20]:
        print(f"  only in b: {eid}")
    return 0 if report.empty else 1


def _cmd_catalog_serve(args: argparse.Namespace) -> int:
    from .catalog import Catalog
    from .catalog.http import make_server

    server = make_server(Catalog(), host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(f"catalog API listening on http://{host}:{port}/event_types", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="choreocep", description="Choreographed distributed CEP simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario on the simulated cluster")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run.add_argument("--strategy", choices=STRATEGIES, default=None, help="relocation search strategy")
    run.add_argument("--out", required=True, help="directory for metrics.csv, trace.jsonl, manifest.json")
    run.set_defaults(func=_cmd_run)

    cmp_ = sub.add_parser("compare", help="diff the detections of two traces")
    cmp_.add_argument("--a", required=True, help="first trace.jsonl")
    cmp_.add_argument("--b", required=True, help="second trace.jsonl")
    cmp_.add_argument("--exclude-from", type=int, default=None, help="skip detections occurring from this ms")
    cmp_.add_argument("--exclude-to", type=int, default=None, help="... up to and including this ms")
    cmp_.set_defaults(func=_cmd_compare)

    serve = sub.add_parser("catalog-serve", help="serve the catalog HTTP API on its own")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--host", default="127.0.0.1")
    serve.set_defaults(func=_cmd_catalog_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
