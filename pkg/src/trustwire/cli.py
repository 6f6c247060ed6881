"""Command line entry point: ``trustwire <command>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import AuthError, ConfigError, DuplicateUserError
from .handshake import QueryKind
from .keyfabric import DEFAULT_BITS, generate_keypair, save_keypair
from .simharness import (
    Network,
    all_met,
    format_lines,
    format_table,
    inject_fault,
    load_scenario,
    parse_fault,
    run_scenario,
    save_scenario,
    table1_scenario,
)


def _scenario(path):
    return load_scenario(path) if path else table1_scenario()


def _report(outcomes, lines: bool) -> int:
    print(format_lines(outcomes) if lines else format_table(outcomes))
    return 0 if all_met(outcomes) else 1


def cmd_keygen(args) -> int:
    pair = generate_keypair(args.bits, args.seed)
    pub, priv = save_keypair(pair, args.out)
    print(f"wrote {pub} and {priv} ({pair.n.bit_length()}-bit modulus)")
    return 0


def cmd_run(args) -> int:
    return _report(run_scenario(load_scenario(args.scenario)), args.lines)


def cmd_table1(args) -> int:
    return _report(run_scenario(table1_scenario()), args.lines)


def cmd_inject(args) -> int:
    scenario = _scenario(args.scenario)
    return _report(inject_fault(scenario, parse_fault(args.fault, args.row)), args.lines)


def cmd_register_user(args) -> int:
    scenario = _scenario(args.scenario)
    net = Network(scenario)
    node = net.node(args.agency)
    password = node.register_user(args.user)
    print(password)
    if args.save:
        scenario.agency(args.agency).users = list(node.accounts.values())
        save_scenario(scenario, args.save)
        print(f"saved accounts to {args.save}", file=sys.stderr)
    return 0


def cmd_query(args) -> int:
    scenario = _scenario(args.scenario)
    node = Network(scenario).node(args.agency)
    password = args.password if args.password is not None else sys.stdin.readline().strip()
    result = node.user_query(args.user, password, args.code, QueryKind.parse(args.kind))
    for item in result:
        print(item)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trustwire", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log audit entries to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="generate a key pair into <out>.pub / <out>.key")
    k.add_argument("--bits", type=int, default=DEFAULT_BITS)
    k.add_argument("--seed", type=int, required=True)
    k.add_argument("--out", required=True, help="output path stem")
    k.set_defaults(func=cmd_keygen)

    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("--scenario", required=True)
    r.add_argument("--lines", action="store_true", help="tab-separated outcome lines")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("table1", help="run the built-in four-agency reference scenario")
    t.add_argument("--lines", action="store_true")
    t.set_defaults(func=cmd_table1)

    i = sub.add_parser("inject", help="run a scenario with one fault injected")
    i.add_argument("--fault", required=True,
                   help="flip-byte:<k>[:request|response] | swap:<row> | replay | wrong-target-key | tamper-envelope")
    i.add_argument("--row", type=int, required=True, help="1-based script row")
    i.add_argument("--scenario")
    i.add_argument("--lines", action="store_true")
    i.set_defaults(func=cmd_inject)

    u = sub.add_parser("register-user", help="register a general user and print the issued password")
    u.add_argument("--agency", required=True)
    u.add_argument("--user", required=True)
    u.add_argument("--scenario")
    u.add_argument("--save", help="write the scenario with the new account to this path")
    u.set_defaults(func=cmd_register_user)

    q = sub.add_parser("query", help="general-user query against one agency's store")
    q.add_argument("--agency", required=True)
    q.add_argument("--user", required=True)
    q.add_argument("--code", required=True)
    q.add_argument("--password", help="read from stdin when omitted")
    q.add_argument("--kind", default="items", choices=["items", "activities"])
    q.add_argument("--scenario")
    q.set_defaults(func=cmd_query)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, AuthError, DuplicateUserError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
