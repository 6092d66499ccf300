"""``siat`` command line client.

Subcommands mirror the gateway endpoints and talk to a running server
(``--server``/``--token``, or the SIAT_SERVER/SIAT_TOKEN environment
variables).  With ``--local`` the same dispatch runs against an embedded
system on ``--data-dir`` (default SIAT_DATA_DIR or ./siat-data), acting as
``--as`` (default root) without a server.

Exit codes: 0 success, 1 client/usage error, 2 server or transport error.
"""

from __future__ import annotations

import argparse
import json
import os
import signal
import sys
import urllib.error
import urllib.request
from typing import Optional

from . import errors as E
from .gateway import Api, GatewayServer, TOKEN_HEADER, status_for
from .system import SiatSystem, resolve_data_dir


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


class HttpClient:
    def __init__(self, base_url: str, token: Optional[str]):
        self.base_url = base_url.rstrip("/")
        self.token = token

    def request(self, method: str, path: str, query: dict, body: Optional[dict]):
        url = self.base_url + path
        if query:
            url += "?" + "&".join(f"{k}={v}" for k, v in query.items())
        data = None if body is None else json.dumps(body).encode("utf-8")
        req = urllib.request.Request(url, data=data, method=method)
        req.add_header("Content-Type", "application/json")
        if self.token:
            req.add_header(TOKEN_HEADER, self.token)
        try:
            with urllib.request.urlopen(req) as resp:
                return resp.status, json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as e:
            return e.code, json.loads(e.read().decode("utf-8"))
        except urllib.error.URLError as e:
            print(f"error: cannot reach {self.base_url}: {e.reason}", file=sys.stderr)
            raise SystemExit(2) from None

    def close(self):
        pass


class LocalClient:
    """Embedded mode: same dispatch, no sockets; one session per invocation."""

    def __init__(self, data_dir: Optional[str], as_user: str):
        self.system = SiatSystem(resolve_data_dir(data_dir))
        self.api = Api(self.system)
        user = self.system.catalog.find_user_by_name(as_user)
        if user is None:
            self.system.close()
            raise SystemExit(f"error: no user named {as_user!r}")
        self.token = self.api.sessions.create(user.user_id).token

    def request(self, method: str, path: str, query: dict, body: Optional[dict]):
        try:
            return self.api.dispatch(method, path, query, body, self.token)
        except Exception as e:  # noqa: BLE001 - mirrors the HTTP mapping
            code = e.code if isinstance(e, E.SiatError) else type(e).__name__
            return status_for(e), {"error": str(e), "code": code}

    def close(self):
        self.system.close()


def _json_arg(value: str):
    """Accept inline JSON or an @file / plain path containing JSON."""
    text = value
    if value.startswith("@"):
        text = open(value[1:], encoding="utf-8").read()
    elif not value.lstrip().startswith(("{", "[")) and os.path.exists(value):
        text = open(value, encoding="utf-8").read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise argparse.ArgumentTypeError(f"not valid JSON: {e}") from None


def build_parser() -> _Parser:
    parser = _Parser(prog="siat", description="Streaming video analytics control plane")
    parser.add_argument("--server", default=os.environ.get("SIAT_SERVER",
                                                           "http://127.0.0.1:8787"))
    parser.add_argument("--token", default=os.environ.get("SIAT_TOKEN"))
    parser.add_argument("--json", action="store_true", help="print raw JSON")
    parser.add_argument("--local", action="store_true",
                        help="run against an embedded system instead of a server")
    parser.add_argument("--data-dir", default=None, help="data dir for --local/serve")
    parser.add_argument("--as", dest="as_user", default="root",
                        help="acting user name in --local mode")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP gateway")
    p.add_argument("--port", type=int, default=8787)

    p = sub.add_parser("login", help="create a session token by user name")
    p.add_argument("--name", required=True)

    p = sub.add_parser("health")

    p = sub.add_parser("user")
    usub = p.add_subparsers(dest="action", required=True)
    uc = usub.add_parser("create")
    uc.add_argument("--name", required=True)
    uc.add_argument("--role", required=True, choices=["ADMIN", "DEVELOPER", "CONSUMER"])
    usub.add_parser("list")

    p = sub.add_parser("source")
    ssub = p.add_subparsers(dest="action", required=True)
    sc = ssub.add_parser("create")
    sc.add_argument("--kind", required=True, choices=["STREAM", "BATCH"])
    sc.add_argument("--spec", required=True, type=_json_arg,
                    help="source spec JSON (inline, @file, or path)")
    ssub.add_parser("list")

    p = sub.add_parser("algorithm")
    asub = p.add_subparsers(dest="action", required=True)
    ac = asub.add_parser("create")
    ac.add_argument("--name", required=True)
    ac.add_argument("--version", default="1")
    ac.add_argument("--stage", required=True,
                    choices=["PREPROCESS", "FEATURE", "REDUCE", "MODEL", "DETECT"])
    ac.add_argument("--input", required=True,
                    choices=["FRAMES", "VECTORS", "LABELS"])
    ac.add_argument("--output", required=True,
                    choices=["FRAMES", "VECTORS", "LABELS", "ANOMALIES"])
    asub.add_parser("list")

    p = sub.add_parser("service")
    vsub = p.add_subparsers(dest="action", required=True)
    vc = vsub.add_parser("create")
    vc.add_argument("--mode", default="RIVA", choices=["RIVA", "BIVA"])
    vc.add_argument("--pipeline", required=True, type=_json_arg,
                    help='JSON list of {"algorithm_id": ..., "params": {...}}')
    vc.add_argument("--name", default="")
    vl = vsub.add_parser("list")
    vl.add_argument("--mode", default=None)
    vl.add_argument("--name", default=None)
    vl.add_argument("--owner", default=None)

    p = sub.add_parser("subscribe")
    p.add_argument("--source", required=True)
    p.add_argument("--service", required=True)

    p = sub.add_parser("grant", help="grant another user read access to a source")
    p.add_argument("--source", required=True)
    p.add_argument("--user", required=True)

    p = sub.add_parser("ingest", help="publish a source's frames to a service queue")
    p.add_argument("--service", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--compression", default="NONE", choices=["NONE", "DEFLATE"])

    p = sub.add_parser("run")
    p.add_argument("--service", required=True)
    p.add_argument("--max-batches", type=int, default=None)

    p = sub.add_parser("ir")
    p.add_argument("--service", required=True)
    p.add_argument("--kind", default=None)
    p.add_argument("--limit", type=int, default=None)

    p = sub.add_parser("anomalies")
    p.add_argument("--service", required=True)
    p.add_argument("--limit", type=int, default=None)

    p = sub.add_parser("kq", help="run a knowledge query")
    p.add_argument("query")

    return parser


def _command_request(args) -> tuple[str, str, dict, Optional[dict]]:
    c = args.command
    if c == "login":
        return "POST", "/sessions", {}, {"name": args.name}
    if c == "health":
        return "GET", "/health", {}, None
    if c == "user":
        if args.action == "create":
            return "POST", "/users", {}, {"name": args.name, "role": args.role}
        return "GET", "/users", {}, None
    if c == "source":
        if args.action == "create":
            return "POST", "/sources", {}, {"kind": args.kind, "spec": args.spec}
        return "GET", "/sources", {}, None
    if c == "algorithm":
        if args.action == "create":
            return "POST", "/algorithms", {}, {
                "name": args.name, "version": args.version, "stage_kind": args.stage,
                "input_kind": args.input, "output_kind": args.output}
        return "GET", "/algorithms", {}, None
    if c == "service":
        if args.action == "create":
            return "POST", "/services", {}, {"mode": args.mode,
                                             "pipeline": args.pipeline,
                                             "name": args.name}
        query = {k: v for k, v in
                 (("mode", args.mode), ("name", args.name), ("owner", args.owner))
                 if v}
        return "GET", "/services", query, None
    if c == "subscribe":
        return "POST", "/subscriptions", {}, {"source_id": args.source,
                                              "service_id": args.service}
    if c == "grant":
        return "POST", f"/sources/{args.source}/grant", {}, {"user_id": args.user}
    if c == "ingest":
        body = {"source_id": args.source, "batch_size": args.batch_size,
                "compression": args.compression}
        if args.frames is not None:
            body["frames"] = args.frames
        return "POST", f"/services/{args.service}/ingest", {}, body
    if c == "run":
        body = {} if args.max_batches is None else {"max_batches": args.max_batches}
        return "POST", f"/services/{args.service}/run", {}, body
    if c == "ir":
        query = {}
        if args.kind:
            query["kind"] = args.kind
        if args.limit is not None:
            query["limit"] = args.limit
        return "GET", f"/services/{args.service}/ir", query, None
    if c == "anomalies":
        query = {} if args.limit is None else {"limit": args.limit}
        return "GET", f"/services/{args.service}/anomalies", query, None
    if c == "kq":
        return "POST", "/query", {}, {"q": args.query}
    raise AssertionError(c)


def _print_human(command: str, payload) -> None:
    if command == "login":
        print(payload["token"])
        return
    if command == "kq":
        bindings = payload["bindings"]
        if not bindings:
            print("(no bindings)")
        for row in bindings:
            print("  ".join(f"{k}={v}" for k, v in sorted(row.items())))
        return
    if isinstance(payload, list):
        for item in payload:
            print(json.dumps(item, sort_keys=True))
        return
    print(json.dumps(payload, sort_keys=True))


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        try:
            server = GatewayServer(port=args.port,
                                   data_dir=resolve_data_dir(args.data_dir)).start()
        except E.SiatError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        try:
            signal.pause()
        except (KeyboardInterrupt, AttributeError):
            pass
        finally:
            server.stop()
        return 0

    if args.local:
        client = LocalClient(args.data_dir, args.as_user)
    else:
        client = HttpClient(args.server, args.token)
    try:
        method, path, query, body = _command_request(args)
        status, payload = client.request(method, path, query, body)
    finally:
        client.close()

    if status >= 500:
        print(f"error: {payload.get('error', payload)}", file=sys.stderr)
        return 2
    if status >= 400:
        message = payload.get("error", payload) if isinstance(payload, dict) else payload
        code = payload.get("code", "") if isinstance(payload, dict) else ""
        print(f"error: {code}: {message}" if code else f"error: {message}",
              file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        _print_human(args.command, payload)
    return 0


if __name__ == "__main__":
    sys.exit(main())
