# details: command line: run a match, verify / render a replay log, join a server as a remote team
from __future__ import annotations
import argparse, json, logging, sys
from pathlib import Path
from typing import Dict, List, Optional

from .core.replay import LogError, render, replay_verify
from .core.runner import MatchConfig, parse_controller_spec, run_match
from .core.world import MapError
from .utils.config import ConfigError, get_cfg
from .utils.logs import setup_logging

logger = logging.getLogger("app.cli")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_MISMATCH = 0, 1, 2, 3


def _overrides(pairs: Optional[List[str]]) -> Dict[str, str]:
    out = {}
    for raw in pairs or []:
        key, sep, val = raw.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"--set expects KEY=VALUE, got {raw!r}")
        out[key.strip()] = val.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="herd", description="Cows & herders grid simulator")
    ap.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING (default from LOG_LEVEL)")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="play one match")
    r.add_argument("--map", required=True, help="map file or bundled map name")
    r.add_argument("--steps", type=int, default=500)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--team1", default="builtin:herders")
    r.add_argument("--team2", default="builtin:idle")
    r.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE")
    r.add_argument("--log", type=Path, default=None, help="write a replay log here")

    v = sub.add_parser("verify", help="re-simulate a replay log and compare state hashes")
    v.add_argument("--log", type=Path, required=True)

    d = sub.add_parser("render", help="print the board at a logged step")
    d.add_argument("--log", type=Path, required=True)
    d.add_argument("--step", type=int, default=0)

    c = sub.add_parser("client", help="join a server as a remote team of herders")
    c.add_argument("--host", default="127.0.0.1")
    c.add_argument("--port", type=int, required=True)
    c.add_argument("--team", type=int, choices=(1, 2), required=True)
    c.add_argument("--token", default=None)
    c.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE")
    return ap


def _run(args: argparse.Namespace) -> int:
    mc = MatchConfig(
        map_path=args.map,
        steps=args.steps,
        seed=args.seed,
        team1=args.team1,
        team2=args.team2,
        overrides=_overrides(args.overrides),
        log_path=args.log,
    )
    mc.validate()
    if any(parse_controller_spec(s)[0] == "net" for s in (mc.team1, mc.team2)):
        from .services.netmatch import serve
        res = serve(mc)
    else:
        res = run_match(mc)
    print(res.to_json())
    return EXIT_OK


def _client(args: argparse.Namespace) -> int:
    from .services.netclient import play
    from .utils.config import with_overrides

    cfg = with_overrides(get_cfg(), _overrides(args.overrides))
    res = play(args.host, args.port, args.team, token=args.token, cfg=cfg)
    if res is None:
        logger.warning("server closed the connection before the result")
        return EXIT_RUNTIME
    print(json.dumps(res, separators=(",", ":")))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        if args.cmd == "run":
            return _run(args)
        if args.cmd == "verify":
            verdict = replay_verify(args.log)
            print(verdict)
            return EXIT_OK if verdict.ok else EXIT_MISMATCH
        if args.cmd == "render":
            print(render(args.log, args.step))
            return EXIT_OK
        return _client(args)
    except (ConfigError, MapError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except LogError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception("unexpected failure")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
