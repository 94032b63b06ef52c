# details: json-lines tcp front for remote teams (handshake, per-step percept → act with deadline)
from __future__ import annotations
import json, logging, queue, socket, threading, time
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

from ..core.runner import Controller, MatchConfig, MatchResult, load_world, parse_controller_spec, run_match
from ..core.world import Action, Occupant, OccupantKind, Percept, Position, Terrain, VisibleCell, WorldState
from ..utils.config import CFG, ConfigError

logger = logging.getLogger(__name__)

MSG_TYPES = {"hello", "welcome", "percept", "act", "result", "error"}
MAX_LINE = 1 << 20


class ProtocolError(ValueError):
    def __init__(self, code: str, text: str):
        super().__init__(f"{code}: {text}")
        self.code = code
        self.text = text


# ---------------------------------------------------------------- codec

def encode(msg: Mapping[str, Any]) -> bytes:
    return (json.dumps(msg, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def decode(line: bytes | str) -> Dict[str, Any]:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            raise ProtocolError("malformed", "line is not utf-8") from None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError("malformed", f"not json ({e.msg})") from None
    if not isinstance(obj, dict) or obj.get("type") not in MSG_TYPES:
        raise ProtocolError("malformed", "expected an object with a known 'type'")
    return obj


def error_msg(code: str, text: str) -> Dict[str, Any]:
    return {"type": "error", "code": code, "text": text}


_OCC = {OccupantKind.COW: "c", OccupantKind.ALLY: "a", OccupantKind.OPPONENT: "o"}
_OCC_BACK = {v: k for k, v in _OCC.items()}


def percept_to_wire(p: Percept) -> Dict[str, Any]:
    cells = []
    for vc in p.visible:
        row = [vc.pos.x, vc.pos.y, vc.terrain.code()]
        if vc.occupant is not None:
            row += [_OCC[vc.occupant.kind], vc.occupant.id]
        cells.append(row)
    return {
        "agent": p.agent,
        "pos": [p.pos.x, p.pos.y],
        "team": p.team,
        "step": p.step,
        "cells": cells,
        "fences": {str(f): v for f, v in sorted(p.fences.items())},
    }


def percept_from_wire(d: Mapping[str, Any]) -> Percept:
    try:
        visible = []
        for row in d["cells"]:
            occ = Occupant(_OCC_BACK[row[3]], int(row[4])) if len(row) > 3 else None
            visible.append(VisibleCell(Position(int(row[0]), int(row[1])), Terrain.from_code(row[2]), occ))
        return Percept(
            agent=int(d["agent"]),
            pos=Position(*d["pos"]),
            team=int(d["team"]),
            step=int(d["step"]),
            visible=tuple(visible),
            fences={int(f): bool(v) for f, v in d.get("fences", {}).items()},
        )
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise ProtocolError("malformed", f"bad percept ({e})") from None


# ---------------------------------------------------------------- server side

_GONE = object()


class _Line:
    """Socket wrapper: newline framing on read, locked writes."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self.buf = b""
        self.wlock = threading.Lock()

    def send(self, msg: Mapping[str, Any]) -> bool:
        try:
            with self.wlock:
                self.sock.sendall(encode(msg))
            return True
        except OSError:
            return False

    def read(self) -> Optional[bytes]:
        while b"\n" not in self.buf:
            data = self.sock.recv(4096)
            if not data:
                return None
            self.buf += data
            if len(self.buf) > MAX_LINE:
                raise ProtocolError("malformed", "line too long")
        line, self.buf = self.buf.split(b"\n", 1)
        return line

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class NetController:
    """Controller for one team whose agents are driven by a remote client."""

    def __init__(self, team: int, port: int, agent_ids: Sequence[int], world: WorldState, cfg: CFG, host: str = "127.0.0.1"):
        self.team = team
        self.agent_ids = sorted(agent_ids)
        self.cfg = cfg
        self.welcome = {
            "type": "welcome",
            "team": team,
            "agents": self.agent_ids,
            "width": world.width,
            "height": world.height,
            "r_fov": world.r_fov,
        }
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.listener.bind((host, port))
        self.listener.listen(4)
        self.port = self.listener.getsockname()[1]
        self.conn: Optional[_Line] = None
        self.inbox: "queue.Queue[Any]" = queue.Queue()
        self.gone = False
        self.late = 0
        logger.info("team %d listening on %s:%d", team, host, self.port)

    # handshake

    def _handshake(self, line: _Line) -> bool:
        try:
            raw = line.read()
            if raw is None:
                return False
            msg = decode(raw)
        except (ProtocolError, OSError) as e:
            line.send(error_msg(getattr(e, "code", "malformed"), str(e)))
            return False
        if msg["type"] != "hello":
            line.send(error_msg("malformed", "expected hello"))
            return False
        if msg.get("team") != self.team:
            line.send(error_msg("wrong-team", f"this port serves team {self.team}"))
            return False
        if self.cfg.net_token and msg.get("token") != self.cfg.net_token:
            line.send(error_msg("bad-token", "token rejected"))
            return False
        return line.send(self.welcome)

    def wait_for_client(self, timeout: float) -> None:
        deadline = time.monotonic() + timeout
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                raise ConfigError(f"team {self.team}: no client connected within {timeout:.0f}s")
            self.listener.settimeout(left)
            try:
                sock, addr = self.listener.accept()
            except socket.timeout:
                continue
            sock.settimeout(max(0.1, left))
            line = _Line(sock)
            if self._handshake(line):
                sock.settimeout(None)
                self.conn = line
                logger.info("team %d client connected from %s:%d", self.team, *addr[:2])
                threading.Thread(target=self._reader, name=f"net-team{self.team}", daemon=True).start()
                return
            logger.warning("team %d: rejected client %s:%d", self.team, *addr[:2])
            line.close()

    def _reader(self) -> None:
        line = self.conn
        while True:
            try:
                raw = line.read()
            except ProtocolError as e:
                line.send(error_msg(e.code, e.text))
                break
            except OSError:
                break
            if raw is None:
                break
            if not raw.strip():
                continue
            try:
                msg = decode(raw)
            except ProtocolError as e:
                line.send(error_msg(e.code, e.text))
                continue
            if msg["type"] == "hello":
                line.send(error_msg("duplicate-hello", "already joined"))
                continue
            self.inbox.put(msg)
        self.inbox.put(_GONE)

    # turn loop

    def _sanitize(self, raw: Any, step: int) -> Dict[int, Action]:
        out = {aid: Action.STAY for aid in self.agent_ids}
        if not isinstance(raw, dict):
            self.conn.send(error_msg("malformed", f"step {step}: actions must be an object"))
            return out
        for aid in self.agent_ids:
            v = raw.get(str(aid))
            if v is None:
                continue
            try:
                out[aid] = Action.parse(v)
            except ValueError:
                self.conn.send(error_msg("illegal-action", f"agent {aid}: {v!r}"))
        return out

    def act(self, step: int, percepts: Mapping[int, Percept]) -> Dict[int, Action]:
        stay = {aid: Action.STAY for aid in self.agent_ids}
        if self.gone or self.conn is None:
            return stay
        budget = self.cfg.d_act_ms
        sent = self.conn.send({
            "type": "percept",
            "step": step,
            "deadline_ms": budget,
            "percepts": {str(a): percept_to_wire(p) for a, p in sorted(percepts.items())},
        })
        if not sent:
            self._lost(step)
            return stay
        deadline = time.monotonic() + budget / 1000.0
        while True:
            left = deadline - time.monotonic()
            if left <= 0:
                self.late += 1
                logger.debug("team %d missed the step %d deadline", self.team, step)
                return stay
            try:
                msg = self.inbox.get(timeout=left)
            except queue.Empty:
                continue
            if msg is _GONE:
                self._lost(step)
                return stay
            if msg["type"] != "act":
                self.conn.send(error_msg("malformed", f"unexpected {msg['type']}"))
                continue
            if msg.get("step") != step:
                self.conn.send(error_msg("stale-step", f"act for step {msg.get('step')!r}, now {step}"))
                continue
            return self._sanitize(msg.get("actions"), step)

    def _lost(self, step: int) -> None:
        if not self.gone:
            logger.warning("team %d client disconnected at step %d; staying from now on", self.team, step)
        self.gone = True

    def send_result(self, res: MatchResult) -> None:
        if self.conn is not None and not self.gone:
            self.conn.send({"type": "result", "scores": {str(k): v for k, v in res.scores.items()}, "steps": res.steps})

    def close(self) -> None:
        if self.conn is not None:
            self.conn.close()
        self.listener.close()


def serve(mc: MatchConfig, ready: Optional[Callable[[Dict[int, int]], None]] = None) -> MatchResult:
    """Run a match where net:PORT teams are played by remote clients.

    ready, if given, is called with {team: port} once listening (port 0 binds an ephemeral one)."""
    mc.validate()
    cfg = mc.sim_cfg()
    world = load_world(mc, cfg)
    nets: List[NetController] = []
    try:
        for team, spec in ((1, mc.team1), (2, mc.team2)):
            kind, port = parse_controller_spec(spec)
            if kind == "net":
                nets.append(NetController(team, port, world.team_agents(team), world, cfg))
        if not nets:
            raise ConfigError("serve needs at least one net:PORT team")
        if ready is not None:
            ready({n.team: n.port for n in nets})
        for n in nets:
            n.wait_for_client(cfg.accept_timeout_s)
        ctrls: Dict[int, Controller] = {n.team: n for n in nets}
        res = run_match(mc, controllers=ctrls)
        for n in nets:
            n.send_result(res)
            if n.late:
                logger.info("team %d missed %d deadlines", n.team, n.late)
        return res
    finally:
        for n in nets:
            n.close()
