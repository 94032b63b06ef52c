# details: remote team client; joins a netmatch server and plays with a local controller
from __future__ import annotations
import logging, socket
from typing import Any, Callable, Dict, Mapping, Optional

from ..core.runner import Controller
from ..utils.config import CFG, get_cfg
from .herder import HerderTeam
from .netmatch import ProtocolError, decode, encode, percept_from_wire

logger = logging.getLogger(__name__)

Factory = Callable[[Mapping[str, Any]], Controller]


def herders_for(cfg: CFG) -> Factory:
    def build(welcome: Mapping[str, Any]) -> Controller:
        return HerderTeam(welcome["team"], welcome["agents"], welcome["width"], welcome["height"], welcome["r_fov"], cfg)
    return build


def play(
    host: str,
    port: int,
    team: int,
    token: Optional[str] = None,
    factory: Optional[Factory] = None,
    cfg: Optional[CFG] = None,
    connect_timeout: float = 10.0,
) -> Optional[Dict[str, Any]]:
    """Join, answer every percept with the local controller's actions; returns the result message
    (None if the server hung up first)."""
    cfg = cfg or get_cfg()
    factory = factory or herders_for(cfg)
    tok = cfg.net_token if token is None else token
    with socket.create_connection((host, port), timeout=connect_timeout) as sock:
        sock.settimeout(None)
        rfile = sock.makefile("rb")
        sock.sendall(encode({"type": "hello", "team": team, "token": tok}))
        ctrl: Optional[Controller] = None
        try:
            for raw in rfile:
                if not raw.strip():
                    continue
                msg = decode(raw)
                kind = msg["type"]
                if kind == "welcome":
                    ctrl = factory(msg)
                    logger.info("joined as team %d with agents %s", msg["team"], msg["agents"])
                elif kind == "percept":
                    if ctrl is None:
                        raise ProtocolError("malformed", "percept before welcome")
                    percepts = {int(a): percept_from_wire(p) for a, p in msg["percepts"].items()}
                    actions = ctrl.act(msg["step"], percepts)
                    sock.sendall(encode({
                        "type": "act",
                        "step": msg["step"],
                        "actions": {str(a): act.value for a, act in sorted(actions.items())},
                    }))
                elif kind == "result":
                    logger.info("match over: %s", msg.get("scores"))
                    return msg
                elif kind == "error":
                    logger.warning("server error %s: %s", msg.get("code"), msg.get("text"))
                    if ctrl is None:
                        raise ProtocolError(msg.get("code", "malformed"), msg.get("text", ""))
        finally:
            if ctrl is not None:
                ctrl.close()
            rfile.close()
    return None
