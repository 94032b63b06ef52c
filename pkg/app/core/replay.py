# details: match logs (json lines), canonical state hash, replay verification, board rendering
from __future__ import annotations
import json, logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from ..utils.config import CFG, from_constants, simulation_constants
from .world import Action, AgentBody, Position, UnknownAgent, WorldState, legal_actions, load_map, percept, step

logger = logging.getLogger(__name__)

LOG_VERSION = 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


class LogError(RuntimeError):
    pass


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def canonical(world: WorldState) -> bytes:
    """Stable serialization of everything a transition depends on except the rng."""
    parts = [
        f"{world.width}x{world.height}",
        world.to_ascii(),
        "c:" + ";".join(f"{cid},{p.x},{p.y}" for cid, p in sorted(world.cows.items())),
        "a:" + ";".join(f"{aid},{b.pos.x},{b.pos.y},{b.team}" for aid, b in sorted(world.agents.items())),
        "f:" + ";".join(f"{fid}={int(v)}" for fid, v in sorted(world.fences.items())),
        "s:" + ";".join(f"{t}={v}" for t, v in sorted(world.scores.items())),
        f"t:{world.step}",
    ]
    return "|".join(parts).encode("utf-8")


def state_hash(world: WorldState) -> str:
    return f"{fnv1a64(canonical(world)):016x}"


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class LogWriter:
    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", encoding="utf-8", newline="\n")

    def header(self, world: WorldState, seed: int, steps: int, cfg: CFG, rng_teams: Sequence[int] = ()) -> None:
        self._line({
            "kind": "header",
            "version": LOG_VERSION,
            "map": world.source,
            "seed": seed,
            "steps": steps,
            "constants": simulation_constants(cfg),
            "rng_teams": sorted(rng_teams),
        })

    def record(self, world: WorldState, actions: Mapping[int, Action]) -> None:
        self._line({
            "kind": "step",
            "step": world.step,
            "actions": {str(a): act.value for a, act in sorted(actions.items())},
            "agents": [[a, b.pos.x, b.pos.y] for a, b in sorted(world.agents.items())],
            "cows": [[c, p.x, p.y] for c, p in sorted(world.cows.items())],
            "fences": {str(f): v for f, v in sorted(world.fences.items())},
            "scores": {str(t): v for t, v in sorted(world.scores.items())},
            "hash": state_hash(world),
        })

    def end(self, steps: int) -> None:
        self._line({"kind": "end", "steps": steps})

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def _line(self, obj: Dict[str, Any]) -> None:
        self._fh.write(_dumps(obj) + "\n")
        self._fh.flush()


def read_log(path: Path) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    p = Path(path)
    if not p.exists():
        raise LogError(f"no such log: {p}")
    header: Optional[Dict[str, Any]] = None
    records: List[Dict[str, Any]] = []
    end: Optional[Dict[str, Any]] = None
    for n, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as e:
            raise LogError(f"malformed log: line {n} is not json ({e.msg})") from None
        kind = obj.get("kind") if isinstance(obj, dict) else None
        if end is not None:
            raise LogError(f"malformed log: line {n} after end marker")
        if kind == "header" and header is None and n == 1:
            header = obj
        elif kind == "step" and header is not None:
            if not isinstance(obj.get("step"), int) or "hash" not in obj or "actions" not in obj:
                raise LogError(f"malformed log: line {n} is an incomplete step record")
            records.append(obj)
        elif kind == "end" and header is not None:
            end = obj
        else:
            raise LogError(f"malformed log: unexpected {kind!r} record on line {n}")
    if header is None:
        raise LogError("malformed log: missing header")
    if end is None:
        raise LogError("malformed log: missing end marker (truncated?)")
    if end.get("steps") != len(records):
        raise LogError(f"malformed log: end marker says {end.get('steps')} steps, found {len(records)}")
    if header.get("version") != LOG_VERSION:
        raise LogError(f"unsupported log version {header.get('version')!r}")
    return header, records


@dataclass(frozen=True)
class Verdict:
    ok: bool
    step: Optional[int] = None  # first mismatching step
    reason: str = ""

    def __str__(self) -> str:
        return "ok" if self.ok else f"mismatch at step {self.step}: {self.reason}"


def initial_world(header: Mapping[str, Any]) -> WorldState:
    cfg = from_constants(header.get("constants") or {})
    return load_map(header["map"], cfg, seed=int(header["seed"]))


def _parse_actions(raw: Mapping[str, Any]) -> Dict[int, Action]:
    return {int(k): Action.parse(v) for k, v in raw.items()}


def _redraw(world: WorldState, rng_teams: Sequence[int], actions: Mapping[int, Action]) -> Optional[int]:
    """Repeat the random teams' draws on the world rng; the first agent whose recorded move differs."""
    for team in rng_teams:
        for aid in world.team_agents(team):
            drawn = world.rng.choice(legal_actions(percept(world, aid)))
            if actions.get(aid, Action.STAY) is not drawn:
                return aid
    return None


def _recorded_fields_differ(world: WorldState, rec: Mapping[str, Any]) -> Optional[str]:
    want = {
        "agents": [[a, b.pos.x, b.pos.y] for a, b in sorted(world.agents.items())],
        "cows": [[c, p.x, p.y] for c, p in sorted(world.cows.items())],
        "fences": {str(f): v for f, v in sorted(world.fences.items())},
        "scores": {str(t): v for t, v in sorted(world.scores.items())},
    }
    for name, value in want.items():
        if rec.get(name) != value:
            return name
    return None


def replay_verify(path: Path) -> Verdict:
    """Re-simulate from the header; every recorded hash and field must match."""
    header, records = read_log(path)
    world = initial_world(header)
    rng_teams = [int(t) for t in header.get("rng_teams") or ()]
    for rec in records:
        at = rec["step"]
        try:
            actions = _parse_actions(rec["actions"])
            odd = _redraw(world, rng_teams, actions)
            if odd is not None:
                return Verdict(False, at, f"agent {odd} did not make its random draw")
            world, _ = step(world, actions)
        except (ValueError, TypeError, AttributeError, UnknownAgent) as e:
            return Verdict(False, at, f"invalid action record ({e})")
        if world.step != at:
            return Verdict(False, at, f"expected step {world.step}")
        got = state_hash(world)
        if got != rec["hash"]:
            logger.info("replay diverges at step %d: %s != %s", at, got, rec["hash"])
            return Verdict(False, at, "state hash differs")
        name = _recorded_fields_differ(world, rec)
        if name:
            return Verdict(False, at, f"recorded {name} differ")
    return Verdict(True)


def render(path: Path, at: int) -> str:
    """ASCII board after step `at` (0 = initial) with a score line."""
    header, records = read_log(path)
    world = initial_world(header)
    if at != 0:
        rec = next((r for r in records if r["step"] == at), None)
        if rec is None:
            raise LogError(f"log has no step {at} (1..{len(records)})")
        world = world.copy()
        teams = {aid: b.team for aid, b in world.agents.items()}
        world.agents = {a: AgentBody(Position(x, y), teams[a]) for a, x, y in rec["agents"]}
        world.cows = {c: Position(x, y) for c, x, y in rec["cows"]}
        world.fences = {int(f): bool(v) for f, v in rec["fences"].items()}
        world.scores = {int(t): v for t, v in rec["scores"].items()}
        world.step = at
    s = world.scores
    return f"{world.to_ascii()}\nstep {world.step}  team1 {s.get(1, 0)}  team2 {s.get(2, 0)}"
