# details: match driver: controllers, turn loop, termination, result + optional replay log
from __future__ import annotations
import json, logging, time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Protocol, Tuple

from ..utils.config import CFG, ConfigError, get_cfg, with_overrides
from .replay import LogWriter
from .world import Action, Percept, WorldState, load_map, percept, step

logger = logging.getLogger(__name__)

BUILTINS = ("herders", "random", "idle")


class Controller(Protocol):
    def act(self, step: int, percepts: Mapping[int, Percept]) -> Mapping[int, Action]: ...

    def close(self) -> None: ...


def parse_controller_spec(spec: str) -> Tuple[str, Optional[int]]:
    """'builtin:herders' → ('herders', None); 'net:7001' → ('net', 7001)."""
    kind, _, arg = (spec or "").strip().partition(":")
    if kind == "builtin" and arg in BUILTINS:
        return arg, None
    if kind == "net" and arg.isdigit() and int(arg) <= 65535:
        return "net", int(arg)
    raise ConfigError(f"bad controller spec {spec!r} (builtin:herders|random|idle or net:PORT)")


@dataclass
class MatchConfig:
    map_path: str
    steps: int = 500
    seed: int = 0
    team1: str = "builtin:herders"
    team2: str = "builtin:idle"
    overrides: Dict[str, str] = field(default_factory=dict)
    log_path: Optional[Path] = None

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        parse_controller_spec(self.team1)
        parse_controller_spec(self.team2)

    def sim_cfg(self) -> CFG:
        return with_overrides(get_cfg(), self.overrides)


def resolve_map(name: str, cfg: Optional[CFG] = None) -> Path:
    """A file path, or the name of a bundled map (with or without .txt)."""
    cfg = cfg or get_cfg()
    p = Path(name)
    if p.is_file():
        return p
    for cand in (cfg.maps_dir / name, cfg.maps_dir / f"{name}.txt"):
        if cand.is_file():
            return cand
    raise ConfigError(f"map not found: {name}")


def load_world(mc: MatchConfig, cfg: CFG) -> WorldState:
    text = resolve_map(mc.map_path, cfg).read_text(encoding="utf-8")
    return load_map(text, cfg, seed=mc.seed)


def make_controller(spec: str, team: int, world: WorldState, cfg: CFG) -> Controller:
    from ..services.herder import HerderTeam
    from ..services.opponents import IdleTeam, RandomTeam

    kind, _ = parse_controller_spec(spec)
    ids = world.team_agents(team)
    if kind == "herders":
        return HerderTeam(team, ids, world.width, world.height, world.r_fov, cfg)
    if kind == "random":
        return RandomTeam(team, ids)
    if kind == "idle":
        return IdleTeam(team, ids)
    raise ConfigError(f"team {team}: {spec!r} needs a network server (use netmatch.serve)")


@dataclass
class Capture:
    step: int
    cow: int
    team: int


@dataclass
class MatchResult:
    scores: Dict[int, int]
    steps: int
    captures: List[Capture]
    crashed: Dict[int, str]
    log_path: Optional[str]
    took_ms: int

    def to_json(self) -> str:
        d = asdict(self)
        d["scores"] = {str(k): v for k, v in self.scores.items()}
        d["crashed"] = {str(k): v for k, v in self.crashed.items()}
        return json.dumps(d, ensure_ascii=False, separators=(",", ":"))


def _sanitize(raw: Mapping[int, object], ids: List[int]) -> Dict[int, Action]:
    out = {}
    for aid in ids:
        a = raw.get(aid, Action.STAY)
        if not isinstance(a, Action):
            try:
                a = Action.parse(a)
            except ValueError:
                a = Action.STAY
        out[aid] = a
    return out


def run_match(mc: MatchConfig, controllers: Optional[Mapping[int, Controller]] = None) -> MatchResult:
    """Play one match. Teams without a supplied controller get the builtin named in mc."""
    t0 = time.time()
    mc.validate()
    cfg = mc.sim_cfg()
    world = load_world(mc, cfg)
    ctrls: Dict[int, Controller] = dict(controllers or {})
    own = []  # supplied controllers stay open for the caller
    for team, spec in ((1, mc.team1), (2, mc.team2)):
        if team not in ctrls:
            ctrls[team] = make_controller(spec, team, world, cfg)
            own.append(ctrls[team])

    # teams whose moves come out of the world rng; a replay redoes their draws
    rng_teams = [team for team in (1, 2) if getattr(ctrls[team], "draws_from_world", False)]
    writer = LogWriter(mc.log_path) if mc.log_path else None
    if writer:
        writer.header(world, mc.seed, mc.steps, cfg, rng_teams)
    had_cows = bool(world.cows)
    crashed: Dict[int, str] = {}
    captures: List[Capture] = []
    done = 0
    logger.info("match start: %s, %d steps, seed %d, %s vs %s", mc.map_path, mc.steps, mc.seed, mc.team1, mc.team2)
    try:
        for _ in range(mc.steps):
            if had_cows and not world.cows:
                logger.info("all cows captured after %d steps", done)
                break
            actions: Dict[int, Action] = {}
            for team in (1, 2):
                ids = world.team_agents(team)
                if not ids:
                    continue
                got: Mapping[int, object] = {}
                if team not in crashed:
                    percepts = {aid: percept(world, aid) for aid in ids}
                    try:
                        if team in rng_teams:
                            ctrls[team].bind(world.rng)
                        got = ctrls[team].act(world.step, percepts)
                    except Exception as e:
                        crashed[team] = f"{type(e).__name__}: {e}"
                        logger.exception("team %d controller crashed at step %d; staying from now on", team, world.step)
                        got = {}
                actions.update(_sanitize(got, ids))
            world, events = step(world, actions)
            done += 1
            for ev in events:
                if ev.kind == "capture":
                    captures.append(Capture(ev.step, ev.subject, ev.value))
            if writer:
                writer.record(world, actions)
        if writer:
            writer.end(done)
    finally:
        if writer:
            writer.close()
        for c in own:
            try:
                c.close()
            except Exception:
                logger.warning("controller close failed", exc_info=True)

    res = MatchResult(
        scores=dict(world.scores),
        steps=done,
        captures=captures,
        crashed=crashed,
        log_path=str(mc.log_path) if mc.log_path else None,
        took_ms=int((time.time() - t0) * 1000),
    )
    logger.info("match over: %s after %d steps", res.scores, done)
    return res
