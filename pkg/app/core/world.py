# details: authoritative grid world: map → percepts → cow moves → one-step transition
from __future__ import annotations
import logging, random, re
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Tuple

from ..utils.config import CFG, get_cfg

logger = logging.getLogger(__name__)


class MapError(ValueError):
    def __init__(self, reason: str, line: int = 0, col: int = 0):
        where = f"line {line}, col {col}: " if line else ""
        super().__init__(f"{where}{reason}")
        self.reason = reason
        self.line = line
        self.col = col


class UnknownAgent(KeyError):
    pass


class Position(NamedTuple):
    x: int
    y: int


def cheb(a: Tuple[int, int], b: Tuple[int, int]) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


class Action(str, Enum):
    STAY = "stay"
    N = "n"
    NE = "ne"
    E = "e"
    SE = "se"
    S = "s"
    SW = "sw"
    W = "w"
    NW = "nw"

    @property
    def delta(self) -> Tuple[int, int]:
        return _DELTAS[self]

    @classmethod
    def toward(cls, a: Position, b: Position) -> "Action":
        d = (_sign(b[0] - a[0]), _sign(b[1] - a[1]))
        return _BY_DELTA[d]

    @classmethod
    def parse(cls, raw: object) -> "Action":
        try:
            return cls(str(raw).strip().lower())
        except ValueError as e:
            raise ValueError(f"unknown action {raw!r}") from e


def _sign(v: int) -> int:
    return (v > 0) - (v < 0)


_DELTAS = {
    Action.STAY: (0, 0),
    Action.N: (0, -1), Action.NE: (1, -1), Action.E: (1, 0), Action.SE: (1, 1),
    Action.S: (0, 1), Action.SW: (-1, 1), Action.W: (-1, 0), Action.NW: (-1, -1),
}
_BY_DELTA = {d: a for a, d in _DELTAS.items()}
MOVES: Tuple[Action, ...] = (Action.N, Action.NE, Action.E, Action.SE, Action.S, Action.SW, Action.W, Action.NW)


def shift(pos: Position, action: Action) -> Position:
    dx, dy = action.delta
    return Position(pos[0] + dx, pos[1] + dy)


class TerrainKind(str, Enum):
    EMPTY = "empty"
    OBSTACLE = "obstacle"
    CORRAL = "corral"
    FENCE = "fence"
    SWITCH = "switch"


@dataclass(frozen=True)
class Terrain:
    kind: TerrainKind
    ref: Optional[int] = None  # team for corral, fence-id for fence/switch

    def code(self) -> str:
        if self.kind is TerrainKind.EMPTY:
            return "."
        if self.kind is TerrainKind.OBSTACLE:
            return "#"
        if self.kind is TerrainKind.CORRAL:
            return str(self.ref)
        return ("F" if self.kind is TerrainKind.FENCE else "S") + str(self.ref)

    @classmethod
    def from_code(cls, code: str) -> "Terrain":
        if code == ".":
            return EMPTY
        if code == "#":
            return OBSTACLE
        if code in {"1", "2"}:
            return cls(TerrainKind.CORRAL, int(code))
        if code[:1] in {"F", "S"} and code[1:].isdigit():
            kind = TerrainKind.FENCE if code[0] == "F" else TerrainKind.SWITCH
            return cls(kind, int(code[1:]))
        raise ValueError(f"bad terrain code {code!r}")


EMPTY = Terrain(TerrainKind.EMPTY)
OBSTACLE = Terrain(TerrainKind.OBSTACLE)


@dataclass(frozen=True)
class CowRules:
    r_cow: int = 5
    w_agent: float = -3
    w_cow: float = 1
    w_wall: float = -1

    @classmethod
    def from_cfg(cls, cfg: CFG) -> "CowRules":
        return cls(cfg.r_cow, cfg.cow_w_agent, cfg.cow_w_cow, cfg.cow_w_wall)


@dataclass(frozen=True)
class AgentBody:
    pos: Position
    team: int


class OccupantKind(str, Enum):
    COW = "cow"
    ALLY = "ally"
    OPPONENT = "opponent"


@dataclass(frozen=True)
class Occupant:
    kind: OccupantKind
    id: int


@dataclass(frozen=True)
class VisibleCell:
    pos: Position
    terrain: Terrain
    occupant: Optional[Occupant] = None


@dataclass(frozen=True)
class Percept:
    agent: int
    pos: Position
    team: int
    step: int
    visible: Tuple[VisibleCell, ...]
    fences: Mapping[int, bool] = field(default_factory=dict)


@dataclass(frozen=True)
class Event:
    kind: str  # move | blocked | fence | capture
    step: int
    subject: int
    pos: Optional[Position] = None
    value: Optional[int] = None  # team for capture, 1/0 for fence open/closed


@dataclass(eq=False)
class WorldState:
    width: int
    height: int
    r_fov: int
    terrain: Tuple[Terrain, ...]  # row-major
    cows: Dict[int, Position]
    agents: Dict[int, AgentBody]
    fences: Dict[int, bool]
    step: int
    scores: Dict[int, int]
    rng: random.Random
    rules: CowRules
    segments: Dict[int, Tuple[Position, ...]]
    switches: Dict[int, Tuple[Position, ...]]
    corrals: Dict[int, Tuple[Position, ...]]
    source: str = ""
    # derived from terrain, filled on first use
    obstacles: Optional[Tuple[Position, ...]] = field(default=None, repr=False)
    views: Tuple[VisibleCell, ...] = field(default=(), repr=False)

    def in_bounds(self, pos: Tuple[int, int]) -> bool:
        return 0 <= pos[0] < self.width and 0 <= pos[1] < self.height

    def terrain_at(self, pos: Tuple[int, int]) -> Terrain:
        return self.terrain[pos[1] * self.width + pos[0]]

    def blocked(self, pos: Tuple[int, int]) -> bool:
        t = self.terrain_at(pos)
        if t.kind is TerrainKind.OBSTACLE:
            return True
        return t.kind is TerrainKind.FENCE and not self.fences[t.ref]

    def occupants(self) -> Dict[Position, Tuple[str, int]]:
        occ: Dict[Position, Tuple[str, int]] = {p: ("cow", cid) for cid, p in self.cows.items()}
        for aid, body in self.agents.items():
            occ[body.pos] = ("agent", aid)
        return occ

    def team_agents(self, team: int) -> List[int]:
        return sorted(a for a, b in self.agents.items() if b.team == team)

    def copy(self) -> "WorldState":
        rng = random.Random()
        rng.setstate(self.rng.getstate())
        return replace(
            self,
            cows=dict(self.cows),
            agents=dict(self.agents),
            fences=dict(self.fences),
            scores=dict(self.scores),
            rng=rng,
        )

    def snapshot(self) -> tuple:
        return (
            self.width, self.height, self.r_fov, self.terrain,
            tuple(sorted(self.cows.items())),
            tuple(sorted((a, b.pos, b.team) for a, b in self.agents.items())),
            tuple(sorted(self.fences.items())),
            self.step,
            tuple(sorted(self.scores.items())),
            self.rng.getstate(),
        )

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorldState) and self.snapshot() == other.snapshot()

    def to_ascii(self) -> str:
        rows = []
        occ = self.occupants()
        for y in range(self.height):
            row = []
            for x in range(self.width):
                p = Position(x, y)
                o = occ.get(p)
                if o and o[0] == "cow":
                    row.append("c")
                elif o:
                    row.append("A" if self.agents[o[1]].team == 1 else "B")
                else:
                    t = self.terrain_at(p)
                    if t.kind is TerrainKind.FENCE:
                        row.append("f" if self.fences[t.ref] else "F")
                    elif t.kind is TerrainKind.SWITCH:
                        row.append("S")
                    else:
                        row.append(t.code())
            rows.append("".join(row))
        return "\n".join(rows)


_MOVE_DELTAS = tuple(_DELTAS[a] for a in MOVES)


def neighbors8(pos: Position, width: int, height: int) -> Iterator[Position]:
    for dx, dy in _MOVE_DELTAS:
        x, y = pos[0] + dx, pos[1] + dy
        if 0 <= x < width and 0 <= y < height:
            yield Position(x, y)


# ---------------------------------------------------------------- map loading

_OVERLAY_RX = re.compile(r"^@\s+([cAB])\s+(\d+)\s+(\d+)\s*$")
_TERRAIN_CHARS = {".": EMPTY, "#": OBSTACLE, "c": EMPTY, "A": EMPTY, "B": EMPTY}


def _fence_components(cells: Dict[Position, Tuple[int, int]]) -> List[List[Position]]:
    seen = set()
    comps: List[List[Position]] = []
    for start in sorted(cells, key=lambda p: (p.y, p.x)):
        if start in seen:
            continue
        comp, q = [], deque([start])
        seen.add(start)
        while q:
            p = q.popleft()
            comp.append(p)
            for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                n = Position(p.x + dx, p.y + dy)
                if n in cells and n not in seen:
                    seen.add(n)
                    q.append(n)
        comps.append(sorted(comp, key=lambda p: (p.y, p.x)))
    return comps


def load_map(text: str, cfg: Optional[CFG] = None, seed: int = 0) -> WorldState:
    """Parse the ASCII map format into a step-0 world (fences closed, scores 0)."""
    cfg = cfg or get_cfg()
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapError("empty map", 1, 1)
    head = lines[0].split()
    if len(head) != 3 or not all(h.isdigit() for h in head):
        raise MapError("header must be 'width height R_fov'", 1, 1)
    width, height, r_fov = (int(h) for h in head)
    if width < 1 or height < 1:
        raise MapError("dimension mismatch: empty grid", 1, 1)
    rows = lines[1:1 + height]
    if len(rows) < height:
        raise MapError(f"dimension mismatch: expected {height} rows, got {len(rows)}", len(lines) + 1, 1)

    terrain: List[Terrain] = []
    entities: List[Tuple[Position, str, int, int]] = []
    fence_cells: Dict[Position, Tuple[int, int]] = {}
    switch_cells: Dict[Position, Tuple[int, int]] = {}
    for y, row in enumerate(rows):
        ln = y + 2
        if len(row) != width:
            raise MapError(f"dimension mismatch: expected {width} columns, got {len(row)}", ln, min(len(row), width) + 1)
        for x, ch in enumerate(row):
            p = Position(x, y)
            if ch in _TERRAIN_CHARS:
                terrain.append(_TERRAIN_CHARS[ch])
                if ch in "cAB":
                    entities.append((p, ch, ln, x + 1))
            elif ch in "12":
                terrain.append(Terrain(TerrainKind.CORRAL, int(ch)))
            elif ch == "F":
                terrain.append(EMPTY)  # patched once components are known
                fence_cells[p] = (ln, x + 1)
            elif ch == "S":
                terrain.append(EMPTY)
                switch_cells[p] = (ln, x + 1)
            else:
                raise MapError(f"unknown character {ch!r}", ln, x + 1)

    # overlay section
    for i, raw in enumerate(lines[1 + height:], start=height + 2):
        if not raw.strip():
            continue
        m = _OVERLAY_RX.match(raw)
        if not m:
            raise MapError(f"unknown character {raw.strip()[:1]!r} in overlay", i, 1)
        x, y = int(m.group(2)), int(m.group(3))
        if not (0 <= x < width and 0 <= y < height):
            raise MapError("overlay entity out of bounds", i, 1)
        entities.append((Position(x, y), m.group(1), i, 1))

    # fences and their switches
    comps = _fence_components(fence_cells)
    segments: Dict[int, Tuple[Position, ...]] = {}
    for fid, comp in enumerate(comps):
        segments[fid] = tuple(comp)
        for p in comp:
            terrain[p.y * width + p.x] = Terrain(TerrainKind.FENCE, fid)
    attached: Dict[int, List[Position]] = {fid: [] for fid in segments}
    for s in sorted(switch_cells, key=lambda p: (p.y, p.x)):
        ln, col = switch_cells[s]
        dists = sorted((min(cheb(s, p) for p in comp), fid) for fid, comp in segments.items())
        if not dists or dists[0][0] > cfg.switch_reach:
            raise MapError("switch not attached to any fence", ln, col)
        if len(dists) > 1 and dists[1][0] == dists[0][0]:
            raise MapError("switch ambiguous between fences", ln, col)
        fid = dists[0][1]
        attached[fid].append(s)
        terrain[s.y * width + s.x] = Terrain(TerrainKind.SWITCH, fid)
    for fid, sw in attached.items():
        if len(sw) != 2:
            ln, col = fence_cells[segments[fid][0]]
            raise MapError(f"fence component with {len(sw)} switches (need 2)", ln, col)

    # entities
    taken: Dict[Position, bool] = {}
    for p, ch, ln, col in entities:
        t = terrain[p.y * width + p.x]
        if t.kind is TerrainKind.OBSTACLE:
            raise MapError("entity on obstacle", ln, col)
        if t.kind is TerrainKind.FENCE:
            raise MapError("entity on fence", ln, col)
        if p in taken:
            raise MapError("cell occupied", ln, col)
        taken[p] = True
    ordered = sorted(entities, key=lambda e: (e[0].y, e[0].x))
    cows = {i: e[0] for i, e in enumerate(e for e in ordered if e[1] == "c")}
    agents = {
        i: AgentBody(e[0], 1 if e[1] == "A" else 2)
        for i, e in enumerate(e for e in ordered if e[1] in "AB")
    }

    corrals: Dict[int, List[Position]] = {1: [], 2: []}
    for i, t in enumerate(terrain):
        if t.kind is TerrainKind.CORRAL:
            corrals[t.ref].append(Position(i % width, i // width))

    world = WorldState(
        width=width,
        height=height,
        r_fov=cfg.r_fov if cfg.r_fov is not None else r_fov,
        terrain=tuple(terrain),
        cows=cows,
        agents=agents,
        fences={fid: False for fid in segments},
        step=0,
        scores={1: 0, 2: 0},
        rng=random.Random(seed),
        rules=CowRules.from_cfg(cfg),
        segments=segments,
        switches={fid: tuple(sw) for fid, sw in attached.items()},
        corrals={t: tuple(ps) for t, ps in corrals.items()},
        source=text,
    )
    logger.debug("map %dx%d loaded: %d cows, %d agents, %d fences", width, height, len(cows), len(agents), len(segments))
    return world


# ---------------------------------------------------------------- perception

def _views(world: WorldState) -> Tuple[VisibleCell, ...]:
    """One unoccupied VisibleCell per map cell, built once per terrain."""
    if len(world.views) != len(world.terrain):
        w = world.width
        world.views = tuple(VisibleCell(Position(i % w, i // w), t) for i, t in enumerate(world.terrain))
    return world.views


def percept(world: WorldState, agent: int) -> Percept:
    body = world.agents.get(agent)
    if body is None:
        raise UnknownAgent(agent)
    r = world.r_fov
    px, py = body.pos
    x0, x1 = max(0, px - r), min(world.width - 1, px + r)
    y0, y1 = max(0, py - r), min(world.height - 1, py + r)
    views = _views(world)
    cells: List[VisibleCell] = []
    for y in range(y0, y1 + 1):
        cells.extend(views[y * world.width + x0:y * world.width + x1 + 1])
    span = x1 - x0 + 1

    def place(pos: Position, who: Occupant) -> None:
        i = (pos[1] - y0) * span + pos[0] - x0
        cells[i] = VisibleCell(cells[i].pos, cells[i].terrain, who)

    for cid, pos in world.cows.items():
        if x0 <= pos[0] <= x1 and y0 <= pos[1] <= y1:
            place(pos, Occupant(OccupantKind.COW, cid))
    for aid, other in world.agents.items():
        if x0 <= other.pos[0] <= x1 and y0 <= other.pos[1] <= y1:
            kind = OccupantKind.ALLY if other.team == body.team else OccupantKind.OPPONENT
            place(other.pos, Occupant(kind, aid))
    fences = {
        fid: world.fences[fid]
        for fid, seg in world.segments.items()
        if any(x0 <= p[0] <= x1 and y0 <= p[1] <= y1 for p in seg)
    }
    return Percept(agent, body.pos, body.team, world.step, tuple(cells), fences)


def legal_actions(p: Percept) -> List[Action]:
    """Stay plus every move whose target cell the percept shows as enterable."""
    px, py = p.pos
    near = {vc.pos: vc for vc in p.visible if abs(vc.pos[0] - px) <= 1 and abs(vc.pos[1] - py) <= 1}
    out = [Action.STAY]
    for a in MOVES:
        vc = near.get(shift(p.pos, a))
        if vc is None or vc.occupant is not None:
            continue
        t = vc.terrain
        if t.kind is TerrainKind.OBSTACLE:
            continue
        if t.kind is TerrainKind.FENCE and not p.fences.get(t.ref, False):
            continue
        out.append(a)
    return out


# ---------------------------------------------------------------- cow dynamics

def _blocked_cells(world: WorldState) -> List[Position]:
    if world.obstacles is None:
        world.obstacles = tuple(
            Position(i % world.width, i // world.width)
            for i, t in enumerate(world.terrain) if t.kind is TerrainKind.OBSTACLE
        )
    closed = [p for fid, seg in world.segments.items() if not world.fences[fid] for p in seg]
    return list(world.obstacles) + closed


Pull = Tuple[List[Tuple[int, int, float]], List[Position]]


def _pull(world: WorldState, cow: int, blocked: List[Position]) -> Pull:
    """Weighted entities within flee range of a cow, and blocked cells in that range."""
    rules = world.rules
    r = rules.r_cow
    hx, hy = world.cows[cow]
    near = [
        (b.pos[0], b.pos[1], rules.w_agent)
        for b in world.agents.values()
        if abs(b.pos[0] - hx) <= r and abs(b.pos[1] - hy) <= r
    ]
    near += [
        (p[0], p[1], rules.w_cow)
        for cid, p in world.cows.items()
        if cid != cow and abs(p[0] - hx) <= r and abs(p[1] - hy) <= r
    ]
    walls = [q for q in blocked if abs(q[0] - hx) <= r and abs(q[1] - hy) <= r]
    return near, walls


def _score(pull: Pull, candidate: Tuple[int, int], rules: CowRules) -> float:
    near, walls = pull
    reach = rules.r_cow + 1
    cx, cy = candidate
    score = 0
    for x, y, weight in near:
        score += weight * (reach - max(abs(x - cx), abs(y - cy)))
    touching = sum(1 for q in walls if max(abs(q[0] - cx), abs(q[1] - cy)) == 1)
    if touching:
        score += rules.w_wall * (reach - 1) * touching
    return score


def cow_desirability(world: WorldState, cow: int, candidate: Position) -> float:
    return _score(_pull(world, cow, _blocked_cells(world)), candidate, world.rules)


def _cow_candidates(world: WorldState, pos: Position, occupied: set) -> List[Position]:
    out = [pos]
    for n in neighbors8(pos, world.width, world.height):
        if not world.blocked(n) and n not in occupied:
            out.append(n)
    return out


# ---------------------------------------------------------------- transition

def step(world: WorldState, actions: Mapping[int, Action]) -> Tuple[WorldState, List[Event]]:
    for aid in actions:
        if aid not in world.agents:
            raise UnknownAgent(aid)
    w = world.copy()
    t = w.step
    events: List[Event] = []
    occupied = set(w.cows.values()) | {b.pos for b in w.agents.values()}

    # 1) agents, ascending id
    for aid in sorted(w.agents):
        act = actions.get(aid, Action.STAY)
        if act is Action.STAY:
            continue
        body = w.agents[aid]
        dst = shift(body.pos, act)
        if not w.in_bounds(dst) or w.blocked(dst) or dst in occupied:
            events.append(Event("blocked", t, aid, body.pos))
            continue
        occupied.discard(body.pos)
        occupied.add(dst)
        w.agents[aid] = AgentBody(dst, body.team)
        events.append(Event("move", t, aid, dst))

    # 2) fences follow switch adjacency; an occupied segment holds a fence open
    agent_cells = [b.pos for b in w.agents.values()]
    for fid in sorted(w.fences):
        want = any(cheb(a, s) <= 1 for s in w.switches[fid] for a in agent_cells)
        if not want and w.fences[fid]:
            want = any(p in occupied for p in w.segments[fid])
        if want != w.fences[fid]:
            w.fences[fid] = want
            events.append(Event("fence", t, fid, value=int(want)))
            logger.debug("step %d: fence %d %s", t, fid, "opens" if want else "closes")

    # 3) cows, ascending id; each sees the moves of lower ids
    blocked = _blocked_cells(w)
    for cid in sorted(w.cows):
        pos = w.cows[cid]
        cands = _cow_candidates(w, pos, occupied)
        pull = _pull(w, cid, blocked)
        if pull[0] or pull[1]:
            scores = [_score(pull, c, w.rules) for c in cands]
            best = max(scores)
            top = [c for c, s in zip(cands, scores) if s == best]
        else:
            top = cands
        dst = top[0] if len(top) == 1 else w.rng.choice(top)
        if dst != pos:
            occupied.discard(pos)
            occupied.add(dst)
            w.cows[cid] = dst

    # 4) captures
    for cid in sorted(w.cows):
        tr = w.terrain_at(w.cows[cid])
        if tr.kind is TerrainKind.CORRAL:
            pos = w.cows.pop(cid)
            w.scores[tr.ref] = w.scores.get(tr.ref, 0) + 1
            events.append(Event("capture", t, cid, pos, tr.ref))
            logger.debug("step %d: cow %d captured by team %d", t, cid, tr.ref)

    # 5)
    w.step = t + 1
    return w, events
