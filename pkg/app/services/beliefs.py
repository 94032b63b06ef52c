# details: per-agent belief base + team vocabulary (facts, targets, messages); percept integration, newest-wins merge
from __future__ import annotations
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.world import OccupantKind, Percept, Position, Terrain, TerrainKind

logger = logging.getLogger(__name__)

UNKNOWN = -1
_KIND_CODE = {
    TerrainKind.EMPTY: 0,
    TerrainKind.OBSTACLE: 1,
    TerrainKind.CORRAL: 2,
    TerrainKind.FENCE: 3,
    TerrainKind.SWITCH: 4,
}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


@dataclass(frozen=True)
class Sighting:
    pos: Optional[Position]  # None: evicted, no longer believed
    step: int


@dataclass(frozen=True)
class FenceBelief:
    open: bool
    step: int


class FactKind(str, Enum):
    CELL = "cell"
    COW = "cow"
    OPPONENT = "opponent"
    ALLY = "ally"
    FENCE = "fence"


@dataclass(frozen=True)
class Fact:
    kind: FactKind
    key: object  # Position for cells, id for entities and fences
    value: object  # Terrain | Position | None | bool
    step: int


class TargetKind(str, Enum):
    EXPLORATION = "exploration"
    FORMATION = "formation"
    SWITCH = "switch"
    IDLE = "idle"  # a post to hold while there is nothing to do


@dataclass(frozen=True)
class Target:
    kind: TargetKind
    pos: Position
    issued_at: int
    ref: Optional[int] = None  # cluster id or fence id
    anchor: Optional[Tuple[float, float]] = None  # cluster centroid or switch cell

    @classmethod
    def exploration(cls, pos: Position, step: int) -> "Target":
        return cls(TargetKind.EXPLORATION, Position(*pos), step)

    @classmethod
    def formation(cls, pos: Position, cluster_id: int, centroid: Tuple[float, float], step: int) -> "Target":
        return cls(TargetKind.FORMATION, Position(*pos), step, cluster_id, centroid)

    @classmethod
    def switch(cls, pos: Position, fence_id: int, switch_cell: Position, step: int) -> "Target":
        return cls(TargetKind.SWITCH, Position(*pos), step, fence_id, (float(switch_cell[0]), float(switch_cell[1])))

    @classmethod
    def idle(cls, pos: Position, step: int) -> "Target":
        return cls(TargetKind.IDLE, Position(*pos), step)


class MessageKind(str, Enum):
    BELIEF_SHARE = "belief_share"
    TARGET_REQUEST = "target_request"
    TARGET_ASSIGN = "target_assign"


_KIND_ORDER = {MessageKind.BELIEF_SHARE: 0, MessageKind.TARGET_REQUEST: 1, MessageKind.TARGET_ASSIGN: 2}


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    sender: int
    facts: Tuple[Fact, ...] = ()
    agent: Optional[int] = None
    position: Optional[Position] = None
    target: Optional[Target] = None

    def sort_key(self) -> Tuple[int, int, int]:
        return (self.sender, _KIND_ORDER[self.kind], -1 if self.agent is None else self.agent)

    @classmethod
    def share(cls, sender: int, facts: Sequence[Fact]) -> "Message":
        return cls(MessageKind.BELIEF_SHARE, sender, facts=tuple(facts))

    @classmethod
    def request(cls, sender: int, pos: Position) -> "Message":
        return cls(MessageKind.TARGET_REQUEST, sender, agent=sender, position=Position(*pos))

    @classmethod
    def assign(cls, sender: int, agent: int, target: Target) -> "Message":
        return cls(MessageKind.TARGET_ASSIGN, sender, agent=agent, target=target)


@dataclass(eq=False)
class BeliefBase:
    width: int
    height: int
    r_fov: int
    kinds: np.ndarray  # int8 (h, w), UNKNOWN where never seen
    refs: np.ndarray  # int16 (h, w), team / fence id
    last_seen: np.ndarray  # int32 (h, w), -1 where never seen
    self_id: int
    team: int
    self_pos: Position
    step: int = 0
    cows: Dict[int, Sighting] = field(default_factory=dict)
    opponents: Dict[int, Sighting] = field(default_factory=dict)
    allies: Dict[int, Sighting] = field(default_factory=dict)
    fences: Dict[int, FenceBelief] = field(default_factory=dict)

    OBSTACLE = _KIND_CODE[TerrainKind.OBSTACLE]
    CORRAL = _KIND_CODE[TerrainKind.CORRAL]
    FENCE = _KIND_CODE[TerrainKind.FENCE]
    SWITCH = _KIND_CODE[TerrainKind.SWITCH]

    @classmethod
    def blank(cls, width: int, height: int, self_id: int, team: int, r_fov: int, self_pos: Position = Position(0, 0)) -> "BeliefBase":
        return cls(
            width=width,
            height=height,
            r_fov=r_fov,
            kinds=np.full((height, width), UNKNOWN, dtype=np.int8),
            refs=np.zeros((height, width), dtype=np.int16),
            last_seen=np.full((height, width), -1, dtype=np.int32),
            self_id=self_id,
            team=team,
            self_pos=Position(*self_pos),
        )

    def copy(self) -> "BeliefBase":
        return BeliefBase(
            self.width, self.height, self.r_fov,
            self.kinds.copy(), self.refs.copy(), self.last_seen.copy(),
            self.self_id, self.team, self.self_pos, self.step,
            dict(self.cows), dict(self.opponents), dict(self.allies), dict(self.fences),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BeliefBase):
            return False
        return (
            self.same_knowledge(other)
            and np.array_equal(self.last_seen, other.last_seen)
            and (self.self_id, self.team, self.self_pos, self.step) == (other.self_id, other.team, other.self_pos, other.step)
            and self.cows == other.cows
            and self.opponents == other.opponents
            and self.allies == other.allies
            and self.fences == other.fences
        )

    def same_knowledge(self, other: "BeliefBase") -> bool:
        return np.array_equal(self.kinds, other.kinds) and np.array_equal(self.refs, other.refs)

    # -- cells

    def in_bounds(self, pos: Tuple[int, int]) -> bool:
        return 0 <= pos[0] < self.width and 0 <= pos[1] < self.height

    def known(self, pos: Tuple[int, int]) -> bool:
        return bool(self.kinds[pos[1], pos[0]] != UNKNOWN)

    def terrain_at(self, pos: Tuple[int, int]) -> Optional[Terrain]:
        code = int(self.kinds[pos[1], pos[0]])
        if code == UNKNOWN:
            return None
        kind = _CODE_KIND[code]
        ref = int(self.refs[pos[1], pos[0]]) if kind not in {TerrainKind.EMPTY, TerrainKind.OBSTACLE} else None
        return Terrain(kind, ref)

    def fence_open(self, fid: int) -> bool:
        fb = self.fences.get(fid)
        return bool(fb and fb.open)

    def closed_fence_mask(self) -> np.ndarray:
        mask = self.kinds == self.FENCE
        open_ids = [fid for fid, fb in self.fences.items() if fb.open]
        if open_ids and mask.any():
            mask &= ~np.isin(self.refs, open_ids)
        return mask

    def passable(self, pos: Tuple[int, int]) -> bool:
        """Believed passable: in bounds, not an obstacle, not a closed fence (unknown counts)."""
        if not self.in_bounds(pos):
            return False
        code = self.kinds[pos[1], pos[0]]
        if code == self.OBSTACLE:
            return False
        return not (code == self.FENCE and not self.fence_open(int(self.refs[pos[1], pos[0]])))

    def walkable(self, pos: Tuple[int, int]) -> bool:
        """In bounds and not an obstacle; fences count whatever their state."""
        return self.in_bounds(pos) and self.kinds[pos[1], pos[0]] != self.OBSTACLE

    def _cells(self, mask: np.ndarray) -> List[Position]:
        ys, xs = np.nonzero(mask)
        return [Position(int(x), int(y)) for y, x in zip(ys, xs)]

    def corral_cells(self, team: Optional[int] = None) -> List[Position]:
        t = self.team if team is None else team
        return self._cells((self.kinds == self.CORRAL) & (self.refs == t))

    def known_fences(self) -> List[int]:
        return sorted({int(r) for r in self.refs[self.kinds == self.FENCE]})

    def fence_segments(self, fid: int) -> List[Position]:
        return self._cells((self.kinds == self.FENCE) & (self.refs == fid))

    def switch_cells(self, fid: int) -> List[Position]:
        return self._cells((self.kinds == self.SWITCH) & (self.refs == fid))

    # -- entities

    def believed_cows(self) -> List[Position]:
        return [s.pos for _, s in sorted(self.cows.items()) if s.pos is not None]

    def cow_positions(self) -> Dict[int, Position]:
        return {cid: s.pos for cid, s in self.cows.items() if s.pos is not None}

    def believed_opponents(self) -> List[Position]:
        return [s.pos for _, s in sorted(self.opponents.items()) if s.pos is not None]

    def ally_positions(self) -> Dict[int, Position]:
        return {aid: s.pos for aid, s in self.allies.items() if s.pos is not None}

    def fresh_blockers(self) -> List[Position]:
        """Cells holding a cow or another agent seen this very step."""
        out = [s.pos for aid, s in self.allies.items() if aid != self.self_id and s.pos is not None and s.step == self.step]
        out += [s.pos for s in self.opponents.values() if s.pos is not None and s.step == self.step]
        out += [s.pos for s in self.cows.values() if s.pos is not None and s.step == self.step]
        return out

    def terrain_key(self) -> Tuple[bytes, bytes, Tuple[int, ...]]:
        """Changes whenever believed terrain or a believed fence state does."""
        return self.kinds.tobytes(), self.refs.tobytes(), tuple(sorted(f for f, fb in self.fences.items() if fb.open))


# ---------------------------------------------------------------- integration

def _entity_map(b: BeliefBase, kind: FactKind) -> Dict[int, Sighting]:
    return {FactKind.COW: b.cows, FactKind.OPPONENT: b.opponents, FactKind.ALLY: b.allies}[kind]


_OCC_FACT = {
    OccupantKind.COW: FactKind.COW,
    OccupantKind.ALLY: FactKind.ALLY,
    OccupantKind.OPPONENT: FactKind.OPPONENT,
}


def _rectangle(b: BeliefBase, p: Percept) -> Optional[Tuple[int, int, int, int]]:
    """The window bounds when the percept is the full row-major square around its agent."""
    r = b.r_fov
    x0, x1 = max(0, p.pos[0] - r), min(b.width - 1, p.pos[0] + r)
    y0, y1 = max(0, p.pos[1] - r), min(b.height - 1, p.pos[1] + r)
    vis = p.visible
    if len(vis) != (x1 - x0 + 1) * (y1 - y0 + 1) or vis[0].pos != (x0, y0) or vis[-1].pos != (x1, y1):
        return None
    return x0, y0, x1, y1


def _integrate_cells(b: BeliefBase, p: Percept, box: Optional[Tuple[int, int, int, int]], facts: List[Fact]) -> None:
    if box is None:
        for vc in p.visible:
            x, y = vc.pos
            code = _KIND_CODE[vc.terrain.kind]
            ref = vc.terrain.ref or 0
            if b.kinds[y, x] != code or b.refs[y, x] != ref:
                b.kinds[y, x] = code
                b.refs[y, x] = ref
                facts.append(Fact(FactKind.CELL, Position(x, y), vc.terrain, p.step))
            b.last_seen[y, x] = p.step
        return
    x0, y0, x1, y1 = box
    h, w = y1 - y0 + 1, x1 - x0 + 1
    vis = p.visible
    codes = np.fromiter((_KIND_CODE[vc.terrain.kind] for vc in vis), dtype=b.kinds.dtype, count=len(vis)).reshape(h, w)
    refs = np.fromiter((vc.terrain.ref or 0 for vc in vis), dtype=b.refs.dtype, count=len(vis)).reshape(h, w)
    kinds_win = b.kinds[y0:y1 + 1, x0:x1 + 1]
    refs_win = b.refs[y0:y1 + 1, x0:x1 + 1]
    changed = (kinds_win != codes) | (refs_win != refs)
    if changed.any():
        for r, c in zip(*np.nonzero(changed)):
            vc = vis[int(r) * w + int(c)]
            facts.append(Fact(FactKind.CELL, Position(*vc.pos), vc.terrain, p.step))
        kinds_win[changed] = codes[changed]
        refs_win[changed] = refs[changed]
    b.last_seen[y0:y1 + 1, x0:x1 + 1] = p.step


def integrate_percept(beliefs: BeliefBase, p: Percept) -> Tuple[BeliefBase, List[Fact]]:
    """Fold one percept in; returns the updated copy and exactly the facts that changed."""
    if p.step < beliefs.step:
        return beliefs, []
    b = beliefs.copy()
    b.step = p.step
    b.self_pos = Position(*p.pos)
    facts: List[Fact] = []
    box = _rectangle(b, p)
    _integrate_cells(b, p, box, facts)
    seen: Dict[FactKind, Dict[int, Position]] = {FactKind.COW: {}, FactKind.OPPONENT: {}, FactKind.ALLY: {}}
    for vc in p.visible:
        if vc.occupant is not None:
            seen[_OCC_FACT[vc.occupant.kind]][vc.occupant.id] = Position(*vc.pos)
    seen[FactKind.ALLY][p.agent] = Position(*p.pos)
    window = {vc.pos for vc in p.visible} if box is None else set()

    def in_window(pos: Position) -> bool:
        if box is None:
            return pos in window
        return box[0] <= pos[0] <= box[2] and box[1] <= pos[1] <= box[3]

    for kind, found in seen.items():
        book = _entity_map(b, kind)
        for eid, pos in sorted(found.items()):
            old = book.get(eid)
            if old is None or old.pos != pos:
                facts.append(Fact(kind, eid, pos, p.step))
            book[eid] = Sighting(pos, p.step)
        if kind is FactKind.ALLY:
            continue
        # stale-belief eviction: believed inside the window, not seen there now
        for eid, s in sorted(book.items()):
            if s.pos is not None and in_window(s.pos) and eid not in found:
                book[eid] = Sighting(None, p.step)
                facts.append(Fact(kind, eid, None, p.step))

    for fid, is_open in sorted(p.fences.items()):
        old = b.fences.get(fid)
        if old is None or old.open != is_open:
            facts.append(Fact(FactKind.FENCE, fid, bool(is_open), p.step))
        b.fences[fid] = FenceBelief(bool(is_open), p.step)
    return b, facts


# ---------------------------------------------------------------- merging

def _rank(value: object) -> tuple:
    # total order on values observed at the same step: sightings beat evictions, open beats closed
    if value is None:
        return (0,)
    if isinstance(value, bool):
        return (1, int(value))
    return (1, value[1], value[0])


def _merge(b: BeliefBase, f: Fact) -> None:
    if f.kind is FactKind.CELL:
        x, y = f.key
        if b.kinds[y, x] == UNKNOWN or f.step > b.last_seen[y, x]:
            b.kinds[y, x] = _KIND_CODE[f.value.kind]
            b.refs[y, x] = f.value.ref or 0
        b.last_seen[y, x] = max(int(b.last_seen[y, x]), f.step)
        return
    if f.kind is FactKind.FENCE:
        old = b.fences.get(f.key)
        if old is None or (f.step, _rank(bool(f.value))) > (old.step, _rank(old.open)):
            b.fences[f.key] = FenceBelief(bool(f.value), f.step)
        return
    book = _entity_map(b, f.kind)
    old = book.get(f.key)
    if old is None or (f.step, _rank(f.value)) > (old.step, _rank(old.pos)):
        book[f.key] = Sighting(f.value, f.step)


def apply_messages(beliefs: BeliefBase, msgs: Iterable[Message]) -> BeliefBase:
    """Merge teammates' BeliefShare facts, newest step wins (commutative, idempotent)."""
    shares = [m for m in msgs if m.kind is MessageKind.BELIEF_SHARE]
    if not shares:
        return beliefs
    b = beliefs.copy()
    for m in shares:
        for f in m.facts:
            _merge(b, f)
    return b
