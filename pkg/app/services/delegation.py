# details: target selection: scout frontier rate, formation slots, fence-switch need, leader delegation
from __future__ import annotations
import logging, math
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from ..core.cluster import Cluster, cluster_cows, rank_clusters, renumber, split_cluster
from ..core.pathfind import IMPASSABLE, WeightGrid, astar, build_weight_grid, cost_field, cost_to_targets, settled
from ..core.world import Position, cheb
from ..utils.config import CFG, get_cfg
from .beliefs import UNKNOWN, BeliefBase, Message, MessageKind, Target, TargetKind

if TYPE_CHECKING:
    from .herder import AgentState

logger = logging.getLogger(__name__)

# a formation target stays valid while some cluster centroid is this close to the recorded one
CLUSTER_DRIFT = 5


class ExplorationComplete(RuntimeError):
    pass


# ---------------------------------------------------------------- exploration

def frontier_mask(b: BeliefBase) -> np.ndarray:
    """Known, standable cells with at least one unknown 8-neighbour."""
    unknown = b.kinds == UNKNOWN
    padded = np.pad(unknown, 1, constant_values=False)
    h, w = unknown.shape
    near = np.zeros_like(unknown)
    for dy in (0, 1, 2):
        for dx in (0, 1, 2):
            if dx == 1 and dy == 1:
                continue
            near |= padded[dy:dy + h, dx:dx + w]
    standable = (~unknown) & (b.kinds != b.OBSTACLE) & (b.kinds != b.FENCE)
    return standable & near


def unknown_gain(b: BeliefBase) -> np.ndarray:
    """Per cell: number of unknown cells inside the R_fov window centred there."""
    u = (b.kinds == UNKNOWN).astype(np.int32)
    h, w = u.shape
    integral = np.pad(u.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    r = b.r_fov
    ys, xs = np.arange(h), np.arange(w)
    y0, y1 = np.clip(ys - r, 0, h), np.clip(ys + r + 1, 0, h)
    x0, x1 = np.clip(xs - r, 0, w), np.clip(xs + r + 1, 0, w)
    return (
        integral[y1[:, None], x1[None, :]]
        - integral[y0[:, None], x1[None, :]]
        - integral[y1[:, None], x0[None, :]]
        + integral[y0[:, None], x0[None, :]]
    )


def pick_by_rate(candidates: Iterable[Tuple[Position, float, float]]) -> Optional[Position]:
    """Highest gain/max(1, cost); ties → smallest row-major cell."""
    best, best_key = None, None
    for pos, gain, cost in candidates:
        if cost == IMPASSABLE:
            continue
        key = (-(gain / max(1.0, cost)), pos[1], pos[0])
        if best_key is None or key < best_key:
            best, best_key = Position(*pos), key
    return best


def best_frontier(
    b: BeliefBase,
    grid: WeightGrid,
    start: Tuple[int, int],
    exclude: Iterable[Tuple[int, int]] = (),
) -> Optional[Position]:
    """Frontier cell with the best gain/cost rate from start, never start itself. The search
    stops once no cheaper-first cell could beat the rate already found."""
    mask = frontier_mask(b)
    r = b.r_fov
    for ex in exclude:
        x, y = ex
        mask[max(0, y - r):y + r + 1, max(0, x - r):x + r + 1] = False
    mask[start[1], start[0]] = False
    if not mask.any():
        return None
    gain = unknown_gain(b)
    top = float(gain[mask].max())
    seen: List[Tuple[Position, float, float]] = []
    best_rate = -1.0
    for pos, cost in settled(grid, start):
        if top / max(1.0, cost) < best_rate:
            break
        if mask[pos.y, pos.x]:
            g = float(gain[pos.y, pos.x])
            seen.append((pos, g, cost))
            best_rate = max(best_rate, g / max(1.0, cost))
    return pick_by_rate(seen)


def scout_next_target(b: BeliefBase, cfg: Optional[CFG] = None, exclude: Iterable[Tuple[int, int]] = ()) -> Target:
    if not (b.kinds == UNKNOWN).any():
        raise ExplorationComplete("map fully known")
    cfg = cfg or get_cfg()
    grid = build_weight_grid(b, cfg, open_fences=True)
    exclude = list(exclude)
    pos = best_frontier(b, grid, b.self_pos, exclude)
    if pos is None and exclude:
        pos = best_frontier(b, grid, b.self_pos)
    if pos is None:
        raise ExplorationComplete("no reachable frontier")
    return Target.exploration(pos, b.step)


# ---------------------------------------------------------------- formation

def _dist(a: Tuple[float, float], b: Tuple[float, float]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _corral_ref(c: Cluster, corral_cells: Sequence[Tuple[int, int]]) -> Tuple[int, int]:
    cx, cy = c.centroid
    return min(corral_cells, key=lambda p: ((p[0] - cx) ** 2 + (p[1] - cy) ** 2, p[1], p[0]))


def _room(origin: float, step: float, hi: int) -> float:
    # largest t keeping origin + t*step inside [0, hi]
    if step > 1e-9:
        return (hi - origin) / step
    if step < -1e-9:
        return -origin / step
    return math.inf


def _standable(b: BeliefBase, p: Position) -> bool:
    return bool(b.passable(p) and b.kinds[p.y, p.x] != b.FENCE)


def formation_slots(
    c: Cluster,
    corral_cells: Sequence[Tuple[int, int]],
    k: int,
    b: BeliefBase,
    cfg: Optional[CFG] = None,
    extra: int = 0,
) -> List[Position]:
    """Up to k standing cells on the far side of the cluster from the corral, spread over ±spread_deg.
    A ray leaving the map is cut back to its last in-bounds point, so a herd against the far
    edge is pinched from along the wall. extra widens the standoff (reserve posts)."""
    if c.size == 0:
        raise ValueError("empty cluster")
    if not corral_cells:
        raise ValueError("no corral cells")
    cfg = cfg or get_cfg()
    cx, cy = c.centroid
    ref = _corral_ref(c, corral_cells)
    ux, uy = cx - ref[0], cy - ref[1]
    n = math.hypot(ux, uy) or 1.0
    ux, uy = ux / n, uy / n
    d = c.radius + cfg.d_gap + extra
    spread = math.radians(cfg.spread_deg)
    angles = [0.0] if k == 1 else [-spread + 2 * spread * i / (k - 1) for i in range(k)]
    base = _dist(c.centroid, ref)
    cows = set(b.believed_cows())

    slots: List[Position] = []
    for a in angles:
        rx = ux * math.cos(a) - uy * math.sin(a)
        ry = ux * math.sin(a) + uy * math.cos(a)
        t = max(0.0, min(d, _room(cx, rx, b.width - 1), _room(cy, ry, b.height - 1)))
        nominal = Position(math.floor(cx + t * rx + 0.5), math.floor(cy + t * ry + 0.5))
        options = [
            Position(nominal.x + dx, nominal.y + dy)
            for dy in range(-2, 3)
            for dx in range(-2, 3)
        ]
        options = [
            p for p in options
            if _standable(b, p)
            and p not in cows
            and p not in slots
            and _dist(p, ref) > base
        ]
        if not options:
            continue
        slots.append(min(options, key=lambda p: (cheb(p, nominal), _dist(p, nominal), p.y, p.x)))
    return slots


# ---------------------------------------------------------------- fences

def _with_cells(grid: WeightGrid, cells: Iterable[Tuple[int, int]], value: float) -> WeightGrid:
    cost = list(grid.cost)
    for x, y in cells:
        cost[y * grid.width + x] = value
    return WeightGrid(grid.width, grid.height, cost)


def fence_need(
    b: BeliefBase,
    fid: int,
    team_targets: Mapping[int, Target],
    cfg: Optional[CFG] = None,
) -> Tuple[Set[int], bool]:
    """Who needs fence fid open: teammates whose targets are reachable only through it, and whether
    a cow near it would take a cheaper route to our corral. Evaluated as if fid were closed."""
    cfg = cfg or get_cfg()
    segs = b.fence_segments(fid)
    base = build_weight_grid(b, cfg)
    closed = _with_cells(base, segs, IMPASSABLE)
    opened = _with_cells(base, segs, 1.0)
    allies = b.ally_positions()

    needing: Set[int] = set()
    for aid, t in sorted(team_targets.items()):
        pos = allies.get(aid)
        if pos is None or t.kind is TargetKind.SWITCH or not b.in_bounds(t.pos):
            continue
        if astar(closed, pos, t.pos) is None and astar(opened, pos, t.pos) is not None:
            needing.add(aid)

    cows_near = [p for p in b.believed_cows() if any(cheb(p, s) <= 3 for s in segs)]
    corral = b.corral_cells()
    herding = False
    if cows_near and corral:
        shut = cost_to_targets(closed, corral)
        open_ = cost_to_targets(opened, corral)
        herding = any(open_[p.y * b.width + p.x] < shut[p.y * b.width + p.x] for p in cows_near)
    return needing, herding


def needs_switch(
    b: BeliefBase,
    team_targets: Mapping[int, Target],
    cfg: Optional[CFG] = None,
    candidates: Optional[Mapping[int, Position]] = None,
) -> Optional[Tuple[int, Target]]:
    """First believed-closed fence that someone needs opened, and the cheapest candidate to hold a switch."""
    cfg = cfg or get_cfg()
    closed = [fid for fid in b.known_fences() if not b.fence_open(fid)]
    if not closed:
        return None
    held = {t.ref for t in team_targets.values() if t.kind is TargetKind.SWITCH}
    cands = dict(candidates) if candidates is not None else b.ally_positions()
    if not cands:
        return None
    grid = build_weight_grid(b, cfg)
    for fid in closed:
        if fid in held:
            continue
        switches = b.switch_cells(fid)
        if not switches:
            continue
        needing, herding = fence_need(b, fid, team_targets, cfg)
        if not needing and not herding:
            continue
        stands = sorted({
            Position(s.x + dx, s.y + dy)
            for s in switches for dx in (-1, 0, 1) for dy in (-1, 0, 1)
            if grid.passable((s.x + dx, s.y + dy))
        }, key=lambda p: (p.y, p.x))
        best = None
        for aid, pos in sorted(cands.items()):
            if aid in needing:
                continue
            field = cost_field(grid, pos, goals=stands)
            for p in stands:
                cost = field[p.y * grid.width + p.x]
                if cost == IMPASSABLE:
                    continue
                key = (cost, aid, p.y, p.x)
                if best is None or key < best[0]:
                    sw = min(switches, key=lambda s: (cheb(s, p), s.y, s.x))
                    best = (key, aid, p, sw)
        if best is not None:
            _, aid, p, sw = best
            logger.debug("fence %d needs a switch holder: agent %d at %s", fid, aid, tuple(p))
            return aid, Target.switch(p, fid, sw, b.step)
    return None


# ---------------------------------------------------------------- herds

def greedy_match(costs: Mapping[Tuple[int, int], float]) -> List[Tuple[int, int]]:
    """Cheapest-first (agent, slot) pairing; each agent and slot used once."""
    used_a: Set[int] = set()
    used_s: Set[int] = set()
    out = []
    for (a, s), c in sorted(costs.items(), key=lambda kv: (kv[1], kv[0][0], kv[0][1])):
        if c == IMPASSABLE or a in used_a or s in used_s:
            continue
        used_a.add(a)
        used_s.add(s)
        out.append((a, s))
    return out


def herd_clusters(b: BeliefBase, cfg: CFG) -> List[Cluster]:
    cows = b.cow_positions()
    if not cows:
        return []
    pieces = [p for c in cluster_cows(cows, cfg.link) for p in split_cluster(c, cfg.max_size)]
    return renumber(pieces)


def _drift(anchor: Tuple[float, float], c: Cluster) -> float:
    return max(abs(anchor[0] - c.centroid[0]), abs(anchor[1] - c.centroid[1]))


def _same_cluster(t: Target, c: Cluster) -> bool:
    return t.kind is TargetKind.FORMATION and t.anchor is not None and _drift(t.anchor, c) <= CLUSTER_DRIFT


def tracked_cluster(b: BeliefBase, anchor: Tuple[float, float], cfg: Optional[CFG] = None) -> Optional[Cluster]:
    """The herd piece nearest a recorded centroid, if one is within CLUSTER_DRIFT."""
    cfg = cfg or get_cfg()
    near = [(_drift(anchor, c), c.id, c) for c in herd_clusters(b, cfg) if _drift(anchor, c) <= CLUSTER_DRIFT]
    return min(near, key=lambda e: (e[0], e[1]))[2] if near else None


def _close_in(b: BeliefBase, slot: Position, c: Cluster, ref: Tuple[int, int], cfg: CFG) -> Position:
    # a slot out of every cow's flee range creeps toward the centroid, staying behind the herd
    herd = list(c.members.values())
    cx, cy = c.centroid_cell()
    base = _dist(c.centroid, ref)
    p = slot
    for _ in range(cfg.d_gap + 1):
        if any(cheb(p, m) <= cfg.r_cow for m in herd):
            break
        nxt = Position(p.x + (cx > p.x) - (cx < p.x), p.y + (cy > p.y) - (cy < p.y))
        if nxt == p or not _standable(b, nxt) or nxt in herd or _dist(nxt, ref) <= base:
            break
        p = nxt
    return p


def follow_herd(
    b: BeliefBase,
    me: int,
    t: Target,
    herd: Cluster,
    team_targets: Mapping[int, Target],
    cfg: Optional[CFG] = None,
) -> Target:
    """A held formation target re-solved against the herd's current shape. Teammates on the
    same herd keep the slots nearest their own targets; the rest stays as issued."""
    cfg = cfg or get_cfg()
    corral = b.corral_cells()
    if not corral:
        return t
    slots = formation_slots(herd, corral, cfg.k_form, b, cfg)
    mates = {a: tt.pos for a, tt in team_targets.items() if a != me and _same_cluster(tt, herd)}
    mates[me] = t.pos
    pairs = greedy_match({(a, i): float(cheb(p, s)) for a, p in sorted(mates.items()) for i, s in enumerate(slots)})
    mine = next((slots[i] for a, i in pairs if a == me), None)
    if mine is None:
        return Target.formation(t.pos, herd.id, herd.centroid, t.issued_at)
    mine = _close_in(b, mine, herd, _corral_ref(herd, corral), cfg)
    return Target.formation(mine, herd.id, herd.centroid, t.issued_at)


# ---------------------------------------------------------------- delegation

def _idle_cell(b: BeliefBase, grid: WeightGrid, start: Position, taken: Set[Position]) -> Optional[Position]:
    corral = set(b.corral_cells())
    ring = {
        Position(p.x + dx, p.y + dy)
        for p in corral for dx in (-1, 0, 1) for dy in (-1, 0, 1)
    }
    ring = sorted(
        (p for p in ring if p not in corral and p not in taken and b.in_bounds(p) and b.known(p) and _standable(b, p)),
        key=lambda q: (q.y, q.x),
    )
    if not ring:
        return None
    field = cost_field(grid, start, goals=ring)
    best = None
    for p in ring:
        cost = field[p.y * b.width + p.x]
        if cost != IMPASSABLE and (best is None or cost < best[0]):
            best = (cost, p)
    return best[1] if best else None


def _ranked(leader: "AgentState", corral: List[Position], cfg: CFG) -> List[Cluster]:
    b = leader.beliefs
    clusters = herd_clusters(b, cfg)
    if not clusters:
        return []
    key = b.terrain_key()
    if leader.corral_cache is None or leader.corral_cache[0] != key:
        grid = build_weight_grid(b, cfg, with_cows=False)
        leader.corral_cache = (key, grid, cost_to_targets(grid, corral))
    _, grid, to_corral = leader.corral_cache
    ranked = rank_clusters(clusters, corral, grid, b.believed_opponents(), cfg, to_corral=to_corral)
    return [r.cluster for r in ranked if r.reachable]


def delegate(leader: "AgentState", requests: Sequence[Message], cfg: Optional[CFG] = None) -> List[Message]:
    """Leader-side assignment: best-ranked cluster formation, switch override, exploration,
    further clusters, reserve posts behind the herd, then idle posts. One TargetAssign per
    distinct requester, plus one for an idle teammate drafted onto a switch."""
    cfg = cfg or get_cfg()
    b = leader.beliefs
    step = b.step
    reqs: Dict[int, Position] = {}
    for m in requests:
        if m.kind is MessageKind.TARGET_REQUEST and m.agent is not None and m.position is not None:
            reqs[m.agent] = Position(*m.position)
    if not reqs:
        return []
    held = {aid: t for aid, t in leader.team_targets.items() if aid not in reqs}
    assigned: Dict[int, Target] = {}
    grid = build_weight_grid(b, cfg)
    travel: Dict[Tuple[int, Position], float] = {}

    def cost(a: int, s: Position) -> float:
        if (a, s) not in travel:
            p = astar(grid, reqs[a], s)
            travel[(a, s)] = p.cost if p is not None else IMPASSABLE
        return travel[(a, s)]

    def free() -> List[int]:
        return [a for a in sorted(reqs) if a not in assigned]

    def match(slots: List[Position], make) -> None:
        pairs = greedy_match({(a, i): cost(a, s) for a in free() for i, s in enumerate(slots)})
        for a, i in pairs:
            assigned[a] = make(slots[i])

    corral = b.corral_cells()
    ranked = _ranked(leader, corral, cfg) if corral else []

    def formation(c: Cluster) -> None:
        agents = free()
        if not agents:
            return
        holders = [t for t in held.values() if _same_cluster(t, c)]
        k = min(len(agents) + len(holders), cfg.k_form)
        slots = formation_slots(c, corral, k, b, cfg)
        covered = {i for _, i in greedy_match({
            (h, i): float(cheb(t.pos, s)) for h, t in enumerate(holders) for i, s in enumerate(slots)
        })}
        match([s for i, s in enumerate(slots) if i not in covered],
              lambda s: Target.formation(s, c.id, c.centroid, step))

    if ranked:
        formation(ranked[0])

    allies = b.ally_positions()
    idle = {a: allies[a] for a, t in held.items() if t.kind is TargetKind.IDLE and a in allies}
    sw = needs_switch(b, {**held, **assigned}, cfg, candidates={**idle, **reqs})
    if sw is not None:
        aid, t = sw
        assigned[aid] = t

    if free() and (b.kinds == UNKNOWN).any():
        open_grid = build_weight_grid(b, cfg, open_fences=True)
        taken = [t.pos for t in list(held.values()) + list(assigned.values()) if t.kind is TargetKind.EXPLORATION]
        for a in free():
            pos = best_frontier(b, open_grid, reqs[a], taken)
            if pos is not None:
                assigned[a] = Target.exploration(pos, step)
                taken.append(pos)

    for c in ranked[1:]:
        if not free():
            break
        formation(c)

    if ranked and free():
        match(formation_slots(ranked[0], corral, len(free()), b, cfg, extra=cfg.r_cow + 1),
              lambda s: Target.idle(s, step))

    posts = {t.pos for t in list(held.values()) + list(assigned.values())}
    for a in free():
        post = _idle_cell(b, grid, reqs[a], posts) or reqs[a]
        posts.add(post)
        assigned[a] = Target.idle(post, step)

    logger.debug("step %d: leader %d assigned %s", step, b.self_id,
                 {a: (t.kind.value, tuple(t.pos)) for a, t in sorted(assigned.items())})
    return [Message.assign(b.self_id, a, t) for a, t in sorted(assigned.items())]


def switch_duty(leader: "AgentState", cfg: Optional[CFG] = None) -> List[Message]:
    """Between requests: draft a teammate holding an idle post onto a switch someone needs."""
    b = leader.beliefs
    if all(b.fence_open(fid) for fid in b.known_fences()):
        return []
    allies = b.ally_positions()
    idle = {a: allies[a] for a, t in leader.team_targets.items() if t.kind is TargetKind.IDLE and a in allies}
    if not idle:
        return []
    sw = needs_switch(b, leader.team_targets, cfg, candidates=idle)
    if sw is None:
        return []
    aid, t = sw
    return [Message.assign(b.self_id, aid, t)]
