# details: weighted 8-connected shortest paths over an agent's believed map
from __future__ import annotations
import heapq, math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from ..utils.config import CFG, get_cfg
from .world import MOVES, Action, Position

if TYPE_CHECKING:
    from ..services.beliefs import BeliefBase

IMPASSABLE = math.inf
_OFFSETS = tuple(a.delta for a in MOVES)


class PathError(ValueError):
    pass


class StalePath(RuntimeError):
    pass


@dataclass(frozen=True)
class WeightGrid:
    width: int
    height: int
    cost: List[float]  # row-major, IMPASSABLE for blocked cells

    def at(self, pos: Tuple[int, int]) -> float:
        return self.cost[pos[1] * self.width + pos[0]]

    def passable(self, pos: Tuple[int, int]) -> bool:
        return self.in_bounds(pos) and self.at(pos) != IMPASSABLE

    def in_bounds(self, pos: Tuple[int, int]) -> bool:
        return 0 <= pos[0] < self.width and 0 <= pos[1] < self.height


@dataclass(frozen=True)
class Path:
    cells: Tuple[Position, ...]
    cost: float

    @property
    def goal(self) -> Position:
        return self.cells[-1]


def _belief_costs(beliefs: "BeliefBase", cfg: CFG, open_fences: bool, with_cows: bool) -> np.ndarray:
    kinds = beliefs.kinds
    cost = np.where(kinds >= 0, 1.0, float(cfg.w_unknown))
    if with_cows:
        for x, y in beliefs.believed_cows():
            cost[max(0, y - 1):y + 2, max(0, x - 1):x + 2] += cfg.w_adj
            cost[y, x] += cfg.w_cow - cfg.w_adj
    cost[kinds == beliefs.OBSTACLE] = IMPASSABLE
    if not open_fences:
        cost[beliefs.closed_fence_mask()] = IMPASSABLE
    return cost


def build_weight_grid(
    beliefs: "BeliefBase",
    cfg: Optional[CFG] = None,
    open_fences: bool = False,
    with_cows: bool = True,
) -> WeightGrid:
    """Cell costs from beliefs: base 1 (unknown W_unknown), cow and cow-adjacency bonuses,
    obstacles and believed-closed fences impassable. open_fences=True keeps fences finite."""
    cfg = cfg or get_cfg()
    cost = _belief_costs(beliefs, cfg, open_fences, with_cows)
    return WeightGrid(beliefs.width, beliefs.height, cost.ravel().tolist())


def navigation_grid(beliefs: "BeliefBase", cfg: Optional[CFG] = None, open_fences: bool = False) -> WeightGrid:
    """What an agent actually walks on: the belief grid, plus W_herd per ring of closeness to the
    nearest believed cow inside R_cow, with the cows and agents seen this step impassable."""
    cfg = cfg or get_cfg()
    cost = _belief_costs(beliefs, cfg, open_fences, with_cows=True)
    r = cfg.r_cow
    if cfg.w_herd:
        level = np.zeros(cost.shape, dtype=np.int32)
        for x, y in beliefs.believed_cows():
            for d in range(r, -1, -1):
                ring = level[max(0, y - d):y + d + 1, max(0, x - d):x + d + 1]
                np.maximum(ring, r + 1 - d, out=ring)
        cost += cfg.w_herd * level
    for x, y in beliefs.fresh_blockers():
        cost[y, x] = IMPASSABLE
    return WeightGrid(beliefs.width, beliefs.height, cost.ravel().tolist())


def _check(grid: WeightGrid, *pts: Tuple[int, int]) -> None:
    for p in pts:
        if not grid.in_bounds(p):
            raise PathError(f"endpoint {tuple(p)} outside {grid.width}x{grid.height}")


def astar(grid: WeightGrid, start: Tuple[int, int], goal: Tuple[int, int]) -> Optional[Path]:
    """Minimum-cost path (entered cells charged, start free) or None when the goal is
    impassable or unreachable. Heuristic: Chebyshev distance, ties → smaller h, then row-major."""
    _check(grid, start, goal)
    W, H = grid.width, grid.height
    cost = grid.cost
    s = start[1] * W + start[0]
    gi = goal[1] * W + goal[0]
    if cost[gi] == IMPASSABLE:
        return None
    gx, gy = goal
    if s == gi:
        return Path((Position(*start),), 0.0)

    dist = {s: 0.0}
    parent = {}
    closed = set()
    h0 = max(abs(start[0] - gx), abs(start[1] - gy))
    heap = [(float(h0), h0, s)]
    while heap:
        _, _, i = heapq.heappop(heap)
        if i in closed:
            continue
        if i == gi:
            break
        closed.add(i)
        gcur = dist[i]
        x, y = i % W, i // W
        for dx, dy in _OFFSETS:
            nx, ny = x + dx, y + dy
            if nx < 0 or ny < 0 or nx >= W or ny >= H:
                continue
            j = ny * W + nx
            c = cost[j]
            if c == IMPASSABLE or j in closed:
                continue
            ng = gcur + c
            if ng < dist.get(j, IMPASSABLE):
                dist[j] = ng
                parent[j] = i
                hj = max(abs(nx - gx), abs(ny - gy))
                heapq.heappush(heap, (ng + hj, hj, j))
    else:
        return None

    cells = [gi]
    while cells[-1] != s:
        cells.append(parent[cells[-1]])
    cells.reverse()
    return Path(tuple(Position(c % W, c // W) for c in cells), dist[gi])


def _settle(grid: WeightGrid, sources: Iterable[int], reverse: bool) -> Iterator[Tuple[int, float]]:
    """Dijkstra yielding (cell index, exact cost) in nondecreasing cost order.
    Forward charges the entered cell; reverse charges the cell being left."""
    W, H = grid.width, grid.height
    cost = grid.cost
    dist = [IMPASSABLE] * (W * H)
    heap = []
    for i in sources:
        if dist[i] > 0:
            dist[i] = 0.0
            heap.append((0.0, i))
    heapq.heapify(heap)
    while heap:
        d, i = heapq.heappop(heap)
        if d > dist[i]:
            continue
        yield i, d
        if reverse:
            step = d + cost[i]
            if step == IMPASSABLE:
                continue  # paths may start on a blocked cell but never pass through one
        x, y = i % W, i // W
        for dx, dy in _OFFSETS:
            nx, ny = x + dx, y + dy
            if nx < 0 or ny < 0 or nx >= W or ny >= H:
                continue
            j = ny * W + nx
            nd = step if reverse else d + cost[j]
            if nd < dist[j]:
                dist[j] = nd
                heapq.heappush(heap, (nd, j))


def _collect(grid: WeightGrid, walk: Iterator[Tuple[int, float]], goals: Optional[Iterable[Tuple[int, int]]]) -> List[float]:
    dist = [IMPASSABLE] * (grid.width * grid.height)
    left = None if goals is None else {g[1] * grid.width + g[0] for g in goals}
    if left is not None and not left:
        return dist
    for i, d in walk:
        dist[i] = d
        if left is not None:
            left.discard(i)
            if not left:
                break
    return dist


def cost_field(grid: WeightGrid, start: Tuple[int, int], goals: Optional[Iterable[Tuple[int, int]]] = None) -> List[float]:
    """Dijkstra from start: exact astar cost to every cell (IMPASSABLE when unreachable).
    With goals the search stops once every goal is settled; cells costlier than the last goal read IMPASSABLE."""
    _check(grid, start)
    goals = None if goals is None else list(goals)
    return _collect(grid, _settle(grid, [start[1] * grid.width + start[0]], reverse=False), goals)


def cost_to_targets(
    grid: WeightGrid,
    targets: Iterable[Tuple[int, int]],
    goals: Optional[Iterable[Tuple[int, int]]] = None,
) -> List[float]:
    """Reverse multi-source Dijkstra: cost of the cheapest path from each cell to any target.
    goals stops the search early as in cost_field."""
    sources = []
    for t in targets:
        _check(grid, t)
        i = t[1] * grid.width + t[0]
        if grid.cost[i] != IMPASSABLE:
            sources.append(i)
    goals = None if goals is None else list(goals)
    return _collect(grid, _settle(grid, sources, reverse=True), goals)


def settled(grid: WeightGrid, start: Tuple[int, int]) -> Iterator[Tuple[Position, float]]:
    """Cells reachable from start with their exact astar cost, cheapest first."""
    _check(grid, start)
    W = grid.width
    for i, d in _settle(grid, [start[1] * W + start[0]], reverse=False):
        yield Position(i % W, i // W), d


def path_next(path: Path, current: Tuple[int, int]) -> Action:
    try:
        i = path.cells.index(Position(*current))
    except ValueError:
        raise StalePath(f"{tuple(current)} is not on the path") from None
    if i == len(path.cells) - 1:
        raise StalePath("already at the end of the path")
    return Action.toward(path.cells[i], path.cells[i + 1])
