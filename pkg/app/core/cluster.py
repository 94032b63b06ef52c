# details: cow herds: link-distance components, median splitting, herding rank
from __future__ import annotations
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from ..utils.config import CFG, get_cfg
from .pathfind import IMPASSABLE, WeightGrid, cost_to_targets
from .world import Position, cheb


@dataclass(frozen=True)
class Cluster:
    id: int
    members: Mapping[int, Position]  # cow id → position
    centroid: Tuple[float, float]
    bbox: Tuple[int, int, int, int]  # min_x, min_y, max_x, max_y

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def min_member(self) -> Position:
        return min(self.members.values(), key=lambda p: (p.y, p.x))

    @property
    def radius(self) -> int:
        x0, y0, x1, y1 = self.bbox
        return math.ceil(math.hypot(x1 - x0, y1 - y0) / 2)

    def centroid_cell(self) -> Position:
        return Position(math.floor(self.centroid[0] + 0.5), math.floor(self.centroid[1] + 0.5))


def make_cluster(cid: int, members: Mapping[int, Tuple[int, int]]) -> Cluster:
    if not members:
        raise ValueError("cluster needs at least one member")
    ms = {k: Position(*v) for k, v in sorted(members.items())}
    xs = [p.x for p in ms.values()]
    ys = [p.y for p in ms.values()]
    n = len(ms)
    return Cluster(cid, ms, (sum(xs) / n, sum(ys) / n), (min(xs), min(ys), max(xs), max(ys)))


def renumber(clusters: Iterable[Cluster]) -> List[Cluster]:
    ordered = sorted(clusters, key=lambda c: (c.min_member.y, c.min_member.x))
    return [make_cluster(i, c.members) for i, c in enumerate(ordered)]


class _UnionFind:
    def __init__(self) -> None:
        self.parent: Dict[int, int] = {}
        self.rank: Dict[int, int] = {}

    def add(self, i: int) -> None:
        if i not in self.parent:
            self.parent[i] = i
            self.rank[i] = 0

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def groups(self) -> List[List[int]]:
        out: Dict[int, List[int]] = {}
        for i in self.parent:
            out.setdefault(self.find(i), []).append(i)
        return list(out.values())


CowsArg = Union[Mapping[int, Tuple[int, int]], Iterable[Tuple[int, int]]]


def _as_members(cows: CowsArg) -> Dict[int, Position]:
    if isinstance(cows, Mapping):
        return {k: Position(*v) for k, v in cows.items()}
    pts = sorted({Position(*p) for p in cows}, key=lambda p: (p.y, p.x))
    return dict(enumerate(pts))


def cluster_cows(cows: CowsArg, link: Optional[int] = None) -> List[Cluster]:
    """Connected components under Chebyshev distance <= link; ids in row-major order of min member."""
    L = link if link is not None else get_cfg().link
    if L < 1:
        raise ValueError("link distance must be >= 1")
    members = _as_members(cows)
    uf = _UnionFind()
    buckets: Dict[Tuple[int, int], List[int]] = {}
    for cid, p in members.items():
        uf.add(cid)
        buckets.setdefault((p.x // L, p.y // L), []).append(cid)
    for (bx, by), ids in buckets.items():
        near = [c for dx in (-1, 0, 1) for dy in (-1, 0, 1) for c in buckets.get((bx + dx, by + dy), ())]
        for a in ids:
            pa = members[a]
            for b in near:
                if b > a and cheb(pa, members[b]) <= L:
                    uf.union(a, b)
    return renumber(make_cluster(0, {c: members[c] for c in g}) for g in uf.groups())


def split_cluster(c: Cluster, max_size: int) -> List[Cluster]:
    """Median bisection along the longer bbox axis until every piece has <= max_size members."""
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    if c.size <= max_size:
        return [c]
    x0, y0, x1, y1 = c.bbox
    axis = 1 if (y1 - y0) > (x1 - x0) else 0
    ordered = sorted(c.members.items(), key=lambda kv: (kv[1][axis], kv[1][1 - axis], kv[0]))
    half = (len(ordered) + 1) // 2
    pieces = []
    for part in (ordered[:half], ordered[half:]):
        pieces.extend(split_cluster(make_cluster(0, dict(part)), max_size))
    return renumber(pieces)


@dataclass(frozen=True)
class RankedCluster:
    cluster: Cluster
    score: float

    @property
    def reachable(self) -> bool:
        return self.score != IMPASSABLE


def anchor_cell(c: Cluster, grid: WeightGrid) -> Optional[Position]:
    """Nearest passable cell to the centroid (Chebyshev rings, then Euclidean, then row-major)."""
    cx, cy = c.centroid
    base = c.centroid_cell()
    for r in range(max(grid.width, grid.height)):
        ring = [
            Position(base.x + dx, base.y + dy)
            for dy in range(-r, r + 1)
            for dx in range(-r, r + 1)
            if max(abs(dx), abs(dy)) == r
        ]
        ok = [p for p in ring if grid.passable(p)]
        if ok:
            return min(ok, key=lambda p: ((p.x - cx) ** 2 + (p.y - cy) ** 2, p.y, p.x))
    return None


def rank_clusters(
    clusters: Sequence[Cluster],
    corral_cells: Iterable[Tuple[int, int]],
    grid: WeightGrid,
    opponents: Iterable[Tuple[int, int]] = (),
    cfg: Optional[CFG] = None,
    to_corral: Optional[Sequence[float]] = None,
) -> List[RankedCluster]:
    """Reachable clusters first, cheapest path cost to the corral plus the opponent penalty.
    to_corral is a precomputed cost_to_targets(grid, corral_cells) field."""
    cfg = cfg or get_cfg()
    corral = list(corral_cells)
    if not corral:
        raise ValueError("rank_clusters needs at least one corral cell")
    if to_corral is None:
        to_corral = cost_to_targets(grid, corral)
    opps = list(opponents)
    out = []
    for c in clusters:
        a = anchor_cell(c, grid)
        base = to_corral[a.y * grid.width + a.x] if a else IMPASSABLE
        if base == IMPASSABLE:
            out.append(RankedCluster(c, IMPASSABLE))
            continue
        cx, cy = c.centroid
        near = sum(1 for o in opps if max(abs(o[0] - cx), abs(o[1] - cy)) <= cfg.r_opp)
        out.append(RankedCluster(c, base + cfg.p_opp * near))
    out.sort(key=lambda r: (not r.reachable, r.score, r.cluster.id))
    return out
