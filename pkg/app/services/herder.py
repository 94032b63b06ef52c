# details: herder agent loop (perceive → share → revise → plan → act) and the team controller
from __future__ import annotations
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from ..core.pathfind import Path, StalePath, astar, build_weight_grid, navigation_grid, path_next
from ..core.world import Action, Percept, Position, cheb, shift
from ..utils.config import CFG, get_cfg
from .beliefs import BeliefBase, Message, MessageKind, Target, TargetKind, apply_messages, integrate_percept
from .delegation import (
    ExplorationComplete, delegate, fence_need, follow_herd, scout_next_target, switch_duty, tracked_cluster,
)

logger = logging.getLogger(__name__)

# resend a pending TargetRequest after this many steps without an answer
REQUEST_RETRY = 3
# switch holders outlast ordinary targets; they release as soon as nobody needs the fence
SWITCH_STALE_FACTOR = 3
# a cached route is searched again after this many steps
REPLAN_EVERY = 8
# a route may keep serving a goal that moved this far, until the agent gets this close to its end
GOAL_SLACK = 2


class Role(str, Enum):
    LEADER = "leader"
    SCOUT = "scout"
    HERDER = "herder"


class DropReason(str, Enum):
    REACHED = "reached"
    STALE = "stale"
    UNREACHABLE = "unreachable"
    INVALIDATED = "invalidated"
    RELEASED = "released"


@dataclass(frozen=True)
class Keep:
    pass


@dataclass(frozen=True)
class Drop:
    reason: DropReason


KEEP = Keep()
Decision = Union[Keep, Drop]


@dataclass
class AgentState:
    id: int
    team: int
    role: Role
    beliefs: BeliefBase
    target: Optional[Target] = None
    path: Optional[Path] = None
    gated: bool = False  # path runs through a believed-closed fence
    planned_at: int = -1
    goal_retry: bool = False
    requested_at: Optional[int] = None
    team_targets: Dict[int, Target] = field(default_factory=dict)
    requests: Dict[int, Position] = field(default_factory=dict)  # leader only
    corral_cache: Optional[tuple] = None  # leader only: (terrain key, grid, cost-to-corral field)

    def copy(self) -> "AgentState":
        return replace(self, team_targets=dict(self.team_targets), requests=dict(self.requests))

    def take(self, t: Target) -> None:
        self.target = t
        self.path = None
        self.planned_at = -1
        self.goal_retry = False
        self.requested_at = None
        self.team_targets[self.id] = t


def plan_route(b: BeliefBase, goal: Position, cfg: CFG) -> Tuple[Optional[Path], bool]:
    """Cheapest walk on the navigation grid, else on the plain belief grid; failing both, the
    same searches with closed fences counted open (gated when the route crosses one)."""
    if not b.in_bounds(goal):
        return None, False
    for open_fences in (False, True):
        for build in (navigation_grid, build_weight_grid):
            p = astar(build(b, cfg, open_fences), b.self_pos, goal)
            if p is not None:
                return p, open_fences and any(not b.passable(c) for c in p.cells[1:])
    return None, False


def _route_ok(agent: AgentState, goal: Position) -> bool:
    """Whether the cached route still serves goal from where the agent stands."""
    b = agent.beliefs
    p = agent.path
    if p is None or b.step - agent.planned_at >= REPLAN_EVERY:
        return False
    if p.goal != goal and (cheb(p.goal, goal) > GOAL_SLACK or cheb(b.self_pos, p.goal) <= GOAL_SLACK):
        return False
    try:
        i = p.cells.index(b.self_pos)
    except ValueError:
        return False
    rest = p.cells[i + 1:]
    if not rest:
        return False
    ok = b.walkable if agent.gated else b.passable
    if not all(ok(c) for c in rest):
        return False
    return rest[0] not in b.fresh_blockers()


def _switch_still_needed(agent: AgentState, cfg: CFG) -> bool:
    b = agent.beliefs
    fid = agent.target.ref
    segs = set(b.fence_segments(fid))
    if any(p in segs for aid, p in b.ally_positions().items() if aid != agent.id):
        return True
    others = {a: t for a, t in agent.team_targets.items() if a != agent.id}
    needing, herding = fence_need(b, fid, others, cfg)
    return bool(needing or herding)


def revise_target(agent: AgentState, cfg: Optional[CFG] = None) -> Decision:
    """Keep or drop the current target. Only exploration targets end on arrival; formation and
    idle posts are held. A kept formation target follows its herd, and on Keep a usable route
    is cached on the agent."""
    cfg = cfg or get_cfg()
    t = agent.target
    b = agent.beliefs
    if t is None:
        raise ValueError("agent has no target to revise")
    if t.kind is TargetKind.SWITCH:
        if not _switch_still_needed(agent, cfg):
            return Drop(DropReason.RELEASED)
        stale_after = cfg.t_stale * SWITCH_STALE_FACTOR
    else:
        if t.kind is TargetKind.EXPLORATION and b.self_pos == t.pos:
            return Drop(DropReason.REACHED)
        stale_after = cfg.t_stale
    if b.step - t.issued_at > stale_after:
        return Drop(DropReason.STALE)
    if t.kind is TargetKind.FORMATION:
        herd = tracked_cluster(b, t.anchor, cfg)
        if herd is None:
            return Drop(DropReason.INVALIDATED)
        t = follow_herd(b, agent.id, t, herd, agent.team_targets, cfg)
        agent.target = agent.team_targets[agent.id] = t
    if b.self_pos != t.pos and not _route_ok(agent, t.pos):
        path, gated = plan_route(b, t.pos, cfg)
        if path is None:
            return Drop(DropReason.UNREACHABLE)
        agent.path, agent.gated, agent.planned_at = path, gated, b.step
    return KEEP


def _follow(agent: AgentState, cfg: CFG) -> Action:
    b = agent.beliefs
    if agent.target is None or b.self_pos == agent.target.pos:
        return Action.STAY
    if not _route_ok(agent, agent.target.pos):
        agent.path, agent.gated = plan_route(b, agent.target.pos, cfg)
        agent.planned_at = b.step
    if agent.path is None:
        return Action.STAY
    try:
        act = path_next(agent.path, b.self_pos)
    except StalePath:
        return Action.STAY
    nxt = shift(b.self_pos, act)
    if not b.passable(nxt) or nxt in b.fresh_blockers():
        return Action.STAY  # waiting for the fence to open or the cell to clear
    return act


def agent_act(
    agent: AgentState,
    inbox: Sequence[Message],
    p: Percept,
    cfg: Optional[CFG] = None,
) -> Tuple[AgentState, Action, List[Message]]:
    cfg = cfg or get_cfg()
    a = agent.copy()
    out: List[Message] = []

    b, facts = integrate_percept(a.beliefs, p)
    if facts:
        out.append(Message.share(a.id, facts))
    a.beliefs = b = apply_messages(b, inbox)

    for m in sorted(inbox, key=Message.sort_key):
        if m.kind is MessageKind.TARGET_REQUEST:
            a.team_targets.pop(m.agent, None)
            if a.role is Role.LEADER:
                a.requests[m.agent] = m.position
        elif m.kind is MessageKind.TARGET_ASSIGN:
            if m.agent == a.id:
                a.take(m.target)
            else:
                a.team_targets[m.agent] = m.target

    if a.target is not None:
        before = a.target
        d = revise_target(a, cfg)
        if isinstance(d, Keep) and a.target.pos != before.pos:
            out.append(Message.assign(a.id, a.id, a.target))
        if isinstance(d, Drop):
            logger.debug("step %d: agent %d drops %s target (%s)", b.step, a.id, a.target.kind.value, d.reason.value)
            a.target, a.path = None, None
            a.team_targets.pop(a.id, None)
            a.goal_retry = True
            a.requested_at = None

    if a.target is None and a.role is Role.SCOUT:
        taken = [t.pos for aid, t in a.team_targets.items() if aid != a.id and t.kind is TargetKind.EXPLORATION]
        try:
            t = scout_next_target(b, cfg, taken)
            a.take(t)
            out.append(Message.assign(a.id, a.id, t))
        except ExplorationComplete:
            logger.info("step %d: scout %d finished exploring, now herding", b.step, a.id)
            a.role = Role.HERDER

    if a.target is None:
        if a.requested_at is None or b.step - a.requested_at >= REQUEST_RETRY:
            out.append(Message.request(a.id, b.self_pos))
            a.requested_at = b.step
        if a.role is Role.LEADER:
            a.requests[a.id] = b.self_pos

    if a.role is Role.LEADER:
        reqs = [Message.request(aid, pos) for aid, pos in sorted(a.requests.items())]
        a.requests = {}
        for m in (delegate(a, reqs, cfg) if reqs else switch_duty(a, cfg)):
            out.append(m)
            if m.agent == a.id:
                a.take(m.target)
            else:
                a.team_targets[m.agent] = m.target

    act = _follow(a, cfg)
    return a, act, out


class HerderTeam:
    """In-process controller: one AgentState per agent, messages delivered at the next step."""

    def __init__(self, team: int, agent_ids: Sequence[int], width: int, height: int, r_fov: int, cfg: Optional[CFG] = None):
        self.team = team
        self.cfg = cfg or get_cfg()
        ids = sorted(agent_ids)
        self.agents: Dict[int, AgentState] = {}
        for i, aid in enumerate(ids):
            role = Role.LEADER if i == 0 else Role.SCOUT if i == 1 else Role.HERDER
            self.agents[aid] = AgentState(aid, team, role, BeliefBase.blank(width, height, aid, team, r_fov))
        self.inbox: Dict[int, List[Message]] = {aid: [] for aid in ids}
        self.outbox: List[Message] = []  # everything sent during the last act()

    def _ensure_leader(self, present: Sequence[int]) -> None:
        if not present or any(self.agents[a].role is Role.LEADER for a in present):
            return
        lead = self.agents[min(present)]
        logger.info("team %d: agent %d takes over as leader", self.team, lead.id)
        lead.role = Role.LEADER

    def act(self, step: int, percepts: Mapping[int, Percept]) -> Dict[int, Action]:
        present = sorted(a for a in percepts if a in self.agents)
        self._ensure_leader(present)
        actions: Dict[int, Action] = {}
        sent: List[Message] = []
        for aid in present:
            st, act, out = agent_act(self.agents[aid], self.inbox[aid], percepts[aid], self.cfg)
            self.agents[aid] = st
            actions[aid] = act
            sent.extend(out)
        sent.sort(key=Message.sort_key)
        self.outbox = sent
        for aid in self.agents:
            self.inbox[aid] = [m for m in sent if m.sender != aid]
        return actions

    def close(self) -> None:
        pass
