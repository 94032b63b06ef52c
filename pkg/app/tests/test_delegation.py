from __future__ import annotations
import math, random

import pytest

from app.core.cluster import make_cluster
from app.core.world import Position, cheb, percept
from app.core.pathfind import build_weight_grid
from app.services.beliefs import BeliefBase, Message, Target, TargetKind, apply_messages, integrate_percept
from app.services.delegation import (
    ExplorationComplete, best_frontier, delegate, formation_slots, frontier_mask, greedy_match,
    needs_switch, pick_by_rate, scout_next_target, switch_duty, unknown_gain,
)
from app.services.herder import AgentState, Role

from .conftest import omniscient


def _open(w: int, h: int, marks: dict, corral_x: int = -1) -> list:
    rows = [["."] * w for _ in range(h)]
    if corral_x >= 0:
        for r in rows:
            r[corral_x] = "1"
    for (x, y), ch in marks.items():
        rows[y][x] = ch
    return ["".join(r) for r in rows]


def _seen_by(w, aid: int) -> BeliefBase:
    body = w.agents[aid]
    b, _ = integrate_percept(BeliefBase.blank(w.width, w.height, aid, body.team, w.r_fov), percept(w, aid))
    return b


def _team_view(w, leader: int) -> BeliefBase:
    """Leader beliefs after one round of belief sharing with every teammate."""
    b = _seen_by(w, leader)
    shares = []
    for aid, body in sorted(w.agents.items()):
        if aid == leader or body.team != w.agents[leader].team:
            continue
        _, facts = integrate_percept(BeliefBase.blank(w.width, w.height, aid, body.team, w.r_fov), percept(w, aid))
        shares.append(Message.share(aid, facts))
    return apply_messages(b, shares)


# ---------------------------------------------------------------- exploration

def test_rate_prefers_cheap_gain():
    picked = pick_by_rate([(Position(1, 1), 30, 10), (Position(2, 2), 12, 3)])
    assert picked == Position(2, 2)


def test_rate_ties_go_row_major():
    assert pick_by_rate([(Position(5, 1), 4, 2), (Position(1, 1), 4, 2), (Position(0, 2), 4, 2)]) == Position(1, 1)


def test_scout_picks_a_cell_on_the_rim(world_from):
    w = world_from(*_open(30, 30, {(15, 15): "A"}), r_fov=3)
    b = _seen_by(w, 0)
    t = scout_next_target(b)
    assert t.kind is TargetKind.EXPLORATION
    assert cheb(t.pos, (15, 15)) == 3
    assert unknown_gain(b)[t.pos.y, t.pos.x] > 0


def test_frontier_only_on_known_cells_next_to_unknown(world_from):
    w = world_from(*_open(30, 30, {(15, 15): "A"}), r_fov=3)
    mask = frontier_mask(_seen_by(w, 0))
    assert mask.sum() == 24  # the 7x7 window's border ring
    assert not mask[15, 15]


def test_exploration_never_picks_the_start_cell(cfg):
    b = BeliefBase.blank(10, 10, 0, 1, 2)
    b.kinds[:, :5] = 0
    b.kinds[4, 4] = b.kinds[6, 4] = b.OBSTACLE
    start = Position(4, 5)
    assert frontier_mask(b)[start.y, start.x]
    pos = best_frontier(b, build_weight_grid(b, cfg, open_fences=True), start)
    assert pos == Position(4, 3)
    (m,) = delegate(_leader(b), [Message.request(1, start)], cfg)
    assert m.target.kind is TargetKind.EXPLORATION and m.target.pos != start


def test_nothing_left_to_explore(world_from):
    w = world_from(*_open(10, 10, {(5, 5): "A"}))
    b = _seen_by(w, 0)
    b.kinds[:, :] = 0
    with pytest.raises(ExplorationComplete):
        scout_next_target(b)


# ---------------------------------------------------------------- formation slots

def _pasture(marks: dict):
    return {**marks, (10, 10): "c", (18, 18): "A"}


def test_single_slot_directly_behind(world_from):
    b = omniscient(world_from(*_open(20, 20, _pasture({}), corral_x=0)), agent=0)
    c = make_cluster(0, {0: (10, 10)})
    assert formation_slots(c, b.corral_cells(), 1, b) == [Position(13, 10)]


def test_three_slots_fan_out(world_from):
    b = omniscient(world_from(*_open(20, 20, _pasture({}), corral_x=0)), agent=0)
    c = make_cluster(0, {0: (10, 10)})
    assert formation_slots(c, b.corral_cells(), 3, b) == [Position(12, 7), Position(13, 10), Position(12, 13)]


def test_walled_nominal_snaps_to_neighbour(world_from):
    b = omniscient(world_from(*_open(20, 20, _pasture({(13, 10): "#"}), corral_x=0)), agent=0)
    c = make_cluster(0, {0: (10, 10)})
    assert formation_slots(c, b.corral_cells(), 1, b) == [Position(13, 9)]


def test_fully_walled_slot_is_dropped(world_from):
    walls = {(x, y): "#" for x in range(11, 16) for y in range(8, 13)}
    b = omniscient(world_from(*_open(20, 20, _pasture(walls), corral_x=0)), agent=0)
    c = make_cluster(0, {0: (10, 10)})
    assert formation_slots(c, b.corral_cells(), 1, b) == []


def test_slots_stand_behind_the_herd(world_from):
    rng = random.Random(8)
    for _ in range(40):
        marks = {(rng.randrange(4, 26), rng.randrange(30)): "#" for _ in range(40)}
        cows = {}
        n = rng.randint(1, 6)
        while len(cows) < n:
            p = (rng.randrange(8, 22), rng.randrange(8, 22))
            if p not in marks:
                cows[p] = "c"
        marks.update(cows)
        marks[(29, 29)] = "A"
        b = omniscient(world_from(*_open(30, 30, marks, corral_x=0)), agent=0)
        c = make_cluster(0, {i: p for i, p in enumerate(sorted(cows))})
        corral = b.corral_cells()
        ref = min(corral, key=lambda p: ((p.x - c.centroid[0]) ** 2 + (p.y - c.centroid[1]) ** 2, p.y, p.x))
        base = math.hypot(c.centroid[0] - ref.x, c.centroid[1] - ref.y)
        slots = formation_slots(c, corral, 3, b)
        assert len(slots) <= 3 and len(set(slots)) == len(slots)
        for s in slots:
            assert b.passable(s) and s not in cows
            assert math.hypot(s.x - ref.x, s.y - ref.y) > base


def test_herd_on_the_far_edge_is_pinched_along_the_wall(world_from):
    b = omniscient(world_from(*_open(20, 20, {(19, 10): "c", (5, 18): "A"}, corral_x=0)), agent=0)
    c = make_cluster(0, {0: (19, 10)})
    assert formation_slots(c, b.corral_cells(), 1, b) == [Position(19, 9)]
    slots = formation_slots(c, b.corral_cells(), 3, b)
    assert slots and all(b.in_bounds(s) for s in slots)


def test_extra_widens_the_standoff(world_from):
    b = omniscient(world_from(*_open(20, 20, _pasture({}), corral_x=0)), agent=0)
    c = make_cluster(0, {0: (10, 10)})
    assert formation_slots(c, b.corral_cells(), 1, b, extra=4) == [Position(17, 10)]


def test_formation_needs_corral(world_from):
    b = omniscient(world_from(*_open(20, 20, _pasture({}))), agent=0)
    with pytest.raises(ValueError):
        formation_slots(make_cluster(0, {0: (10, 10)}), [], 1, b)


# ---------------------------------------------------------------- fence switches

def test_no_fences_no_switch(world_from):
    b = omniscient(world_from(*_open(10, 10, {(1, 1): "A", (8, 8): "A"})), agent=0)
    assert needs_switch(b, {0: Target.exploration(Position(9, 9), 0)}) is None


def test_teammate_target_behind_fence_gets_a_holder(bundled):
    w = bundled("fence_gap")
    b = omniscient(w, agent=0)
    got = needs_switch(b, {0: Target.exploration(Position(15, 5), 0)})
    assert got is not None
    aid, t = got
    assert aid == 1
    assert t.kind is TargetKind.SWITCH and t.ref == 0
    assert cheb(t.pos, (7, 4)) <= 1
    assert t.anchor == (7.0, 4.0)


def test_cow_near_fence_gets_a_holder(bundled):
    w = bundled("fence_gap")
    w.cows[0] = Position(8, 5)
    b = omniscient(w, agent=0)
    aid, t = needs_switch(b, {})
    assert aid == 0
    assert cheb(t.pos, (7, 4)) <= 1


def test_held_fence_needs_nobody_else(bundled):
    w = bundled("fence_gap")
    b = omniscient(w, agent=0)
    team = {
        0: Target.exploration(Position(15, 5), 0),
        1: Target.switch(Position(6, 4), 0, Position(7, 4), 0),
    }
    assert needs_switch(b, team) is None


# ---------------------------------------------------------------- delegation

def test_greedy_match_cheapest_first():
    costs = {(0, 0): 5.0, (0, 1): 1.0, (1, 0): 2.0, (1, 1): 3.0}
    assert greedy_match(costs) == [(0, 1), (1, 0)]


def _leader(b: BeliefBase) -> AgentState:
    return AgentState(b.self_id, b.team, Role.LEADER, b)


def test_explorers_spread_out(world_from):
    w = world_from(*_open(40, 40, {(5, 5): "A", (20, 20): "A", (34, 34): "A"}), r_fov=3)
    leader = _leader(_team_view(w, 0))
    reqs = [Message.request(aid, body.pos) for aid, body in sorted(w.agents.items())]
    out = delegate(leader, reqs)
    assert [m.agent for m in out] == [0, 1, 2]
    targets = [m.target for m in out]
    assert all(t.kind is TargetKind.EXPLORATION for t in targets)
    for i, a in enumerate(targets):
        for bt in targets[i + 1:]:
            assert cheb(a.pos, bt.pos) > 3


def test_lone_requester_goes_straight_behind_cluster(world_from):
    w = world_from(*_open(20, 20, _pasture({}), corral_x=0))
    b = omniscient(w, agent=0)
    (m,) = delegate(_leader(b), [Message.request(0, Position(18, 18))])
    assert m.agent == 0 and m.sender == 0
    assert m.target == Target.formation(Position(13, 10), 0, (10.0, 10.0), b.step)


def test_duplicate_requests_answered_once(world_from):
    w = world_from(*_open(20, 20, {(2, 2): "A", (10, 10): "A", (17, 17): "A"}, corral_x=0), r_fov=3)
    leader = _leader(_team_view(w, 0))
    reqs = [
        Message.request(1, Position(10, 10)),
        Message.request(1, Position(10, 10)),
        Message.request(2, Position(17, 17)),
    ]
    out = delegate(leader, reqs)
    assert sorted(m.agent for m in out) == [1, 2]


def test_no_requests_no_assignments(world_from):
    w = world_from(*_open(10, 10, {(2, 2): "A"}))
    assert delegate(_leader(_seen_by(w, 0)), []) == []


def test_leftover_requester_waits_behind_the_herd(world_from, cfg):
    agents = {(x, 18): "A" for x in (15, 16, 17, 18)}
    w = world_from(*_open(20, 20, {(10, 10): "c", **agents}, corral_x=0))
    b = omniscient(w, agent=0)
    reqs = [Message.request(aid, body.pos) for aid, body in sorted(w.agents.items())]
    out = delegate(_leader(b), reqs, cfg)
    assert sorted(m.agent for m in out) == [0, 1, 2, 3]
    kinds = [m.target.kind for m in out]
    assert kinds.count(TargetKind.FORMATION) == cfg.k_form == 3
    (spare,) = [m.target for m in out if m.target.kind is TargetKind.IDLE]
    assert spare.pos.x > 10 and cheb(spare.pos, (10, 10)) > cfg.r_cow


def test_holder_keeps_its_slot(world_from, cfg):
    w = world_from(*_open(20, 20, {(10, 10): "c", (13, 10): "A", (18, 18): "A"}, corral_x=0))
    b = omniscient(w, agent=0)
    leader = _leader(b)
    leader.team_targets[0] = Target.formation(Position(13, 10), 0, (10.0, 10.0), 0)
    (m,) = delegate(leader, [Message.request(1, Position(18, 18))], cfg)
    assert m.agent == 1 and m.target.kind is TargetKind.FORMATION
    assert m.target.pos in (Position(12, 7), Position(12, 13))


def test_idle_teammate_is_drafted_onto_a_switch(bundled, cfg):
    w = bundled("fence_gap")
    leader = _leader(omniscient(w, agent=0))
    leader.team_targets[0] = Target.exploration(Position(15, 5), 0)
    leader.team_targets[1] = Target.idle(Position(3, 7), 0)
    (m,) = switch_duty(leader, cfg)
    assert m.agent == 1 and m.target.kind is TargetKind.SWITCH
    leader.team_targets[1] = m.target
    assert switch_duty(leader, cfg) == []
