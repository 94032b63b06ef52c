from __future__ import annotations

from app.core.world import Action, Position, cheb, percept, step
from app.services.beliefs import BeliefBase, Message, MessageKind, Target, TargetKind
from app.services.herder import (
    KEEP, AgentState, Drop, DropReason, HerderTeam, Role, agent_act, revise_target,
)

from .conftest import omniscient


def _open(w: int, h: int, marks: dict) -> list:
    rows = [["."] * w for _ in range(h)]
    for (x, y), ch in marks.items():
        rows[y][x] = ch
    return ["".join(r) for r in rows]


def _fresh(w, aid: int, role: Role) -> AgentState:
    body = w.agents[aid]
    return AgentState(aid, body.team, role, BeliefBase.blank(w.width, w.height, aid, body.team, w.r_fov))


def _kinds(msgs, kind: MessageKind) -> list:
    return [m for m in msgs if m.kind is kind]


# ---------------------------------------------------------------- revise_target

def test_reachable_fresh_target_is_kept(world_from, cfg):
    b = omniscient(world_from(*_open(12, 12, {(1, 1): "A"})), agent=0)
    a = AgentState(0, 1, Role.HERDER, b, target=Target.exploration(Position(9, 9), 0))
    assert revise_target(a, cfg) == KEEP
    assert a.path.goal == Position(9, 9)
    assert a.planned_at == b.step and not a.gated


def test_old_target_goes_stale(world_from, cfg):
    b = omniscient(world_from(*_open(12, 12, {(1, 1): "A"})), agent=0, step=26)
    a = AgentState(0, 1, Role.HERDER, b, target=Target.exploration(Position(9, 9), 5))
    assert revise_target(a, cfg) == Drop(DropReason.STALE)


def test_walled_in_target_is_unreachable(world_from, cfg):
    ring = {(x, y): "#" for x in range(8, 11) for y in range(8, 11) if (x, y) != (9, 9)}
    b = omniscient(world_from(*_open(12, 12, {(1, 1): "A", **ring})), agent=0)
    a = AgentState(0, 1, Role.HERDER, b, target=Target.exploration(Position(9, 9), 0))
    assert revise_target(a, cfg) == Drop(DropReason.UNREACHABLE)


def test_standing_on_target_means_reached(world_from, cfg):
    b = omniscient(world_from(*_open(12, 12, {(4, 4): "A"})), agent=0)
    a = AgentState(0, 1, Role.HERDER, b, target=Target.exploration(Position(4, 4), 0))
    assert revise_target(a, cfg) == Drop(DropReason.REACHED)


def test_formation_without_its_herd_is_invalidated(world_from, cfg):
    b = omniscient(world_from(*_open(12, 12, {(1, 1): "A"})), agent=0)
    t = Target.formation(Position(5, 5), 0, (8.0, 8.0), 0)
    a = AgentState(0, 1, Role.HERDER, b, target=t)
    assert revise_target(a, cfg) == Drop(DropReason.INVALIDATED)


def _corralled(w: int, h: int, marks: dict) -> list:
    return _open(w, h, {**{(0, y): "1" for y in range(h)}, **marks})


def test_idle_post_is_held_on_arrival(world_from, cfg):
    b = omniscient(world_from(*_open(12, 12, {(4, 4): "A"})), agent=0)
    t = Target.idle(Position(4, 4), 0)
    a = AgentState(0, 1, Role.HERDER, b, target=t)
    assert revise_target(a, cfg) == KEEP
    assert a.target == t


def test_formation_is_held_on_arrival(world_from, cfg):
    b = omniscient(world_from(*_corralled(20, 20, {(10, 10): "c", (13, 10): "A"})), agent=0)
    a = AgentState(0, 1, Role.HERDER, b, target=Target.formation(Position(13, 10), 0, (10.0, 10.0), 0))
    assert revise_target(a, cfg) == KEEP
    assert a.target.kind is TargetKind.FORMATION
    assert a.target.pos == Position(13, 10)


def test_formation_follows_a_herd_that_moved(world_from, cfg):
    b = omniscient(world_from(*_corralled(20, 20, {(8, 10): "c", (13, 10): "A"})), agent=0)
    a = AgentState(0, 1, Role.HERDER, b, target=Target.formation(Position(13, 10), 0, (10.0, 10.0), 0))
    assert revise_target(a, cfg) == KEEP
    assert a.target.pos == Position(11, 10)
    assert a.target.anchor == (8.0, 10.0)
    assert a.team_targets[0] == a.target
    assert a.path.goal == Position(11, 10)


def test_formation_on_a_split_piece_is_kept(world_from, cfg):
    cows = {(x, 10): "c" for x in range(3, 27)}
    b = omniscient(world_from(*_corralled(30, 20, {**cows, (12, 16): "A"})), agent=0)
    a = AgentState(0, 1, Role.HERDER, b, target=Target.formation(Position(12, 12), 0, (5.5, 10.0), 0))
    assert revise_target(a, cfg) == KEEP
    assert a.target.kind is TargetKind.FORMATION
    assert a.target.anchor == (5.5, 10.0)


def test_moved_formation_target_is_announced(world_from, cfg):
    w = world_from(*_corralled(20, 20, {(8, 10): "c", (13, 10): "A"}))
    st = _fresh(w, 0, Role.HERDER)
    st.beliefs = omniscient(w, agent=0)
    st.take(Target.formation(Position(13, 10), 0, (10.0, 10.0), 0))
    a, act, out = agent_act(st, [], percept(w, 0), cfg)
    (m,) = _kinds(out, MessageKind.TARGET_ASSIGN)
    assert m.sender == 0 and m.agent == 0 and m.target == a.target
    assert a.target.pos == Position(11, 10)
    assert act is not Action.STAY


def test_unneeded_switch_holder_is_released(bundled, cfg):
    w = bundled("fence_gap")
    b = omniscient(w, agent=1)
    a = AgentState(1, 1, Role.HERDER, b, target=Target.switch(Position(6, 4), 0, Position(7, 4), 0))
    assert revise_target(a, cfg) == Drop(DropReason.RELEASED)


def test_needed_switch_holder_stays(bundled, cfg):
    w = bundled("fence_gap")
    b = omniscient(w, agent=1)
    a = AgentState(1, 1, Role.HERDER, b, target=Target.switch(Position(6, 4), 0, Position(7, 4), 0))
    a.team_targets[0] = Target.exploration(Position(15, 5), 0)
    assert revise_target(a, cfg) == KEEP


# ---------------------------------------------------------------- agent_act

def test_idle_herder_asks_and_waits(world_from, cfg):
    w = world_from(*_open(12, 12, {(5, 5): "A"}))
    a, act, out = agent_act(_fresh(w, 0, Role.HERDER), [], percept(w, 0), cfg)
    assert act is Action.STAY
    assert len(_kinds(out, MessageKind.BELIEF_SHARE)) == 1
    (req,) = _kinds(out, MessageKind.TARGET_REQUEST)
    assert req.agent == 0 and req.position == Position(5, 5)
    assert a.requested_at == 0


def test_request_resent_only_after_retry_gap(world_from, cfg):
    w = world_from(*_open(12, 12, {(5, 5): "A"}))
    a, _, _ = agent_act(_fresh(w, 0, Role.HERDER), [], percept(w, 0), cfg)
    w.step = 1
    a, _, out = agent_act(a, [], percept(w, 0), cfg)
    assert _kinds(out, MessageKind.TARGET_REQUEST) == []
    w.step = 3
    a, _, out = agent_act(a, [], percept(w, 0), cfg)
    assert len(_kinds(out, MessageKind.TARGET_REQUEST)) == 1


def test_assignment_is_taken(world_from, cfg):
    w = world_from(*_open(12, 12, {(5, 5): "A"}))
    t = Target.exploration(Position(9, 5), 0)
    a, act, out = agent_act(_fresh(w, 0, Role.HERDER), [Message.assign(3, 0, t)], percept(w, 0), cfg)
    assert a.target == t and a.team_targets[0] == t
    assert act.delta[0] == 1
    assert _kinds(out, MessageKind.TARGET_REQUEST) == []


def test_scout_picks_its_own_target_and_moves(world_from, cfg):
    w = world_from(*_open(30, 30, {(15, 15): "A"}), r_fov=3)
    a, act, out = agent_act(_fresh(w, 0, Role.SCOUT), [], percept(w, 0), cfg)
    assert a.target is not None and a.target.kind is TargetKind.EXPLORATION
    assert cheb(a.target.pos, (15, 15)) == 3
    assert act is not Action.STAY
    (m,) = _kinds(out, MessageKind.TARGET_ASSIGN)
    assert m.sender == 0 and m.agent == 0 and m.target == a.target


def test_scout_with_nothing_to_explore_turns_herder(world_from, cfg):
    w = world_from(*_open(5, 5, {(2, 2): "A"}))
    a, _, out = agent_act(_fresh(w, 0, Role.SCOUT), [], percept(w, 0), cfg)
    assert a.role is Role.HERDER
    assert len(_kinds(out, MessageKind.TARGET_REQUEST)) == 1


def test_leader_answers_every_request(world_from, cfg):
    w = world_from(*_open(20, 20, {(2, 2): "A", (10, 10): "A", (17, 17): "A"}), r_fov=3)
    inbox = [Message.request(1, Position(10, 10)), Message.request(2, Position(17, 17))]
    a, _, out = agent_act(_fresh(w, 0, Role.LEADER), inbox, percept(w, 0), cfg)
    assigns = _kinds(out, MessageKind.TARGET_ASSIGN)
    assert sorted(m.agent for m in assigns) == [0, 1, 2]
    assert a.target is not None
    assert set(a.team_targets) == {0, 1, 2}
    assert a.requests == {}


def test_dropped_target_leads_to_new_request(world_from, cfg):
    w = world_from(*_open(12, 12, {(4, 4): "A"}))
    st = _fresh(w, 0, Role.HERDER)
    st.target = Target.exploration(Position(4, 4), 0)
    st.team_targets[0] = st.target
    a, act, out = agent_act(st, [], percept(w, 0), cfg)
    assert a.target is None and 0 not in a.team_targets
    assert a.goal_retry
    assert len(_kinds(out, MessageKind.TARGET_REQUEST)) == 1


# ---------------------------------------------------------------- team

def _three():
    return _open(20, 20, {(2, 2): "A", (10, 10): "A", (17, 17): "A"})


def _tick(team: HerderTeam, w, t: int):
    w.step = t
    return team.act(t, {aid: percept(w, aid) for aid in sorted(w.agents)})


def test_roles_by_id():
    team = HerderTeam(1, [2, 0, 1], 20, 20, 3)
    assert [team.agents[i].role for i in (0, 1, 2)] == [Role.LEADER, Role.SCOUT, Role.HERDER]


def test_request_is_answered_next_step(world_from, cfg):
    w = world_from(*_three(), r_fov=3)
    team = HerderTeam(1, [0, 1, 2], 20, 20, 3, cfg)
    _tick(team, w, 0)
    assert any(m.kind is MessageKind.TARGET_REQUEST and m.sender == 2 for m in team.outbox)
    _tick(team, w, 1)
    (answer,) = [m for m in team.outbox if m.kind is MessageKind.TARGET_ASSIGN and m.agent == 2]
    assert answer.sender == 0
    assert team.agents[2].target is None
    _tick(team, w, 2)
    assert team.agents[2].target == answer.target


def test_shared_windows_reach_everyone(world_from, cfg):
    w = world_from(*_three(), r_fov=3)
    team = HerderTeam(1, [0, 1, 2], 20, 20, 3, cfg)
    _tick(team, w, 0)
    assert not team.agents[0].beliefs.known((17, 17))
    _tick(team, w, 1)
    for aid in (0, 1, 2):
        b = team.agents[aid].beliefs
        assert all(b.known(p) for p in [(2, 2), (10, 10), (17, 17)])
        assert b.ally_positions() == {0: Position(2, 2), 1: Position(10, 10), 2: Position(17, 17)}


def test_messages_never_go_back_to_sender(world_from, cfg):
    w = world_from(*_three(), r_fov=3)
    team = HerderTeam(1, [0, 1, 2], 20, 20, 3, cfg)
    _tick(team, w, 0)
    for aid, box in team.inbox.items():
        assert box and all(m.sender != aid for m in box)
        assert box == sorted(box, key=Message.sort_key)


def test_next_lowest_id_takes_over_lead(world_from, cfg):
    w = world_from(*_three(), r_fov=3)
    team = HerderTeam(1, [0, 1, 2], 20, 20, 3, cfg)
    del w.agents[0]
    acts = team.act(0, {aid: percept(w, aid) for aid in sorted(w.agents)})
    assert set(acts) == {1, 2}
    assert team.agents[1].role is Role.LEADER


def test_herders_never_wait_long_for_work(bundled, cfg):
    w = bundled("pasture_small", seed=7)
    ids = w.team_agents(1)
    team = HerderTeam(1, ids, w.width, w.height, w.r_fov, cfg)
    waiting = {aid: 0 for aid in ids}
    longest = 0
    for _ in range(120):
        acts = team.act(w.step, {aid: percept(w, aid) for aid in ids})
        w, _ = step(w, acts)
        for aid in ids:
            waiting[aid] = waiting[aid] + 1 if team.agents[aid].target is None else 0
            longest = max(longest, waiting[aid])
    assert longest <= 4
