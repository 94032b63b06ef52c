from __future__ import annotations
import random

from app.core.world import AgentBody, Position, Terrain, TerrainKind, percept
from app.services.beliefs import (
    BeliefBase, Fact, FactKind, Message, MessageKind, Sighting, apply_messages, integrate_percept,
)


def _blank(w, agent: int = 0) -> BeliefBase:
    body = w.agents[agent]
    return BeliefBase.blank(w.width, w.height, agent, body.team, w.r_fov)


OPEN = ["." * 12 for _ in range(12)]


def _rows(marks: dict) -> list:
    rows = [list(r) for r in OPEN]
    for (x, y), ch in marks.items():
        rows[y][x] = ch
    return ["".join(r) for r in rows]


# ---------------------------------------------------------------- integrate_percept

def test_first_percept_everything_is_new(world_from):
    w = world_from(*_rows({(5, 5): "A", (6, 6): "c", (3, 4): "A"}), r_fov=2)
    p = percept(w, 1)
    b, facts = integrate_percept(_blank(w, 1), p)
    cells = [f for f in facts if f.kind is FactKind.CELL]
    entities = [f for f in facts if f.kind is not FactKind.CELL]
    assert len(cells) == len(p.visible) == 25
    assert len(entities) == sum(1 for vc in p.visible if vc.occupant)
    assert b.self_pos == Position(5, 5)
    assert b.known((5, 5)) and not b.known((0, 0))
    assert b.believed_cows() == [Position(6, 6)]
    assert (b.last_seen[p.pos.y - 2:p.pos.y + 3, p.pos.x - 2:p.pos.x + 3] == 0).all()


def test_identical_percept_twice_is_quiet(world_from):
    w = world_from(*_rows({(5, 5): "A", (6, 6): "c"}))
    p = percept(w, 0)
    b, _ = integrate_percept(_blank(w), p)
    b2, facts = integrate_percept(b, p)
    assert facts == []
    assert b2 == b


def test_stale_percept_ignored(world_from):
    w = world_from(*_rows({(5, 5): "A"}))
    b, _ = integrate_percept(_blank(w), percept(w, 0))
    b.step = 4
    b2, facts = integrate_percept(b, percept(w, 0))
    assert facts == [] and b2 is b


def test_missing_cow_is_evicted_and_broadcast(world_from):
    w = world_from(*_rows({(5, 5): "A", (4, 4): "c"}))
    w.step = 10
    b, _ = integrate_percept(_blank(w), percept(w, 0))
    assert b.cows[0] == Sighting(Position(4, 4), 10)
    w.cows[0] = Position(11, 11)  # outside the window now
    w.step = 15
    b, facts = integrate_percept(b, percept(w, 0))
    assert b.cows[0] == Sighting(None, 15)
    assert Fact(FactKind.COW, 0, None, 15) in facts
    assert b.believed_cows() == []


def test_cow_outside_window_is_kept(world_from):
    w = world_from(*_rows({(1, 1): "A", (3, 3): "c"}))
    b, _ = integrate_percept(_blank(w), percept(w, 0))
    w.agents[0] = AgentBody(Position(10, 10), 1)
    w.step = 3
    b, facts = integrate_percept(b, percept(w, 0))
    assert b.believed_cows() == [Position(3, 3)]
    assert not any(f.kind is FactKind.COW for f in facts)


def test_fence_state_changes_are_facts(world_from):
    w = world_from("A..#", ".S.F", "...F", "..SF", r_fov=3)
    b, facts = integrate_percept(_blank(w), percept(w, 0))
    assert Fact(FactKind.FENCE, 0, False, 0) in facts
    assert b.closed_fence_mask()[1, 3]
    w.fences[0] = True
    w.step = 1
    b, facts = integrate_percept(b, percept(w, 0))
    assert [f for f in facts if f.kind is FactKind.FENCE] == [Fact(FactKind.FENCE, 0, True, 1)]
    assert not b.closed_fence_mask().any()


# ---------------------------------------------------------------- apply_messages

def _share(sender: int, *facts: Fact) -> Message:
    return Message.share(sender, facts)


def test_same_step_known_fact_changes_nothing(world_from):
    w = world_from(*_rows({(5, 5): "A", (6, 6): "c"}))
    b, facts = integrate_percept(_blank(w), percept(w, 0))
    assert apply_messages(b, [_share(1, *facts)]) == b


def test_newest_cow_position_wins_in_any_order(world_from):
    w = world_from(*_rows({(5, 5): "A"}))
    b = _blank(w)
    old = _share(1, Fact(FactKind.COW, 3, Position(2, 2), 7))
    new = _share(2, Fact(FactKind.COW, 3, Position(8, 1), 9))
    for msgs in ([old, new], [new, old]):
        assert apply_messages(b, msgs).cows[3] == Sighting(Position(8, 1), 9)


def test_target_messages_do_not_touch_beliefs(world_from):
    w = world_from(*_rows({(5, 5): "A"}))
    b = _blank(w)
    assert apply_messages(b, [Message.request(1, Position(0, 0))]) is b


def _random_facts(rng: random.Random, n: int) -> list:
    terrains = [Terrain(TerrainKind.EMPTY), Terrain(TerrainKind.OBSTACLE), Terrain(TerrainKind.CORRAL, 1)]
    out = []
    for _ in range(n):
        kind = rng.choice(list(FactKind))
        step = rng.randint(0, 5)
        if kind is FactKind.CELL:
            pos = Position(rng.randrange(12), rng.randrange(12))
            # a cell's terrain never changes, so every report of it agrees
            out.append(Fact(kind, pos, terrains[(pos.x * 7 + pos.y) % 3], step))
        elif kind is FactKind.FENCE:
            out.append(Fact(kind, rng.randrange(3), rng.random() < 0.5, step))
        else:
            val = None if rng.random() < 0.2 else Position(rng.randrange(12), rng.randrange(12))
            out.append(Fact(kind, rng.randrange(4), val, step))
    return out


def test_merge_is_commutative_and_idempotent(world_from):
    w = world_from(*_rows({(5, 5): "A"}))
    rng = random.Random(17)
    for _ in range(50):
        base = _blank(w)
        facts = _random_facts(rng, 30)
        msgs = [_share(i % 3 + 1, *facts[i::3]) for i in range(3)]
        shuffled = msgs[:]
        rng.shuffle(shuffled)
        a = apply_messages(base, msgs)
        b = apply_messages(base, list(reversed(msgs)))
        c = apply_messages(base, shuffled)
        assert a == b == c
        assert apply_messages(a, msgs) == a


def test_known_cells_never_revert(world_from):
    w = world_from(*_rows({(5, 5): "A"}))
    b, _ = integrate_percept(_blank(w), percept(w, 0))
    before = b.kinds != -1
    b2 = apply_messages(b, [_share(1, *_random_facts(random.Random(4), 40))])
    assert ((b2.kinds != -1) | ~before).all()


def test_message_order_key():
    msgs = [
        Message.assign(0, 2, None),
        Message.request(2, Position(0, 0)),
        Message.share(0, ()),
        Message.share(1, ()),
    ]
    ordered = sorted(msgs, key=Message.sort_key)
    assert [(m.sender, m.kind) for m in ordered] == [
        (0, MessageKind.BELIEF_SHARE), (0, MessageKind.TARGET_ASSIGN),
        (1, MessageKind.BELIEF_SHARE), (2, MessageKind.TARGET_REQUEST),
    ]
