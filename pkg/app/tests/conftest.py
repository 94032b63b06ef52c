from __future__ import annotations
from typing import Callable, Optional

import pytest

from app.core.world import WorldState, load_map
from app.services.beliefs import BeliefBase, FenceBelief, Sighting, _KIND_CODE
from app.utils.config import MAPS_DIR, get_cfg


def grid(*rows: str, r_fov: int = 2) -> str:
    return f"{len(rows[0])} {len(rows)} {r_fov}\n" + "\n".join(rows) + "\n"


@pytest.fixture
def cfg():
    return get_cfg()


@pytest.fixture
def world_from(cfg) -> Callable[..., WorldState]:
    def build(*rows: str, r_fov: int = 2, seed: int = 0) -> WorldState:
        return load_map(grid(*rows, r_fov=r_fov), cfg, seed=seed)
    return build


@pytest.fixture
def bundled(cfg) -> Callable[..., WorldState]:
    def load(name: str, seed: int = 0) -> WorldState:
        return load_map((MAPS_DIR / f"{name}.txt").read_text(encoding="utf-8"), cfg, seed=seed)
    return load


def omniscient(world: WorldState, agent: int, step: Optional[int] = None) -> BeliefBase:
    """Beliefs of `agent` that know the whole map, every cow and every agent."""
    body = world.agents[agent]
    b = BeliefBase.blank(world.width, world.height, agent, body.team, world.r_fov, body.pos)
    b.step = world.step if step is None else step
    for i, t in enumerate(world.terrain):
        x, y = i % world.width, i // world.width
        b.kinds[y, x] = _KIND_CODE[t.kind]
        b.refs[y, x] = t.ref or 0
        b.last_seen[y, x] = b.step
    for cid, p in world.cows.items():
        b.cows[cid] = Sighting(p, b.step)
    for aid, ab in world.agents.items():
        book = b.allies if ab.team == body.team else b.opponents
        book[aid] = Sighting(ab.pos, b.step)
    for fid, is_open in world.fences.items():
        b.fences[fid] = FenceBelief(is_open, b.step)
    return b
