# details: baseline team controllers: idle and uniform-random legal moves
from __future__ import annotations
import random
from typing import Dict, Mapping, Optional, Sequence

from ..core.world import Action, Percept, legal_actions


class IdleTeam:
    def __init__(self, team: int, agent_ids: Sequence[int] = ()):
        self.team = team

    def act(self, step: int, percepts: Mapping[int, Percept]) -> Dict[int, Action]:
        return {aid: Action.STAY for aid in percepts}

    def close(self) -> None:
        pass


class RandomTeam:
    """Uniform legal moves, drawn from the world's own rng in ascending agent id.

    The driver binds the current world rng before every act, so the draws sit in
    the same stream as the cows' tie-breaks and a replay can redo them.
    """

    draws_from_world = True

    def __init__(self, team: int, agent_ids: Sequence[int] = ()):
        self.team = team
        self.rng: Optional[random.Random] = None

    def bind(self, rng: random.Random) -> None:
        self.rng = rng

    def act(self, step: int, percepts: Mapping[int, Percept]) -> Dict[int, Action]:
        if self.rng is None:
            raise RuntimeError("RandomTeam is not bound to a world rng")
        return {aid: self.rng.choice(legal_actions(percepts[aid])) for aid in sorted(percepts)}

    def close(self) -> None:
        pass
