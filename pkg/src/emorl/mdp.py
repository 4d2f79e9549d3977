"""Discrete state/action spaces, index encodings and the reward function.

States factor into game status, facial emotion and physiological arousal
(3 x 3 x 2 = 18); actions into the robot's facial representation and a
difficulty adjustment (3 x 3 = 9). Enum member order is the serialization
and index order, so datasets written here stay portable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

N_STATES = 18
N_ACTIONS = 9


class GameStatus(enum.Enum):
    """Game status from the robot's perspective."""

    LOSING = "losing"
    DRAW = "draw"
    WINNING = "winning"


class Emotion(enum.Enum):
    """Facial emotion; used both for the human (fe) and the robot face (fr)."""

    ANGRY = "angry"
    HAPPY = "happy"
    NEUTRAL = "neutral"


class Arousal(enum.Enum):
    ABSENT = "absent"
    PRESENT = "present"


class Difficulty(enum.Enum):
    CONSTANT = "constant"
    DECREASE = "decrease"
    INCREASE = "increase"


class Encoding(enum.Enum):
    """Network input encoding of a state."""

    FACTORED_ONEHOT = "factored_onehot"
    FULL_ONEHOT = "full_onehot"

    @property
    def dim(self) -> int:
        return 8 if self is Encoding.FACTORED_ONEHOT else N_STATES

    @classmethod
    def for_dim(cls, dim: int) -> "Encoding":
        for enc in cls:
            if enc.dim == dim:
                return enc
        raise ValueError(f"no observation encoding has {dim} dims")


def ordinal(member: enum.Enum) -> int:
    """Position of an enum member in its declaration order."""
    return list(type(member)).index(member)


def parse_token(enum_cls: type[enum.Enum], token: str) -> enum.Enum:
    """Map a lowercase serialization token to its enum member.

    Raises ValueError naming the offending token; there is no fallback.
    """
    try:
        return enum_cls(token)
    except ValueError:
        valid = ", ".join(m.value for m in enum_cls)
        raise ValueError(f"unknown token {token!r} (expected one of: {valid})") from None


@dataclass(frozen=True)
class State:
    gs: GameStatus
    fe: Emotion
    pa: Arousal

    @property
    def index(self) -> int:
        return state_index(self)

    @property
    def label(self) -> str:
        return f"{self.gs.value}/{self.fe.value}/{self.pa.value}"


@dataclass(frozen=True)
class Action:
    fr: Emotion
    da: Difficulty

    @property
    def index(self) -> int:
        return action_index(self)

    @property
    def label(self) -> str:
        return f"{self.fr.value}/{self.da.value}"


def state_index(s: State) -> int:
    return (ordinal(s.gs) * 3 + ordinal(s.fe)) * 2 + ordinal(s.pa)


def action_index(a: Action) -> int:
    return ordinal(a.fr) * 3 + ordinal(a.da)


def index_to_state(i: int) -> State:
    if not 0 <= i < N_STATES:
        raise IndexError(f"state index {i} out of range [0, {N_STATES})")
    rest, pa = divmod(int(i), 2)
    gs, fe = divmod(rest, 3)
    return State(list(GameStatus)[gs], list(Emotion)[fe], list(Arousal)[pa])


def index_to_action(j: int) -> Action:
    if not 0 <= j < N_ACTIONS:
        raise IndexError(f"action index {j} out of range [0, {N_ACTIONS})")
    fr, da = divmod(int(j), 3)
    return Action(list(Emotion)[fr], list(Difficulty)[da])


ALL_STATES: tuple[State, ...] = tuple(index_to_state(i) for i in range(N_STATES))
ALL_ACTIONS: tuple[Action, ...] = tuple(index_to_action(j) for j in range(N_ACTIONS))

# Component scores in tenths so the sums are exact before the final division.
# Draw and neutral contribute nothing.
_GAME_TENTHS = {GameStatus.LOSING: 3, GameStatus.DRAW: 0, GameStatus.WINNING: -5}
_EMOTION_TENTHS = {Emotion.HAPPY: 3, Emotion.ANGRY: -2, Emotion.NEUTRAL: 0}
_AROUSAL_TENTHS = {Arousal.PRESENT: 4, Arousal.ABSENT: -3}


def game_score(gs: GameStatus) -> float:
    return _GAME_TENTHS[gs] / 10


def emotion_score(fe: Emotion) -> float:
    return _EMOTION_TENTHS[fe] / 10


def arousal_score(pa: Arousal) -> float:
    return _AROUSAL_TENTHS[pa] / 10


def reward(next_state: State) -> float:
    """Reward for landing in ``next_state``; always within [-1, 1]."""
    tenths = (
        _GAME_TENTHS[next_state.gs]
        + _EMOTION_TENTHS[next_state.fe]
        + _AROUSAL_TENTHS[next_state.pa]
    )
    return tenths / 10


REWARDS = np.array([reward(s) for s in ALL_STATES])
REWARDS.setflags(write=False)


def encode_observation(s: State, enc: Encoding = Encoding.FACTORED_ONEHOT) -> np.ndarray:
    if enc is Encoding.FULL_ONEHOT:
        v = np.zeros(N_STATES)
        v[state_index(s)] = 1.0
        return v
    v = np.zeros(8)
    v[ordinal(s.gs)] = 1.0
    v[3 + ordinal(s.fe)] = 1.0
    v[6 + ordinal(s.pa)] = 1.0
    return v


@lru_cache(maxsize=None)
def feature_table(enc: Encoding) -> np.ndarray:
    """Read-only (18, dim) matrix whose row i encodes state i."""
    table = np.stack([encode_observation(s, enc) for s in ALL_STATES])
    table.setflags(write=False)
    return table
