"""Stochastic stand-in for the participant and the checkers game.

The simulator factorizes the next-state distribution as

    P(s' | s, a) = P(gs' | gs, da) * P(fe' | gs', fr) * P(pa' | gs', da)

so it is Markov in the 18 observed states and value iteration over it is
exact. Difficulty level itself is not observed; its effect lives in the
per-adjustment game-status tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mdp
from .dataset import Transition, TransitionDataset
from .mdp import (
    ALL_ACTIONS,
    ALL_STATES,
    N_ACTIONS,
    N_STATES,
    Action,
    Arousal,
    Difficulty,
    Emotion,
    GameStatus,
    State,
    ordinal,
    parse_token,
)
from .seeding import child_rng

_STOCH_TOL = 1e-9


class ConfigError(ValueError):
    pass


class OracleError(RuntimeError):
    """Value iteration hit its iteration cap (should be impossible for gamma < 1)."""


def _default_gs_table() -> np.ndarray:
    # [da, gs, gs'] with gs order (losing, draw, winning)
    t = np.empty((3, 3, 3))
    t[ordinal(Difficulty.CONSTANT)] = [[0.60, 0.30, 0.10], [0.25, 0.50, 0.25], [0.10, 0.30, 0.60]]
    t[ordinal(Difficulty.INCREASE)] = [[0.45, 0.35, 0.20], [0.15, 0.45, 0.40], [0.05, 0.20, 0.75]]
    t[ordinal(Difficulty.DECREASE)] = [[0.75, 0.20, 0.05], [0.40, 0.45, 0.15], [0.20, 0.35, 0.45]]
    return t


def _default_fe_table() -> np.ndarray:
    # [gs', fr, fe'] with emotion order (angry, happy, neutral)
    rows = {
        GameStatus.LOSING: {Emotion.HAPPY: (0.05, 0.70, 0.25), Emotion.NEUTRAL: (0.10, 0.50, 0.40),
                            Emotion.ANGRY: (0.25, 0.35, 0.40)},
        GameStatus.DRAW: {Emotion.HAPPY: (0.10, 0.50, 0.40), Emotion.NEUTRAL: (0.15, 0.35, 0.50),
                          Emotion.ANGRY: (0.30, 0.20, 0.50)},
        GameStatus.WINNING: {Emotion.HAPPY: (0.30, 0.25, 0.45), Emotion.NEUTRAL: (0.35, 0.15, 0.50),
                             Emotion.ANGRY: (0.50, 0.10, 0.40)},
    }
    t = np.empty((3, 3, 3))
    for gs, by_fr in rows.items():
        for fr, dist in by_fr.items():
            t[ordinal(gs), ordinal(fr)] = dist
    return t


def _default_pa_base() -> np.ndarray:
    return np.array([0.60, 0.70, 0.40])  # losing, draw, winning


def _default_pa_shift() -> np.ndarray:
    return np.array([0.0, -0.1, 0.1])  # constant, decrease, increase


@dataclass(frozen=True)
class SimConfig:
    """Simulator tables and episode layout.

    Arrays are indexed by enum ordinal:
    ``gs_table[da, gs, gs']``, ``fe_table[gs', fr, fe']``, ``pa_base[gs']``
    (probability arousal is present) and ``pa_da_shift[da]``.
    """

    gs_table: np.ndarray = field(default_factory=_default_gs_table)
    fe_table: np.ndarray = field(default_factory=_default_fe_table)
    pa_base: np.ndarray = field(default_factory=_default_pa_base)
    pa_da_shift: np.ndarray = field(default_factory=_default_pa_shift)
    episode_length_range: tuple[int, int] = (35, 58)
    episode_count: int = 5
    start_state: State = State(GameStatus.DRAW, Emotion.NEUTRAL, Arousal.ABSENT)

    def __post_init__(self):
        for name, shape in (("gs_table", (3, 3, 3)), ("fe_table", (3, 3, 3)),
                            ("pa_base", (3,)), ("pa_da_shift", (3,))):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ConfigError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        for name in ("gs_table", "fe_table"):
            arr = getattr(self, name)
            if (arr < 0).any() or not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} has negative or non-finite entries")
            bad = np.abs(arr.sum(axis=-1) - 1.0) > _STOCH_TOL
            if bad.any():
                idx = tuple(int(i) for i in np.argwhere(bad)[0])
                raise ConfigError(f"{name} row {idx} sums to {arr.sum(axis=-1)[idx]!r}, not 1")
        if ((self.pa_base < 0) | (self.pa_base > 1)).any():
            raise ConfigError("pa_base entries must be probabilities in [0, 1]")
        lo, hi = (int(x) for x in self.episode_length_range)
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid episode_length_range {self.episode_length_range!r}")
        object.__setattr__(self, "episode_length_range", (lo, hi))
        if int(self.episode_count) < 1:
            raise ConfigError("episode_count must be >= 1")

    def pa_present(self, gs_next: int, da: int) -> float:
        return float(np.clip(self.pa_base[gs_next] + self.pa_da_shift[da], 0.0, 1.0))

    # -- JSON --------------------------------------------------------------

    def to_json_dict(self) -> dict:
        gs_names = [g.value for g in GameStatus]
        em_names = [e.value for e in Emotion]
        da_names = [d.value for d in Difficulty]
        return {
            "gs_table": {da: {gs: list(map(float, self.gs_table[i, j])) for j, gs in enumerate(gs_names)}
                         for i, da in enumerate(da_names)},
            "fe_table": {gs: {fr: list(map(float, self.fe_table[i, j])) for j, fr in enumerate(em_names)}
                         for i, gs in enumerate(gs_names)},
            "pa_base": {gs: float(self.pa_base[i]) for i, gs in enumerate(gs_names)},
            "pa_da_shift": {da: float(self.pa_da_shift[i]) for i, da in enumerate(da_names)},
            "episode_length_range": list(self.episode_length_range),
            "episode_count": self.episode_count,
            "start_state": {"gs": self.start_state.gs.value, "fe": self.start_state.fe.value,
                            "pa": self.start_state.pa.value},
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SimConfig":
        """Build a config from a (possibly partial) JSON document over the defaults."""
        if not isinstance(doc, dict):
            raise ConfigError("simulator config must be a JSON object")
        known = {"gs_table", "fe_table", "pa_base", "pa_da_shift",
                 "episode_length_range", "episode_count", "start_state"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown simulator config key {unknown[0]!r}")
        base = cls()
        kw = {}
        try:
            if "gs_table" in doc:
                t = np.array(base.gs_table)
                for da, rows in doc["gs_table"].items():
                    for gs, dist in rows.items():
                        t[ordinal(parse_token(Difficulty, da)), ordinal(parse_token(GameStatus, gs))] = dist
                kw["gs_table"] = t
            if "fe_table" in doc:
                t = np.array(base.fe_table)
                for gs, rows in doc["fe_table"].items():
                    for fr, dist in rows.items():
                        t[ordinal(parse_token(GameStatus, gs)), ordinal(parse_token(Emotion, fr))] = dist
                kw["fe_table"] = t
            if "pa_base" in doc:
                t = np.array(base.pa_base)
                for gs, p in doc["pa_base"].items():
                    t[ordinal(parse_token(GameStatus, gs))] = p
                kw["pa_base"] = t
            if "pa_da_shift" in doc:
                t = np.array(base.pa_da_shift)
                for da, p in doc["pa_da_shift"].items():
                    t[ordinal(parse_token(Difficulty, da))] = p
                kw["pa_da_shift"] = t
            if "episode_length_range" in doc:
                kw["episode_length_range"] = tuple(doc["episode_length_range"])
            if "episode_count" in doc:
                kw["episode_count"] = int(doc["episode_count"])
            if "start_state" in doc:
                ss = doc["start_state"]
                kw["start_state"] = State(parse_token(GameStatus, ss["gs"]),
                                          parse_token(Emotion, ss["fe"]),
                                          parse_token(Arousal, ss["pa"]))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise ConfigError(f"invalid simulator config: {exc}") from None
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "SimConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
        return cls.from_json_dict(doc)


def transition_distribution(s: State, a: Action, cfg: SimConfig) -> np.ndarray:
    """Probability vector over the 18 next states."""
    gs, da, fr = ordinal(s.gs), ordinal(a.da), ordinal(a.fr)
    present = np.clip(cfg.pa_base + cfg.pa_da_shift[da], 0.0, 1.0)
    p_pa = np.stack([1.0 - present, present], axis=1)  # [gs', pa'] in (absent, present) order
    # state index order is (gs', fe', pa') lexicographic, matching the einsum output
    return np.einsum("g,gf,gp->gfp", cfg.gs_table[da, gs], cfg.fe_table[:, fr], p_pa).reshape(N_STATES)


def transition_tensor(cfg: SimConfig) -> np.ndarray:
    """``P[s, a, s']`` for every state/action pair."""
    return np.stack([
        np.stack([transition_distribution(s, a, cfg) for a in ALL_ACTIONS])
        for s in ALL_STATES
    ])


def step(s: State, a: Action, cfg: SimConfig, rng: np.random.Generator) -> State:
    p = transition_distribution(s, a, cfg)
    return ALL_STATES[_draw(p, rng)]


def _draw(p: np.ndarray, rng: np.random.Generator) -> int:
    # inverse-CDF on one uniform; clamps away the float tail of cumsum
    k = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(k, len(p) - 1)


def _rollout(P: np.ndarray, start: int, episode: int, length: int,
             rng: np.random.Generator) -> list[Transition]:
    out = []
    s = start
    for t in range(length):
        a = int(rng.integers(0, N_ACTIONS))
        s2 = _draw(P[s, a], rng)
        nxt = ALL_STATES[s2]
        out.append(Transition(episode, t, ALL_STATES[s], ALL_ACTIONS[a], mdp.reward(nxt), nxt, False))
        s = s2
    return out


def generate_dataset(cfg: SimConfig, seed: int) -> TransitionDataset:
    """Roll out the uniform-random behaviour policy for ``cfg.episode_count`` episodes.

    Every episode starts at ``cfg.start_state``. Episodes end by truncation,
    so no transition is marked terminal.
    """
    rng = child_rng(seed, "dataset")
    P = transition_tensor(cfg)
    lo, hi = cfg.episode_length_range
    transitions = []
    for ep in range(cfg.episode_count):
        length = int(rng.integers(lo, hi + 1))
        transitions += _rollout(P, cfg.start_state.index, ep, length, rng)
    return TransitionDataset(tuple(transitions))


def generate_steps(cfg: SimConfig, total_steps: int, seed: int) -> TransitionDataset:
    """Like generate_dataset, but keeps adding episodes until ``total_steps``.

    The last episode is cut short to hit the count exactly.
    """
    rng = child_rng(seed, "dataset")
    P = transition_tensor(cfg)
    lo, hi = cfg.episode_length_range
    transitions: list[Transition] = []
    ep = 0
    while len(transitions) < total_steps:
        length = min(int(rng.integers(lo, hi + 1)), total_steps - len(transitions))
        transitions += _rollout(P, cfg.start_state.index, ep, length, rng)
        ep += 1
    return TransitionDataset(tuple(transitions))


@dataclass(frozen=True)
class QTable:
    """Tabular Q-function over (state index, action index)."""

    values: np.ndarray
    residuals: tuple[float, ...] = ()

    @property
    def greedy_policy(self) -> np.ndarray:
        return np.argmax(self.values, axis=1)

    def q_values(self, state_idx: np.ndarray) -> np.ndarray:
        return self.values[np.asarray(state_idx)]


def exact_q_oracle(cfg: SimConfig, gamma: float = 0.99, tol: float = 1e-10,
                   rewards: np.ndarray | None = None, max_iter: int = 1_000_000) -> QTable:
    """Value iteration on the exact simulator MDP.

    ``rewards`` overrides the per-next-state reward vector (defaults to the
    task reward). ``residuals`` holds the max-norm change of every sweep.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = transition_tensor(cfg)
    r = mdp.REWARDS if rewards is None else np.asarray(rewards, dtype=float)
    q = np.zeros((N_STATES, N_ACTIONS))
    residuals = []
    for _ in range(max_iter):
        q_new = P @ (r + gamma * q.max(axis=1))
        diff = float(np.max(np.abs(q_new - q)))
        residuals.append(diff)
        q = q_new
        if diff < tol:
            return QTable(q, tuple(residuals))
    raise OracleError(f"value iteration did not reach tol={tol} within {max_iter} sweeps")
