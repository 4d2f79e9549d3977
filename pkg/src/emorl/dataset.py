"""Transition datasets: storage, JSON-lines serialization, sampling and diagnostics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

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
    parse_token,
)

FIELDS = (
    "episode", "t", "gs", "fe", "pa", "fr", "da",
    "reward", "next_gs", "next_fe", "next_pa", "terminal",
)


class DatasetError(ValueError):
    """A dataset violates a structural invariant or fails to parse."""


@dataclass(frozen=True)
class Transition:
    episode: int
    t: int
    state: State
    action: Action
    reward: float
    next_state: State
    terminal: bool = False

    def to_record(self) -> dict:
        return {
            "episode": self.episode,
            "t": self.t,
            "gs": self.state.gs.value,
            "fe": self.state.fe.value,
            "pa": self.state.pa.value,
            "fr": self.action.fr.value,
            "da": self.action.da.value,
            "reward": self.reward,
            "next_gs": self.next_state.gs.value,
            "next_fe": self.next_state.fe.value,
            "next_pa": self.next_state.pa.value,
            "terminal": self.terminal,
        }


class Batch(NamedTuple):
    """Column view of a set of transitions, indexed by state/action ids."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    terminal: np.ndarray

    def __len__(self) -> int:
        return len(self.s)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        return cls(
            np.array([tr.state.index for tr in transitions], dtype=np.int64),
            np.array([tr.action.index for tr in transitions], dtype=np.int64),
            np.array([tr.reward for tr in transitions], dtype=np.float64),
            np.array([tr.next_state.index for tr in transitions], dtype=np.int64),
            np.array([tr.terminal for tr in transitions], dtype=bool),
        )

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(*(col[idx] for col in self))


@dataclass(frozen=True)
class TransitionDataset:
    """Ordered episodes of transitions.

    An empty dataset is representable (the statistics are defined on it) but
    cannot be saved, loaded or sampled from.
    """

    transitions: tuple[Transition, ...] = ()
    _columns: Batch = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "_columns", Batch.from_transitions(self.transitions))

    def __len__(self) -> int:
        return len(self.transitions)

    @property
    def columns(self) -> Batch:
        return self._columns

    @property
    def episode_ids(self) -> list[int]:
        return sorted({tr.episode for tr in self.transitions})

    @property
    def episode_count(self) -> int:
        return len(self.episode_ids)

    @property
    def step_counts(self) -> list[int]:
        counts: dict[int, int] = {}
        for tr in self.transitions:
            counts[tr.episode] = counts.get(tr.episode, 0) + 1
        return [counts[e] for e in sorted(counts)]

    def validate(self) -> None:
        """Check that episodes are numbered 0..N-1 and each has t = 0, 1, ..."""
        if not self.transitions:
            raise DatasetError("episode 0 has no transitions")
        expected_t: dict[int, int] = {}
        for tr in self.transitions:
            want = expected_t.get(tr.episode, 0)
            if tr.t != want:
                raise DatasetError(
                    f"episode {tr.episode}: expected t={want}, found t={tr.t}"
                )
            expected_t[tr.episode] = want + 1
        for e in range(max(expected_t) + 1):
            if e not in expected_t:
                raise DatasetError(f"episode {e} has no transitions")

    def concat(self, other: "TransitionDataset") -> "TransitionDataset":
        """Append ``other``'s episodes after ours, renumbering them."""
        offset = max(self.episode_ids, default=-1) + 1
        shifted = (
            Transition(tr.episode + offset, tr.t, tr.state, tr.action,
                       tr.reward, tr.next_state, tr.terminal)
            for tr in other.transitions
        )
        return TransitionDataset(self.transitions + tuple(shifted))


# -- serialization -----------------------------------------------------------

def dumps_record(tr: Transition) -> str:
    return json.dumps(tr.to_record(), separators=(",", ":"))


def save(d: TransitionDataset, path: str | Path) -> None:
    d.validate()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tr in d.transitions:
            fh.write(dumps_record(tr))
            fh.write("\n")


def _field(rec: dict, name: str, lineno: int):
    if name not in rec:
        raise DatasetError(f"line {lineno}: missing field {name!r}")
    return rec[name]


def _enum_field(rec: dict, name: str, enum_cls, lineno: int):
    value = _field(rec, name, lineno)
    if not isinstance(value, str):
        raise DatasetError(f"line {lineno}: field {name!r}: expected a string token, got {value!r}")
    try:
        return parse_token(enum_cls, value)
    except ValueError as exc:
        raise DatasetError(f"line {lineno}: field {name!r}: {exc}") from None


def _int_field(rec: dict, name: str, lineno: int) -> int:
    value = _field(rec, name, lineno)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise DatasetError(f"line {lineno}: field {name!r}: expected a non-negative integer, got {value!r}")
    return value


def parse_record(line: str, lineno: int) -> Transition:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"line {lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(rec, dict):
        raise DatasetError(f"line {lineno}: expected a JSON object")
    unknown = sorted(set(rec) - set(FIELDS))
    if unknown:
        raise DatasetError(f"line {lineno}: unknown field {unknown[0]!r}")

    r = _field(rec, "reward", lineno)
    if isinstance(r, bool) or not isinstance(r, (int, float)) or not -1.0 <= r <= 1.0:
        raise DatasetError(f"line {lineno}: field 'reward': expected a number in [-1, 1], got {r!r}")
    terminal = _field(rec, "terminal", lineno)
    if not isinstance(terminal, bool):
        raise DatasetError(f"line {lineno}: field 'terminal': expected true/false, got {terminal!r}")

    return Transition(
        episode=_int_field(rec, "episode", lineno),
        t=_int_field(rec, "t", lineno),
        state=State(
            _enum_field(rec, "gs", GameStatus, lineno),
            _enum_field(rec, "fe", Emotion, lineno),
            _enum_field(rec, "pa", Arousal, lineno),
        ),
        action=Action(
            _enum_field(rec, "fr", Emotion, lineno),
            _enum_field(rec, "da", Difficulty, lineno),
        ),
        reward=float(r),
        next_state=State(
            _enum_field(rec, "next_gs", GameStatus, lineno),
            _enum_field(rec, "next_fe", Emotion, lineno),
            _enum_field(rec, "next_pa", Arousal, lineno),
        ),
        terminal=terminal,
    )


def load(path: str | Path) -> TransitionDataset:
    """Read a JSON-lines dataset; blank lines are skipped."""
    transitions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                transitions.append(parse_record(line, lineno))
    d = TransitionDataset(tuple(transitions))
    d.validate()
    return d


# -- sampling ----------------------------------------------------------------

def sample_indices(d: TransitionDataset, n: int, rng: np.random.Generator) -> np.ndarray:
    if len(d) == 0:
        raise DatasetError("cannot sample from an empty dataset")
    if n < 1:
        raise ValueError(f"minibatch size must be >= 1, got {n}")
    return rng.integers(0, len(d), size=n)


def sample_minibatch(d: TransitionDataset, n: int, rng: np.random.Generator) -> list[Transition]:
    """``n`` uniform draws with replacement."""
    return [d.transitions[i] for i in sample_indices(d, n, rng)]


# -- diagnostics -------------------------------------------------------------

def visit_counts(d: TransitionDataset) -> np.ndarray:
    counts = np.zeros((N_STATES, N_ACTIONS), dtype=np.int64)
    np.add.at(counts, (d.columns.s, d.columns.a), 1)
    return counts


def exploration_rate(d: TransitionDataset) -> float:
    return float(np.count_nonzero(visit_counts(d))) / (N_STATES * N_ACTIONS)


def reward_trend(d: TransitionDataset, window: int = 1) -> list[tuple[int, float]]:
    """Per-timestep mean reward across episodes, then a centered moving average.

    The averaging window is truncated at both ends of the series.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for tr in d.transitions:
        sums[tr.t] = sums.get(tr.t, 0.0) + tr.reward
        counts[tr.t] = counts.get(tr.t, 0) + 1
    ts = sorted(sums)
    means = [sums[t] / counts[t] for t in ts]
    half_lo = (window - 1) // 2
    half_hi = window - 1 - half_lo
    out = []
    for i, t in enumerate(ts):
        lo, hi = max(0, i - half_lo), min(len(means), i + half_hi + 1)
        out.append((t, math.fsum(means[lo:hi]) / (hi - lo)))
    return out


def initial_states(d: TransitionDataset) -> list[State]:
    return [tr.state for tr in d.transitions if tr.t == 0]


@dataclass(frozen=True)
class DatasetStats:
    visit_counts: np.ndarray
    exploration_rate: float
    reward_trend: list[tuple[int, float]]
    episode_length_mean: float
    episode_length_sd: float
    episode_count: int
    total_steps: int

    def summary(self) -> dict:
        return {
            "episodes": self.episode_count,
            "total_steps": self.total_steps,
            "exploration_rate": self.exploration_rate,
            "visited_pairs": int(np.count_nonzero(self.visit_counts)),
            "max_visits": int(self.visit_counts.max()),
            "episode_length_mean": self.episode_length_mean,
            "episode_length_sd": self.episode_length_sd,
        }


def compute_stats(d: TransitionDataset, window: int = 1) -> DatasetStats:
    lengths = np.array(d.step_counts, dtype=float)
    # sample standard deviation; zero for a single episode
    sd = float(lengths.std(ddof=1)) if len(lengths) > 1 else 0.0
    return DatasetStats(
        visit_counts=visit_counts(d),
        exploration_rate=exploration_rate(d),
        reward_trend=reward_trend(d, window),
        episode_length_mean=float(lengths.mean()) if len(lengths) else 0.0,
        episode_length_sd=sd,
        episode_count=d.episode_count,
        total_steps=len(d),
    )


def write_visit_counts_csv(counts: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["state"] + [a.label for a in ALL_ACTIONS])
        for s, row in zip(ALL_STATES, counts):
            w.writerow([s.label] + [int(c) for c in row])


def write_reward_trend_csv(trend: Iterable[tuple[int, float]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "mean_reward"])
        for t, m in trend:
            w.writerow([t, repr(float(m))])


def write_stats(stats: DatasetStats, out_dir: str | Path) -> None:
    """Write visit_counts.csv, reward_trend.csv and summary.json into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_visit_counts_csv(stats.visit_counts, out / "visit_counts.csv")
    write_reward_trend_csv(stats.reward_trend, out / "reward_trend.csv")
    (out / "summary.json").write_text(json.dumps(stats.summary(), indent=2) + "\n", encoding="utf-8")
