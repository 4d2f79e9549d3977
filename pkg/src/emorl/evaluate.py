"""Initial-state value estimates, the overestimation bound, and the comparison report."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .algos import ALGOS, AlgoConfig, greedy_indices, q_values
from .dataset import DatasetError, TransitionDataset, initial_states
from .network import QModel

if TYPE_CHECKING:
    from .train import RunResult

DEFAULT_EPISODE_LEN = 60
DEFAULT_GAMMA = 0.99
DEFAULT_RMAX = 1.0


def initial_state_value(model, cfg: AlgoConfig, data: TransitionDataset) -> float:
    """Mean of Q(s0, pi(s0)) over every episode start in ``data``.

    ``model`` is a QModel (online network, eval mode) or anything with a
    ``q_values(state_idx)`` method such as a tabular oracle.
    """
    starts = np.array([s.index for s in initial_states(data)], dtype=np.int64)
    if starts.size == 0:
        raise DatasetError("cannot evaluate on a dataset without episodes")
    # evaluate each distinct start once, weight by multiplicity
    uniq, counts = np.unique(starts, return_counts=True)
    actions = greedy_indices(model, uniq, cfg)
    if isinstance(model, QModel):
        q = q_values(model, uniq)
    else:
        q = model.q_values(uniq)
    chosen = q[np.arange(len(uniq)), actions]
    return float(np.dot(chosen, counts) / counts.sum())


def upper_bound(episode_len: int = DEFAULT_EPISODE_LEN, gamma: float = DEFAULT_GAMMA,
                r_max: float = DEFAULT_RMAX) -> float:
    """Discounted return of receiving ``r_max`` for ``episode_len`` steps."""
    if episode_len < 1:
        raise ValueError("episode_len must be >= 1")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    if gamma == 1.0:
        return episode_len * r_max
    return r_max * (1.0 - gamma ** episode_len) / (1.0 - gamma)


def survives(value: float | None, bound: float) -> bool:
    return value is not None and math.isfinite(value) and value <= bound


@dataclass(frozen=True)
class ReportRow:
    algo: str
    hyperparams: dict
    v0: float
    config_index: int


@dataclass(frozen=True)
class AlgoSummary:
    algo: str
    runs: int
    filtered_count: int
    diverged_count: int

    @property
    def status(self) -> str:
        if self.filtered_count < self.runs:
            return "ok"
        return "diverged" if self.diverged_count == self.runs else "filtered"


@dataclass(frozen=True)
class EvalReport:
    bound: float
    rows: tuple[ReportRow, ...]
    summaries: dict[str, AlgoSummary] = field(default_factory=dict)

    @property
    def excluded(self) -> list[str]:
        return [a for a, s in self.summaries.items() if s.status != "ok"]


def build_report(results: Sequence["RunResult"], bound: float | None = None) -> EvalReport:
    """Best surviving run per algorithm, sorted by value (highest first).

    A run is filtered when its selected value is missing, non-finite or above
    ``bound``. Algorithms with no surviving run get no row but keep their
    summary, annotated ``diverged`` or ``filtered``.
    """
    from .train import select_best

    if bound is None:
        bound = upper_bound()
    by_algo: dict[str, list] = {}
    for res in results:
        by_algo.setdefault(res.config.algo.kind, []).append(res)
    order = [a for a in ALGOS if a in by_algo] + sorted(a for a in by_algo if a not in ALGOS)

    rows, summaries = [], {}
    for algo in order:
        runs = by_algo[algo]
        filtered = sum(not survives(r.selected_value, bound) for r in runs)
        diverged = sum(r.diverged for r in runs)
        summaries[algo] = AlgoSummary(algo, len(runs), filtered, diverged)
        best = select_best(runs, bound)
        if best is not None:
            rows.append(ReportRow(algo, best.config.hyperparams(), best.selected_value,
                                  best.config_index))
    rows.sort(key=lambda r: -r.v0)  # stable: ALGOS order breaks ties
    return EvalReport(bound, tuple(rows), summaries)


CSV_COLUMNS = ("algo", "lr", "batch_size", "hidden_layers", "hidden_units",
               "activation", "dropout", "v0", "filtered_count", "diverged")


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in report.rows:
            hp = row.hyperparams
            s = report.summaries[row.algo]
            w.writerow([row.algo, hp["lr"], hp["batch_size"], hp["hidden_layers"],
                        hp["hidden_units"], hp["activation"], hp["dropout"],
                        repr(row.v0), s.filtered_count, s.diverged_count])
        for algo in report.excluded:
            s = report.summaries[algo]
            w.writerow([algo, "", "", "", "", "", "", "", s.filtered_count, s.diverged_count])


def render_markdown(report: EvalReport) -> str:
    lines = [
        f"Overestimation bound: {report.bound:.2f}",
        "",
        "| Algorithm | Learning Rate | Batch Size | Hidden Layer | Hidden Unit "
        "| Activation | Dropout Rate | V(s0) |",
        "|---|---:|---:|---:|---:|---|---:|---:|",
    ]
    for row in report.rows:
        hp = row.hyperparams
        act = {"relu": "ReLU", "tanh": "Tanh"}.get(hp["activation"], hp["activation"])
        lines.append(
            f"| {row.algo.upper()} | {hp['lr']:g} | {hp['batch_size']} | {hp['hidden_layers']} "
            f"| {hp['hidden_units']} | {act} | {hp['dropout']:g} | {row.v0:.2f} |"
        )
    lines.append("")
    for algo, s in report.summaries.items():
        note = f"{s.filtered_count}/{s.runs} runs filtered, {s.diverged_count} diverged"
        if s.status != "ok":
            note += f"; excluded ({s.status})"
        lines.append(f"- {algo.upper()}: {note}")
    if "bcq" in report.summaries:
        lines.append("")
        lines.append("BCQ values use the generator-constrained greedy policy.")
    return "\n".join(lines) + "\n"
