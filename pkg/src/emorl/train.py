"""Single training runs, the hyperparameter grid, and best-run selection."""

from __future__ import annotations

import csv
import itertools
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .algos import ALGOS, AlgoConfig, loss_and_grad, network_heads
from .dataset import DatasetError, TransitionDataset, sample_indices
from .evaluate import initial_state_value
from .mdp import Encoding
from .network import Mode, NetworkSpec, QModel, adam_step, init, sync_target
from .seeding import child_rng, derive_seed

# Swept hyperparameters, in manifest column order.
GRID = {
    "lr": (0.1, 0.01),
    "batch_size": (8, 16),
    "hidden_layers": (2, 3),
    "hidden_units": (16, 32),
    "activation": ("relu", "tanh"),
    "dropout": (0.1, 0.2),
}


@dataclass(frozen=True)
class RunConfig:
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    spec: NetworkSpec = field(default_factory=NetworkSpec)
    lr: float = 0.01
    batch_size: int = 16
    total_steps: int = 10_000
    steps_per_epoch: int = 100
    target_update_interval: int = 2_500
    seed: int = 0
    encoding: Encoding = Encoding.FACTORED_ONEHOT

    def __post_init__(self):
        if self.total_steps < 1 or self.steps_per_epoch < 1:
            raise ValueError("total_steps and steps_per_epoch must be positive")
        if self.total_steps % self.steps_per_epoch:
            raise ValueError(f"total_steps ({self.total_steps}) must be divisible by "
                             f"steps_per_epoch ({self.steps_per_epoch})")
        if self.target_update_interval < 1:
            raise ValueError("target_update_interval must be positive")
        if self.batch_size < 1 or self.lr <= 0:
            raise ValueError("batch_size and lr must be positive")
        if self.spec.input_dim != self.encoding.dim:
            raise ValueError(f"network input_dim {self.spec.input_dim} does not match "
                             f"{self.encoding.value} ({self.encoding.dim} dims)")
        if self.spec.output_heads != network_heads(self.algo):
            raise ValueError(f"{self.algo.kind} needs output heads {network_heads(self.algo)}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def build(cls, kind: str = "dqn", lr: float = 0.01, batch_size: int = 16,
              hidden_layers: int = 3, hidden_units: int = 32, activation: str = "relu",
              dropout: float = 0.1, batch_norm: bool = True,
              encoding: Encoding = Encoding.FACTORED_ONEHOT, algo: dict | None = None,
              **kw) -> "RunConfig":
        """Config from flat hyperparameters; the network spec follows from them."""
        algo_cfg = AlgoConfig(kind=kind, **(algo or {}))
        spec = NetworkSpec(encoding.dim, hidden_layers, hidden_units, activation, dropout,
                           batch_norm, network_heads(algo_cfg))
        return cls(algo=algo_cfg, spec=spec, lr=lr, batch_size=batch_size, encoding=encoding, **kw)

    def hyperparams(self) -> dict:
        return {
            "lr": self.lr,
            "batch_size": self.batch_size,
            "hidden_layers": self.spec.hidden_layers,
            "hidden_units": self.spec.hidden_units,
            "activation": self.spec.activation,
            "dropout": self.spec.dropout_rate,
        }

    def to_dict(self) -> dict:
        return {
            "algo": self.algo.to_dict(),
            "spec": self.spec.to_dict(),
            "lr": self.lr,
            "batch_size": self.batch_size,
            "total_steps": self.total_steps,
            "steps_per_epoch": self.steps_per_epoch,
            "target_update_interval": self.target_update_interval,
            "seed": self.seed,
            "encoding": self.encoding.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        """Inverse of to_dict. Missing keys take defaults; input_dim and heads are derived."""
        d = dict(d)
        unknown = sorted(set(d) - set(cls().to_dict()))
        if unknown:
            raise ValueError(f"unknown run config key {unknown[0]!r}")
        algo = AlgoConfig(**d.pop("algo", {}))
        encoding = Encoding(d.pop("encoding", Encoding.FACTORED_ONEHOT.value))
        spec_d = dict(d.pop("spec", {}))
        spec_d.setdefault("input_dim", encoding.dim)
        spec_d.setdefault("output_heads", network_heads(algo))
        spec = NetworkSpec.from_dict(spec_d)
        return cls(algo=algo, spec=spec, encoding=encoding, **d)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int  # 1-based
    loss: float
    v0: float


@dataclass
class RunResult:
    config: RunConfig
    epochs: list[EpochRecord]
    selected_epoch: int | None
    selected_value: float | None
    diverged: bool
    sync_steps: list[int] = field(default_factory=list)
    config_index: int = 0
    wall_time: float = field(default=0.0, compare=False)
    model: QModel | None = field(default=None, compare=False, repr=False)  # selected epoch
    final_model: QModel | None = field(default=None, compare=False, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_index": self.config_index,
            "epochs": [{"epoch": e.epoch, "loss": _enc(e.loss), "v0": _enc(e.v0)} for e in self.epochs],
            "selected_epoch": self.selected_epoch,
            "selected_value": _enc(self.selected_value),
            "diverged": self.diverged,
            "sync_steps": list(self.sync_steps),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunResult":
        return cls(
            config=RunConfig.from_dict(doc["config"]),
            epochs=[EpochRecord(e["epoch"], _dec(e["loss"]), _dec(e["v0"])) for e in doc["epochs"]],
            selected_epoch=doc["selected_epoch"],
            selected_value=_dec(doc["selected_value"]),
            diverged=doc["diverged"],
            sync_steps=list(doc.get("sync_steps", [])),
            config_index=doc.get("config_index", 0),
        )


# Non-finite floats are written as strings so run.json stays strict JSON.
def _enc(x: float | None):
    if x is None or math.isfinite(x):
        return x
    return repr(float(x))


def _dec(x):
    return float(x) if isinstance(x, str) else x


def _selected(epochs: list[EpochRecord]) -> EpochRecord | None:
    finite = [e for e in epochs if math.isfinite(e.loss)]
    return min(finite, key=lambda e: e.loss) if finite else None  # min keeps the first on ties


def run_training(cfg: RunConfig, data: TransitionDataset, config_index: int = 0) -> RunResult:
    """Train one model on ``data`` and log loss and V(s0) every epoch.

    NFQ trains on the full dataset every step; the other algorithms draw
    minibatches with replacement and hard-sync the target network every
    ``target_update_interval`` steps. A non-finite loss is recorded, not
    raised, and such epochs are never selected.
    """
    if len(data) == 0:
        raise DatasetError("cannot train on an empty dataset")
    start = time.perf_counter()
    model = init(cfg.spec, child_rng(cfg.seed, "init"))
    dropout_rng = child_rng(cfg.seed, "dropout")
    batch_rng = child_rng(cfg.seed, "batch")
    cols = data.columns
    full_batch = cfg.algo.kind == "nfq"

    epochs: list[EpochRecord] = []
    sync_steps: list[int] = []
    step_losses: list[float] = []
    best: QModel | None = None
    best_loss = math.inf
    with np.errstate(all="ignore"):
        for step in range(1, cfg.total_steps + 1):
            batch = cols if full_batch else cols.take(sample_indices(data, cfg.batch_size, batch_rng))
            loss, grad = loss_and_grad(model, batch, cfg.algo, Mode.TRAIN, dropout_rng)
            adam_step(model, grad, cfg.lr)
            step_losses.append(loss)
            if cfg.algo.uses_target and step % cfg.target_update_interval == 0:
                sync_target(model)
                sync_steps.append(step)
            if step % cfg.steps_per_epoch == 0:
                epoch_loss = math.fsum(step_losses) / len(step_losses)
                step_losses.clear()
                v0 = initial_state_value(model, cfg.algo, data)
                epochs.append(EpochRecord(step // cfg.steps_per_epoch, epoch_loss, v0))
                if math.isfinite(epoch_loss) and epoch_loss < best_loss:
                    best_loss = epoch_loss
                    best = model.copy()

    chosen = _selected(epochs)
    return RunResult(
        config=cfg,
        epochs=epochs,
        selected_epoch=chosen.epoch if chosen else None,
        selected_value=chosen.v0 if chosen else None,
        diverged=chosen is None,
        sync_steps=sync_steps,
        config_index=config_index,
        wall_time=time.perf_counter() - start,
        model=best,
        final_model=model,
    )


def grid_points() -> list[dict]:
    """All 64 hyperparameter combinations in deterministic order."""
    keys = list(GRID)
    return [dict(zip(keys, values)) for values in itertools.product(*GRID.values())]


def grid_configs(algo: str, seed: int, *, total_steps: int = 10_000, steps_per_epoch: int = 100,
                 target_update_interval: int = 2_500,
                 encoding: Encoding = Encoding.FACTORED_ONEHOT,
                 algo_params: dict | None = None) -> list[RunConfig]:
    if algo not in ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}; valid: {', '.join(ALGOS)}")
    algo_id = ALGOS.index(algo)
    return [
        RunConfig.build(
            algo, encoding=encoding, algo=algo_params,
            total_steps=total_steps, steps_per_epoch=steps_per_epoch,
            target_update_interval=target_update_interval,
            seed=derive_seed(seed, algo_id, i), **point,
        )
        for i, point in enumerate(grid_points())
    ]


def _run_job(job: tuple[RunConfig, TransitionDataset, int]) -> RunResult:
    cfg, data, idx = job
    return run_training(cfg, data, idx)


def grid_search(algos: Sequence[str], data: TransitionDataset, seed: int, *,
                parallel: int = 1, out_dir: str | Path | None = None,
                **config_kw) -> list[RunResult]:
    """Every grid point for every algorithm, in (algorithm, grid index) order.

    Each run's seed derives from (seed, algorithm, grid index), so results do
    not depend on ``parallel``. With ``out_dir`` set, run directories and
    ``manifest.csv`` are written there.
    """
    jobs = [(cfg, data, i) for algo in algos
            for i, cfg in enumerate(grid_configs(algo, seed, **config_kw))]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=1))
    else:
        results = [_run_job(job) for job in jobs]
    if out_dir is not None:
        write_grid(results, out_dir)
    return results


def select_best(results: Sequence[RunResult], bound: float) -> RunResult | None:
    """Highest finite selected value not above ``bound``; earliest config wins ties."""
    best = None
    for res in sorted(results, key=lambda r: r.config_index):
        v = res.selected_value
        if v is None or not math.isfinite(v) or v > bound:
            continue
        if best is None or v > best.selected_value:
            best = res
    return best


def default_parallelism() -> int:
    return os.cpu_count() or 1


# -- artifacts -------------------------------------------------------------------

def write_epochs_csv(result: RunResult, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "v0"])
        for e in result.epochs:
            w.writerow([e.epoch, repr(e.loss), repr(e.v0)])


def read_epochs_csv(path: str | Path) -> list[EpochRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"epoch", "loss"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns epoch, loss[, v0]")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(EpochRecord(int(row["epoch"]), float(row["loss"]),
                                       float(row.get("v0") or "nan")))
            except (TypeError, ValueError):
                raise ValueError(f"{path}: line {lineno}: malformed row {row!r}") from None
    return out


def write_run(result: RunResult, out_dir: str | Path) -> None:
    """run.json, epochs.csv, checkpoint.json (selected epoch) and timing.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(json.dumps(result.to_json_dict(), indent=2) + "\n", encoding="utf-8")
    write_epochs_csv(result, out / "epochs.csv")
    if result.model is not None:
        result.model.save(out / "checkpoint.json")
    # wall time lives apart from run.json so the latter is reproducible byte for byte
    (out / "timing.json").write_text(json.dumps({"wall_time_s": result.wall_time}) + "\n",
                                     encoding="utf-8")


MANIFEST_COLUMNS = ("run_dir", "algo", "config_index", *GRID, "seed",
                    "selected_epoch", "selected_value", "diverged")


def run_dir_name(result: RunResult) -> str:
    return f"{result.config.algo.kind}_{result.config_index:02d}"


def write_grid(results: Sequence[RunResult], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "manifest.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for res in results:
            name = run_dir_name(res)
            write_run(res, out / name)
            hp = res.config.hyperparams()
            sv = "" if res.selected_value is None else repr(res.selected_value)
            se = "" if res.selected_epoch is None else res.selected_epoch
            w.writerow([name, res.config.algo.kind, res.config_index, *(hp[k] for k in GRID),
                        res.config.seed, se, sv, str(res.diverged).lower()])


def load_results(runs_dir: str | Path) -> list[RunResult]:
    """Read a single run directory or a grid directory of run subdirectories."""
    root = Path(runs_dir)
    if (root / "run.json").is_file():
        paths = [root / "run.json"]
    else:
        paths = sorted(root.glob("*/run.json"))
    if not paths:
        raise FileNotFoundError(f"no run.json found under {root}")
    results = []
    for p in paths:
        res = RunResult.from_json_dict(json.loads(p.read_text(encoding="utf-8")))
        results.append(res)
    return sorted(results, key=lambda r: (ALGOS.index(r.config.algo.kind)
                                          if r.config.algo.kind in ALGOS else len(ALGOS),
                                          r.config_index))
