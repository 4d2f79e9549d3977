"""A small feed-forward Q-network with hand-written backprop.

Each hidden layer is ``linear -> batch-norm -> activation -> dropout``;
output heads are plain linear maps from the last hidden representation.
All trainable parameters live in one flat vector (``QModel.theta``) with
named views into it, which keeps Adam and target synchronisation to a
handful of vector operations. Target parameters and batch-norm running
statistics never receive gradients.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

BN_MOMENTUM = 0.1
BN_EPS = 1e-5
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class Mode(enum.Enum):
    TRAIN = "train"  # batch statistics, dropout active
    EVAL = "eval"  # running statistics, dropout off


ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 8
    hidden_layers: int = 3
    hidden_units: int = 32
    activation: str = "relu"
    dropout_rate: float = 0.1
    batch_norm: bool = True
    output_heads: tuple[tuple[str, int], ...] = (("q", 9),)

    def __post_init__(self):
        object.__setattr__(self, "output_heads", tuple((str(n), int(d)) for n, d in self.output_heads))
        if self.input_dim < 1 or self.hidden_units < 1 or self.hidden_layers < 0:
            raise ValueError(f"invalid network dimensions in {self}")
        if any(d < 1 for _, d in self.output_heads) or not self.output_heads:
            raise ValueError("every output head needs a positive dimension")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def head_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.output_heads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["output_heads"] = [list(h) for h in self.output_heads]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        if "output_heads" in d:
            d["output_heads"] = tuple(tuple(h) for h in d["output_heads"])
        return cls(**d)


def param_shapes(spec: NetworkSpec) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    fan_in = spec.input_dim
    for l in range(spec.hidden_layers):
        shapes.append((f"W{l}", (fan_in, spec.hidden_units)))
        shapes.append((f"b{l}", (spec.hidden_units,)))
        if spec.batch_norm:
            shapes.append((f"bn_scale{l}", (spec.hidden_units,)))
            shapes.append((f"bn_shift{l}", (spec.hidden_units,)))
        fan_in = spec.hidden_units
    for name, dim in spec.output_heads:
        shapes.append((f"W_{name}", (fan_in, dim)))
        shapes.append((f"b_{name}", (dim,)))
    return shapes


def _views(flat: np.ndarray, shapes) -> dict[str, np.ndarray]:
    views, offset = {}, 0
    for name, shape in shapes:
        size = math.prod(shape)
        views[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    return views


@dataclass
class QModel:
    """Online parameters, target parameters, running statistics and Adam state."""

    spec: NetworkSpec
    theta: np.ndarray
    theta_target: np.ndarray
    running_mean: np.ndarray  # (hidden_layers, hidden_units)
    running_var: np.ndarray
    target_running_mean: np.ndarray
    target_running_var: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray
    step: int = 0
    params: dict = field(init=False, repr=False, compare=False)
    target_params: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        shapes = param_shapes(self.spec)
        n = sum(math.prod(s) for _, s in shapes)
        for name in ("theta", "theta_target", "adam_m", "adam_v"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have {n} entries for {self.spec}")
        self.params = _views(self.theta, shapes)
        self.target_params = _views(self.theta_target, shapes)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def copy(self) -> "QModel":
        return QModel(
            self.spec, self.theta.copy(), self.theta_target.copy(),
            self.running_mean.copy(), self.running_var.copy(),
            self.target_running_mean.copy(), self.target_running_var.copy(),
            self.adam_m.copy(), self.adam_v.copy(), self.step,
        )

    def state_equal(self, other: "QModel") -> bool:
        """Bit-exact equality of every stored array (NaNs compare equal)."""
        if self.spec != other.spec or self.step != other.step:
            return False
        names = ("theta", "theta_target", "running_mean", "running_var",
                 "target_running_mean", "target_running_var", "adam_m", "adam_v")
        return all(np.array_equal(getattr(self, n), getattr(other, n), equal_nan=True) for n in names)

    # -- checkpoint --------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "step": self.step,
            "theta": self.theta.tolist(),
            "theta_target": self.theta_target.tolist(),
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "target_running_mean": self.target_running_mean.tolist(),
            "target_running_var": self.target_running_var.tolist(),
            "adam_m": self.adam_m.tolist(),
            "adam_v": self.adam_v.tolist(),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "QModel":
        spec = NetworkSpec.from_dict(doc["spec"])
        h = (spec.hidden_layers, spec.hidden_units)

        def arr(key, shape=None):
            a = np.array(doc[key], dtype=np.float64)
            return a.reshape(shape) if shape is not None else a

        return cls(
            spec, arr("theta"), arr("theta_target"),
            arr("running_mean", h), arr("running_var", h),
            arr("target_running_mean", h), arr("target_running_var", h),
            arr("adam_m"), arr("adam_v"), int(doc["step"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "QModel":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def init(spec: NetworkSpec, rng: np.random.Generator) -> QModel:
    """Xavier-uniform weights, zero biases, unit batch-norm scale, theta' = theta."""
    shapes = param_shapes(spec)
    n = sum(math.prod(s) for _, s in shapes)
    theta = np.zeros(n)
    views = _views(theta, shapes)
    for name, shape in shapes:
        if name.startswith("W"):
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            views[name][...] = rng.uniform(-limit, limit, size=shape)
        elif name.startswith("bn_scale"):
            views[name][...] = 1.0
    h = (spec.hidden_layers, spec.hidden_units)
    return QModel(
        spec, theta, theta.copy(),
        np.zeros(h), np.ones(h), np.zeros(h), np.ones(h),
        np.zeros(n), np.zeros(n), 0,
    )


# -- forward / backward ------------------------------------------------------

@dataclass
class _LayerCache:
    x: np.ndarray  # layer input
    pre_act: np.ndarray
    out: np.ndarray  # post-activation, pre-dropout
    xhat: np.ndarray | None = None
    inv_std: np.ndarray | None = None
    mask: np.ndarray | None = None
    batch_stats: bool = False


def _run(model: QModel, x: np.ndarray, mode: Mode, use_target: bool,
         rng: np.random.Generator | None, update_stats: bool,
         masks: list | None = None):
    spec = model.spec
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ValueError(f"expected a batch of shape (n, {spec.input_dim}), got {x.shape}")
    if use_target and mode is Mode.TRAIN:
        raise ValueError("the target network is only evaluated in eval mode")
    P = model.target_params if use_target else model.params
    r_mean = model.target_running_mean if use_target else model.running_mean
    r_var = model.target_running_var if use_target else model.running_var
    train = mode is Mode.TRAIN

    caches = []
    h = x
    for l in range(spec.hidden_layers):
        c = _LayerCache(x=h, pre_act=None, out=None)
        z = h @ P[f"W{l}"] + P[f"b{l}"]
        if spec.batch_norm:
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                c.batch_stats = True
                if update_stats:
                    r_mean[l] = (1 - BN_MOMENTUM) * r_mean[l] + BN_MOMENTUM * mu
                    r_var[l] = (1 - BN_MOMENTUM) * r_var[l] + BN_MOMENTUM * var
            else:
                mu, var = r_mean[l], r_var[l]
            c.inv_std = 1.0 / np.sqrt(var + BN_EPS)
            c.xhat = (z - mu) * c.inv_std
            c.pre_act = c.xhat * P[f"bn_scale{l}"] + P[f"bn_shift{l}"]
        else:
            c.pre_act = z
        if spec.activation == "relu":
            c.out = np.maximum(c.pre_act, 0.0)
        else:
            c.out = np.tanh(c.pre_act)
        h = c.out
        if train and spec.dropout_rate > 0:
            if masks is not None:
                c.mask = masks[l]
            else:
                keep = rng.random(h.shape) >= spec.dropout_rate
                c.mask = keep / (1.0 - spec.dropout_rate)
            h = h * c.mask
        caches.append(c)
    heads = {name: h @ P[f"W_{name}"] + P[f"b_{name}"] for name in spec.head_names}
    return heads, caches, h


def forward(model: QModel, x: np.ndarray, mode: Mode = Mode.EVAL, use_target: bool = False,
            rng: np.random.Generator | None = None) -> dict[str, np.ndarray]:
    """Head outputs for a batch. Train mode updates the running statistics."""
    heads, _, _ = _run(model, x, mode, use_target, rng, update_stats=True)
    return heads


def preactivations(model: QModel, x: np.ndarray, mode: Mode = Mode.EVAL) -> list[np.ndarray]:
    """Per hidden layer, the input to the activation function (no state change)."""
    _, caches, _ = _run(model, x, mode, False, None, update_stats=False)
    return [c.pre_act for c in caches]


def _backward(model: QModel, caches: list[_LayerCache], h_last: np.ndarray,
              dheads: dict) -> np.ndarray:
    spec = model.spec
    P = model.params
    grad = np.zeros_like(model.theta)
    G = _views(grad, param_shapes(spec))
    dh = np.zeros_like(h_last)
    for name in spec.head_names:
        d = dheads.get(name)
        if d is None:
            continue
        G[f"W_{name}"][...] = h_last.T @ d
        G[f"b_{name}"][...] = d.sum(axis=0)
        dh += d @ P[f"W_{name}"].T
    for l in reversed(range(spec.hidden_layers)):
        c = caches[l]
        if c.mask is not None:
            dh = dh * c.mask
        if spec.activation == "relu":
            dpre = dh * (c.pre_act > 0)
        else:
            dpre = dh * (1.0 - c.out * c.out)
        if spec.batch_norm:
            G[f"bn_scale{l}"][...] = (dpre * c.xhat).sum(axis=0)
            G[f"bn_shift{l}"][...] = dpre.sum(axis=0)
            dxhat = dpre * P[f"bn_scale{l}"]
            if c.batch_stats:
                n = dxhat.shape[0]
                dz = c.inv_std / n * (n * dxhat - dxhat.sum(axis=0)
                                      - c.xhat * (dxhat * c.xhat).sum(axis=0))
            else:
                dz = dxhat * c.inv_std
        else:
            dz = dpre
        G[f"W{l}"][...] = c.x.T @ dz
        G[f"b{l}"][...] = dz.sum(axis=0)
        dh = dz @ P[f"W{l}"].T
    return grad


# A loss over head outputs: returns the scalar loss and d(loss)/d(head) per head.
# Anything the loss treats as constant (bootstrap targets) is closed over.
LossFn = Callable[[dict], tuple[float, dict]]


def gradients(model: QModel, loss_fn: LossFn, x: np.ndarray, mode: Mode = Mode.TRAIN,
              rng: np.random.Generator | None = None) -> tuple[float, np.ndarray]:
    """Loss value and its exact gradient with respect to the online parameters.

    The gradient is a flat vector laid out like ``model.theta``. In train
    mode this performs the step's single running-statistics update.
    """
    heads, caches, h_last = _run(model, x, mode, False, rng, update_stats=True)
    loss, dheads = loss_fn(heads)
    return loss, _backward(model, caches, h_last, dheads)


def adam_step(model: QModel, grads: np.ndarray, lr: float,
              betas: tuple[float, float] = ADAM_BETAS, eps: float = ADAM_EPS) -> None:
    """Bias-corrected Adam update of the online parameters, in place."""
    if grads.shape != model.theta.shape:
        raise ValueError("gradient does not match the parameter layout")
    b1, b2 = betas
    model.step += 1
    model.adam_m *= b1
    model.adam_m += (1 - b1) * grads
    model.adam_v *= b2
    model.adam_v += (1 - b2) * grads * grads
    m_hat = model.adam_m / (1 - b1 ** model.step)
    v_hat = model.adam_v / (1 - b2 ** model.step)
    model.theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


def sync_target(model: QModel) -> None:
    """Hard copy of online parameters and running statistics into the target."""
    model.theta_target[...] = model.theta
    model.target_running_mean[...] = model.running_mean
    model.target_running_var[...] = model.running_var


def finite_diff_check(model: QModel, loss_fn: LossFn, x: np.ndarray, eps: float = 1e-4,
                      analytic: np.ndarray | None = None, mode: Mode = Mode.EVAL,
                      masks: list | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per parameter is ``|a - n| / max(1e-8, |a| + |n|)``. The
    loss must be deterministic: eval mode, or train mode with dropout off
    (or fixed ``masks``), in which case running statistics are left alone.
    ``analytic`` overrides the computed gradient (used to test the checker).
    """
    if mode is Mode.TRAIN and model.spec.dropout_rate > 0 and masks is None:
        raise ValueError("finite differences need a deterministic loss: pass dropout masks")

    def loss_at() -> tuple[float, np.ndarray]:
        heads, caches, h_last = _run(model, x, mode, False, None, update_stats=False, masks=masks)
        loss, dheads = loss_fn(heads)
        return loss, (caches, h_last, dheads)

    if analytic is None:
        _, (caches, h_last, dheads) = loss_at()
        analytic = _backward(model, caches, h_last, dheads)
    numeric = np.empty_like(model.theta)
    theta = model.theta
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + eps
        up, _ = loss_at()
        theta[i] = orig - eps
        down, _ = loss_at()
        theta[i] = orig
        numeric[i] = (up - down) / (2 * eps)
    rel = np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float(rel.max())
