"""Losses and action selection for NFQ, DQN, DDQN, discrete BCQ and discrete CQL.

All five share the squared TD error ``(y - Q(s, a; theta))**2`` and differ in
how the bootstrap value of ``s'`` is formed:

    nfq   max_a Q(s', a; theta)                  (online net, no target net)
    dqn   max_a Q(s', a; theta')
    ddqn  Q(s', argmax_a Q(s', a; theta); theta')
    bcq   Q(s', pi(s'); theta') with pi the generator-constrained argmax
    cql   as ddqn

BCQ adds a cross-entropy term for its generator head; CQL adds
``alpha * (logsumexp_a Q(s, a) - Q(s, a_data))``. Targets are computed with
the network in eval mode and treated as constants.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Batch
from .mdp import ALL_ACTIONS, N_ACTIONS, Action, Encoding, State, feature_table, state_index
from .network import (Mode, NetworkSpec, QModel, finite_diff_check, forward, gradients, init,
                      preactivations, sync_target)

ALGOS = ("nfq", "dqn", "ddqn", "bcq", "cql")


@dataclass(frozen=True)
class AlgoConfig:
    kind: str = "dqn"
    gamma: float = 0.99
    bcq_tau: float = 0.3
    bcq_gen_weight: float = 1.0
    cql_alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ALGOS:
            raise ValueError(f"unknown algorithm {self.kind!r}; valid: {', '.join(ALGOS)}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.bcq_tau <= 1.0:
            raise ValueError(f"bcq_tau must lie in [0, 1], got {self.bcq_tau}")
        if self.cql_alpha < 0:
            raise ValueError(f"cql_alpha must be non-negative, got {self.cql_alpha}")
        if self.bcq_gen_weight < 0:
            raise ValueError(f"bcq_gen_weight must be non-negative, got {self.bcq_gen_weight}")

    @property
    def uses_target(self) -> bool:
        return self.kind != "nfq"

    @property
    def needs_generator(self) -> bool:
        return self.kind == "bcq"

    def to_dict(self) -> dict:
        return asdict(self)


# -- pure array pieces ---------------------------------------------------------

def logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=1, keepdims=True)))[:, 0]


def softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def bcq_eligible(gen_logits: np.ndarray, tau: float) -> np.ndarray:
    """Boolean mask of actions with ``p(a) / max p > tau``.

    At ``tau == 1`` the comparison becomes ``>=`` so the modal actions stay
    eligible; the mask is never empty.
    """
    ratio = np.exp(gen_logits - gen_logits.max(axis=1, keepdims=True))
    return ratio >= tau if tau >= 1.0 else ratio > tau


def constrained_argmax(q: np.ndarray, gen_logits: np.ndarray, tau: float) -> np.ndarray:
    """Argmax of ``q`` over BCQ-eligible actions; ties go to the lowest index."""
    masked = np.where(bcq_eligible(gen_logits, tau), q, -np.inf)
    return np.argmax(masked, axis=1)


def bootstrap_values(kind: str, q_next_online: np.ndarray, q_next_target: np.ndarray | None,
                     gen_next: np.ndarray | None = None, tau: float = 0.0) -> np.ndarray:
    """Value of ``s'`` used in the TD target, per transition."""
    rows = np.arange(len(q_next_online))
    if kind == "nfq":
        return q_next_online.max(axis=1)
    if kind == "dqn":
        return q_next_target.max(axis=1)
    if kind in ("ddqn", "cql"):
        return q_next_target[rows, np.argmax(q_next_online, axis=1)]
    if kind == "bcq":
        return q_next_target[rows, constrained_argmax(q_next_online, gen_next, tau)]
    raise ValueError(f"unknown algorithm {kind!r}")


def td_targets(rewards: np.ndarray, terminal: np.ndarray, bootstrap: np.ndarray,
               gamma: float) -> np.ndarray:
    return rewards + gamma * np.where(terminal, 0.0, bootstrap)


# -- model-level pieces --------------------------------------------------------

def features(model: QModel, state_idx: np.ndarray) -> np.ndarray:
    return feature_table(Encoding.for_dim(model.spec.input_dim))[np.asarray(state_idx)]


def q_values(model: QModel, state_idx: np.ndarray, use_target: bool = False) -> np.ndarray:
    """Eval-mode Q-values, shape (n, 9)."""
    return forward(model, features(model, state_idx), Mode.EVAL, use_target)["q"]


def compute_targets(model: QModel, batch: Batch, cfg: AlgoConfig) -> np.ndarray:
    x2 = features(model, batch.s2)
    online = forward(model, x2, Mode.EVAL)
    target_q = forward(model, x2, Mode.EVAL, use_target=True)["q"] if cfg.uses_target else None
    boot = bootstrap_values(cfg.kind, online["q"], target_q, online.get("gen"), cfg.bcq_tau)
    return td_targets(batch.r, batch.terminal, boot, cfg.gamma)


def make_loss_fn(batch: Batch, targets: np.ndarray, cfg: AlgoConfig):
    """Loss over head outputs for fixed targets, with its head gradients."""
    a = batch.a
    n = len(a)
    rows = np.arange(n)

    def loss_fn(heads: dict) -> tuple[float, dict]:
        q = heads["q"]
        err = q[rows, a] - targets
        loss = float(np.mean(err * err))
        dq = np.zeros_like(q)
        dq[rows, a] = 2.0 * err / n
        dheads = {"q": dq}
        if cfg.kind == "cql" and cfg.cql_alpha > 0:
            penalty = logsumexp(q) - q[rows, a]
            loss += cfg.cql_alpha * float(np.mean(penalty))
            dpen = softmax(q)
            dpen[rows, a] -= 1.0
            dq += cfg.cql_alpha * dpen / n
        if cfg.kind == "bcq" and cfg.bcq_gen_weight > 0:
            logits = heads["gen"]
            ce = logsumexp(logits) - logits[rows, a]
            loss += cfg.bcq_gen_weight * float(np.mean(ce))
            dg = softmax(logits)
            dg[rows, a] -= 1.0
            dheads["gen"] = cfg.bcq_gen_weight * dg / n
        return loss, dheads

    return loss_fn


def loss_and_grad(model: QModel, batch: Batch, cfg: AlgoConfig, mode: Mode = Mode.TRAIN,
                  rng: np.random.Generator | None = None) -> tuple[float, np.ndarray]:
    """One training step's loss and gradient (targets first, then the train-mode pass)."""
    targets = compute_targets(model, batch, cfg)
    return gradients(model, make_loss_fn(batch, targets, cfg), features(model, batch.s), mode, rng)


def loss(model: QModel, batch: Batch, cfg: AlgoConfig) -> float:
    """Deterministic eval-mode loss; leaves the model untouched."""
    targets = compute_targets(model, batch, cfg)
    heads = forward(model, features(model, batch.s), Mode.EVAL)
    value, _ = make_loss_fn(batch, targets, cfg)(heads)
    return value


def nfq_loss(model: QModel, batch: Batch, cfg: AlgoConfig | None = None) -> float:
    return loss(model, batch, _as(cfg, "nfq"))


def dqn_loss(model: QModel, batch: Batch, cfg: AlgoConfig | None = None) -> float:
    return loss(model, batch, _as(cfg, "dqn"))


def ddqn_loss(model: QModel, batch: Batch, cfg: AlgoConfig | None = None) -> float:
    return loss(model, batch, _as(cfg, "ddqn"))


def bcq_loss(model: QModel, batch: Batch, cfg: AlgoConfig | None = None) -> float:
    return loss(model, batch, _as(cfg, "bcq"))


def cql_loss(model: QModel, batch: Batch, cfg: AlgoConfig | None = None) -> float:
    return loss(model, batch, _as(cfg, "cql"))


def _as(cfg: AlgoConfig | None, kind: str) -> AlgoConfig:
    if cfg is None:
        return AlgoConfig(kind=kind)
    d = cfg.to_dict()
    d["kind"] = kind
    return AlgoConfig(**d)


# -- action selection ------------------------------------------------------------

def greedy_indices(model, state_idx: np.ndarray, cfg: AlgoConfig) -> np.ndarray:
    """Greedy action index per state for a QModel or a tabular Q-function."""
    state_idx = np.asarray(state_idx)
    if isinstance(model, QModel):
        heads = forward(model, features(model, state_idx), Mode.EVAL)
        q, gen = heads["q"], heads.get("gen")
    else:
        q, gen = model.q_values(state_idx), None
    if cfg.kind == "bcq":
        if gen is None:
            raise ValueError("BCQ action selection needs a model with a 'gen' head")
        return constrained_argmax(q, gen, cfg.bcq_tau)
    return np.argmax(q, axis=1)


def bcq_policy_action(model: QModel, s: State, tau: float) -> Action:
    return ALL_ACTIONS[int(greedy_indices(model, [state_index(s)], AlgoConfig("bcq", bcq_tau=tau))[0])]


def greedy_action(model, s: State, cfg: AlgoConfig) -> Action:
    return ALL_ACTIONS[int(greedy_indices(model, [state_index(s)], cfg)[0])]


def network_heads(cfg: AlgoConfig) -> tuple[tuple[str, int], ...]:
    return (("q", N_ACTIONS), ("gen", N_ACTIONS)) if cfg.needs_generator else (("q", N_ACTIONS),)


def check_loss_gradients(cfg: AlgoConfig, spec: NetworkSpec, batch: Batch,
                         rng: np.random.Generator, eps: float = 1e-4,
                         corrupt: float = 0.0, kink_margin: float = 1e-2,
                         max_redraws: int = 100) -> float:
    """Finite-difference check of one algorithm's loss gradient.

    Builds a fresh model, gives it non-trivial running statistics and a
    target network that differs from the online one, then compares the
    eval-mode analytic gradient against central differences. ``corrupt``
    scales the analytic gradient by ``1 + corrupt`` before comparing.

    With ReLU, a pre-activation closer to zero than the step size makes the
    central difference straddle the kink, so the online perturbation is
    redrawn until every pre-activation clears ``kink_margin``.
    """
    if spec.output_heads != network_heads(cfg):
        spec = NetworkSpec(**{**spec.to_dict(), "output_heads": network_heads(cfg)})
    model = init(spec, rng)
    x = features(model, batch.s)
    for _ in range(3):
        forward(model, x + rng.normal(0.0, 0.5, size=x.shape), Mode.TRAIN, rng=rng)
    sync_target(model)
    base = model.theta.copy()
    for _ in range(max_redraws):
        model.theta[...] = base + rng.normal(0.0, 0.05, size=base.shape)
        if spec.activation != "relu" or _kink_distance(model, x) > kink_margin:
            break
    loss_fn = make_loss_fn(batch, compute_targets(model, batch, cfg), cfg)
    analytic = None
    if corrupt:
        _, analytic = gradients(model, loss_fn, x, Mode.EVAL)
        analytic = analytic * (1.0 + corrupt)
    return finite_diff_check(model, loss_fn, x, eps, analytic=analytic, mode=Mode.EVAL)


def _kink_distance(model: QModel, x: np.ndarray) -> float:
    return min((float(np.abs(z).min()) for z in preactivations(model, x)), default=np.inf)
