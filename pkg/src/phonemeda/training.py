"""Inverse-frequency weighted cross-entropy, Adam, and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionMismatch, EmptyTrainingSet, InvalidConfig, MissingGradient, NonOneHotTarget
from .model import ModelConfig, forward, init_model, trainable

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    f: np.ndarray   # token occurrence counts
    w: np.ndarray   # inverse frequencies
    S: float        # mean occurrence count

    @property
    def T(self) -> int:
        return len(self.w)


def compute_loss_weights(sequences: Sequence[Sequence[int]], T: int) -> LossWeights:
    """Count every token (padding included); ``w = 1/f``, ``S = mean(f)``.

    Tokens that never occur get the largest weight among those that do.
    """
    seqs = [np.asarray(s, dtype=np.int64).ravel() for s in sequences]
    if not seqs or all(len(s) == 0 for s in seqs):
        raise EmptyTrainingSet("no training sequences to count")
    flat = np.concatenate(seqs)
    if flat.min() < 0 or flat.max() >= T:
        raise ValueError(f"token ids must lie in [0, {T})")
    f = np.bincount(flat, minlength=T).astype(np.float64)
    present = f > 0
    w = np.zeros(T)
    w[present] = 1.0 / f[present]
    w[~present] = w[present].max()
    return LossWeights(f, w, float(f.mean()))


def _one_hot_targets(y_hat, shape, T: int) -> np.ndarray:
    y_hat = np.asarray(y_hat)
    if np.issubdtype(y_hat.dtype, np.integer) and y_hat.shape == shape[:-1]:
        if y_hat.min() < 0 or y_hat.max() >= T:
            raise NonOneHotTarget(f"target ids must lie in [0, {T})")
        return np.eye(T)[y_hat]
    if y_hat.shape != shape:
        raise DimensionMismatch(f"targets {y_hat.shape} do not match logits {shape}")
    if not (np.isin(y_hat, (0, 1)).all() and (y_hat.sum(axis=-1) == 1).all()):
        raise NonOneHotTarget("every target row must be one-hot")
    return y_hat.astype(np.float64)


def wcce_loss(y: Tensor, y_hat, weights: LossWeights) -> Tensor:
    """``-(S / W) * sum_ij w_j * y_hat_ij * ln softmax(y)_ij``, averaged over a batch.

    ``y`` is ``[H, T]`` or ``[B, H, T]``: rows are decoder iterations, columns
    tokens. ``y_hat`` is the matching one-hot matrix or an integer id matrix.
    """
    if y.ndim not in (2, 3):
        raise DimensionMismatch(f"logits must be [H, T] or [B, H, T], got {y.shape}")
    W = y.shape[-1]
    if W != weights.T:
        raise DimensionMismatch(f"logit width {W} != number of tokens {weights.T}")
    target = _one_hot_targets(y_hat, y.shape, W)
    batch = y.shape[0] if y.ndim == 3 else 1
    coef = (target * weights.w).astype(y.dtype)
    logp = ad.log(ad.softmax(y, axis=-1))
    # per-row sums first: each row holds one nonzero term, so the total does
    # not depend on token order
    total = ad.sum(ad.sum(ad.hadamard(logp, coef), axis=-1))
    return ad.scale(total, -weights.S / (W * batch))


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """Bias-corrected Adam update applied in place to ``param.data``."""
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradient(f"no gradient for {name}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= update.astype(p.data.dtype)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params.values()))
    if norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params.values():
            p.grad = (p.grad * factor).astype(p.data.dtype)
    return norm


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    epochs: int = 1200
    tf_prob: float = 0.5
    seed: int = 42
    test_fraction: float = 346 / 3450
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = None
    eval_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1 or self.epochs < 1:
            raise InvalidConfig("batch_size and epochs must be >= 1")
        if not 0 <= self.tf_prob <= 1:
            raise InvalidConfig(f"tf_prob must be in [0, 1], got {self.tf_prob}")
        if not 0 < self.test_fraction < 1:
            raise InvalidConfig(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if self.lr <= 0:
            raise InvalidConfig("lr must be positive")
        if self.eval_every < 1:
            raise InvalidConfig("eval_every must be >= 1")
        return self


@dataclass
class ArrayDataset:
    """Stacked log-mel inputs ``[n, N, n_mel]`` and END-padded targets ``[n, L]``."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise DimensionMismatch(f"{len(self.x)} inputs vs {len(self.y)} targets")

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    weighted_accuracy: float
    per: float


def evaluate_dataset(params, cfg: ModelConfig, data: ArrayDataset, weights: LossWeights,
                     batch_size: int = 256):
    """Free-running predictions scored against the padded targets.

    Returns ``(mean weighted accuracy, mean PER, pairs)``.
    """
    from .metrics import EvalPair, per, weighted_accuracy
    from .vocab import pad_sequence

    pairs = []
    for lo in range(0, len(data), batch_size):
        res = forward(data.x[lo:lo + batch_size], params, cfg, n_steps=data.y.shape[1] - 1)
        for row, target in zip(res.predicted, data.y[lo:lo + batch_size]):
            p = pad_sequence([cfg.beg, *row.tolist()], len(target), cfg.end)
            pairs.append(EvalPair(target, p))
    wacc = float(np.mean([weighted_accuracy(pr, weights) for pr in pairs]))
    per_ = float(np.mean([per(pr, cfg.beg, cfg.end) for pr in pairs]))
    return wacc, per_, pairs


def train(train_data: ArrayDataset, model_cfg: ModelConfig, train_cfg: TrainConfig,
          test_data: ArrayDataset | None = None, params=None,
          callback: Callable[[EpochRecord], None] | None = None):
    """Mini-batch Adam on the weighted loss with per-step teacher forcing.

    Returns ``(params, history, weights)``. The held-out metrics in the history
    are computed free-running; they are NaN when no test set is given.
    """
    train_cfg.validate()
    model_cfg.validate()
    if len(train_data) == 0:
        raise EmptyTrainingSet("training set is empty")
    weights = compute_loss_weights(train_data.y, model_cfg.T)
    if params is None:
        params = init_model(model_cfg, train_cfg.seed)
    learn = trainable(params)
    dtype = params["conv1.kernel"].dtype
    state = AdamState(train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
    rng = np.random.default_rng(train_cfg.seed)
    batch = min(train_cfg.batch_size, len(train_data))
    history: list[EpochRecord] = []
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(train_data))
        losses = []
        for lo in range(0, len(order), batch):
            idx = order[lo:lo + batch]
            for p in learn.values():
                p.zero_grad()
            x = train_data.x[idx].astype(dtype)
            y = train_data.y[idx]
            res = forward(x, params, model_cfg, teacher=y, tf_prob=train_cfg.tf_prob,
                          rng=rng, training=True)
            loss = wcce_loss(res.logits, y[:, 1:], weights)
            ad.backward(loss, list(learn.values()))
            if train_cfg.clip_norm is not None:
                clip_grad_norm(learn, train_cfg.clip_norm)
            adam_step(learn, state)
            losses.append(float(loss.data))
        wacc = per_ = float("nan")
        if test_data is not None and len(test_data) and (
                epoch % train_cfg.eval_every == 0 or epoch == train_cfg.epochs):
            wacc, per_, _ = evaluate_dataset(params, model_cfg, test_data, weights)
        rec = EpochRecord(epoch, float(np.mean(losses)), wacc, per_)
        history.append(rec)
        log.info("epoch %d loss %.5f wacc %.4f per %.4f", epoch, rec.mean_loss, wacc, per_)
        if callback is not None:
            callback(rec)
    return params, history, weights


def write_history(path, history: Sequence[EpochRecord]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss", "weighted_accuracy", "per"])
        for r in history:
            writer.writerow([r.epoch, repr(r.mean_loss), repr(r.weighted_accuracy), repr(r.per)])
