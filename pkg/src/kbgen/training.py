"""Optimization of the tuple objective.

The loss is the mean negative log-likelihood of the masked targets
(object words plus END) under the model's next-token distribution.
Training uses bias-corrected Adam with decoupled weight decay on
projection matrices, a linear warmup / linear decay learning-rate
schedule, global-norm gradient clipping, and early stopping on dev loss.
Everything is seeded: identical (seed, config, data) reproduce the same
checkpoint byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import KbgenError, kernels
from .autodiff import Tape, Tensor, backward, cross_entropy, zero_grads
from .model import ModelConfig, clone_parameters, forward, is_decayed, parameter_names
from .vocab import EncodedSequence, Vocabulary, encode_sentence, stack_sequences


class TrainingError(KbgenError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite training loss ({value}) at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    max_lr: float = 1e-3
    warmup_steps: int = 100
    total_steps: int = 3000
    batch_size: int = 64
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    patience: int = 10
    eval_every: int = 250
    seed: int = 0
    fraction: float = 1.0
    relation_split: str = "full"
    rendering: str = "symbol"
    meta_tokens: bool = False

    def __post_init__(self):
        if self.warmup_steps >= self.total_steps:
            raise TrainingError(
                f"warmup_steps {self.warmup_steps} must be < total_steps {self.total_steps}"
            )
        if self.batch_size < 1:
            raise TrainingError("batch_size must be >= 1")


# One-flag reproductions of the reference hyperparameter sets, plus the
# small CPU-friendly configuration used throughout the tests.
PRESETS: dict[str, dict] = {
    "atomic-paper": {
        "train": dict(max_lr=6.25e-5, warmup_steps=100, total_steps=50_000,
                      batch_size=64, clip_norm=1.0),
        "model": dict(n_layers=12, d_model=768, n_heads=12, d_ff=3072, dropout=0.1),
        "rendering": "symbol",
    },
    "conceptnet-paper": {
        "train": dict(max_lr=1e-5, warmup_steps=200, total_steps=100_000,
                      batch_size=64, clip_norm=1.0),
        "model": dict(n_layers=12, d_model=768, n_heads=12, d_ff=3072, dropout=0.1),
        "rendering": "language",
    },
    "desk": {
        "train": dict(max_lr=1e-3, warmup_steps=100, total_steps=1500,
                      batch_size=64, clip_norm=1.0, eval_every=250, patience=10),
        "model": dict(n_layers=2, d_model=64, n_heads=4, d_ff=256, dropout=0.1),
        "rendering": "symbol",
    },
}


def tuple_loss(logits: Tensor, ids: np.ndarray, loss_mask: np.ndarray) -> Tensor:
    """Mean NLL over masked target positions of a batch. Position t is
    masked when the token at t+1 is a prediction target."""
    ids = np.asarray(ids)
    mask = np.asarray(loss_mask, dtype=bool).copy()
    targets = np.zeros_like(ids)
    targets[:, :-1] = ids[:, 1:]
    mask[:, -1] = False  # the final position has nothing to predict
    return cross_entropy(logits, targets, mask)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear ramp to max_lr over warmup_steps, then linear decay to zero
    at total_steps."""
    if step < 0:
        raise TrainingError(f"negative step {step}")
    if step <= cfg.warmup_steps:
        return cfg.max_lr * step / cfg.warmup_steps
    if step >= cfg.total_steps:
        return 0.0
    return cfg.max_lr * (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps)


def gradient_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            g = p.grad.astype(np.float64, copy=False)
            total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_gradients(params: dict[str, Tensor], clip_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most clip_norm.
    Returns the pre-clip norm."""
    if clip_norm <= 0:
        raise TrainingError("clip_norm must be positive")
    norm = gradient_norm(params)
    if norm > clip_norm:
        factor = np.float32(clip_norm / norm)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


class OptimizerState:
    """Adam moment buffers plus the global step counter."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step = 0


def adam_step(params: dict[str, Tensor], state: OptimizerState, lr: float, cfg: TrainConfig):
    """One bias-corrected Adam update; decoupled weight decay applies to
    projection matrices only."""
    state.step += 1
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise TrainingError(f"gradient shape {g.shape} != parameter shape {p.data.shape} ({name})")
        wd = cfg.weight_decay if is_decayed(name) else 0.0
        kernels.impl.adam_update(
            p.data, g, state.m[name], state.v[name],
            state.step, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, wd,
        )


@dataclass
class CurvePoint:
    step: int
    lr: float
    train_loss: float | None
    dev_loss: float | None


@dataclass
class TrainResult:
    params: dict[str, Tensor]  # best-dev checkpoint
    final_params: dict[str, Tensor]
    best_dev_loss: float
    best_step: int
    steps_run: int
    stopped_early: bool
    curve: list[CurvePoint] = field(default_factory=list)


def evaluate_loss(params, config: ModelConfig, ids, mask, batch_size: int = 64) -> float:
    """Mean NLL per masked target token over a whole dataset."""
    total, count = 0.0, 0
    for lo in range(0, ids.shape[0], batch_size):
        bi = ids[lo : lo + batch_size]
        bm = mask[lo : lo + batch_size]
        logits = forward(params, config, bi, training=False)
        loss = tuple_loss(logits, bi, bm)
        n = int(bm[:, :-1].sum())
        total += float(loss.data) * n
        count += n
    if count == 0:
        raise TrainingError("no masked targets in evaluation set")
    return total / count


def _batches(n: int, batch_size: int, rng):
    """Endless stream of index batches, reshuffled each epoch."""
    while True:
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            yield order[lo : lo + batch_size]


def train(
    params: dict[str, Tensor],
    config: ModelConfig,
    train_ids: np.ndarray,
    train_mask: np.ndarray,
    dev_ids: np.ndarray,
    dev_mask: np.ndarray,
    cfg: TrainConfig,
    log_fh=None,
) -> TrainResult:
    """Optimize params in place; returns the best-dev snapshot and curve.

    Dev loss is evaluated every eval_every steps; training stops at
    total_steps or once `patience` consecutive evaluations fail to
    improve on the best dev loss. Raises TrainingDiverged on a
    non-finite training loss.
    """
    if train_ids.shape[0] == 0:
        raise TrainingError("empty training set")
    if dev_ids.shape[0] == 0:
        raise TrainingError("empty dev set")

    state = OptimizerState(params)
    batch_rng = np.random.default_rng([cfg.seed, 0x5A])

    dev0 = evaluate_loss(params, config, dev_ids, dev_mask, cfg.batch_size)
    curve = [CurvePoint(0, 0.0, None, dev0)]
    _log_row(log_fh, curve[-1])
    best = clone_parameters(params)
    best_loss, best_step = dev0, 0
    bad_evals = 0
    stopped_early = False
    since_eval: list[float] = []

    batches = _batches(train_ids.shape[0], cfg.batch_size, batch_rng)
    step = 0
    for step in range(1, cfg.total_steps + 1):
        idx = next(batches)
        drop_rng = np.random.default_rng([cfg.seed, 0xD0, step])
        with Tape() as tape:
            logits = forward(params, config, train_ids[idx], rng=drop_rng, training=True)
            loss = tuple_loss(logits, train_ids[idx], train_mask[idx])
        loss_val = float(loss.data)
        if not math.isfinite(loss_val):
            raise TrainingDiverged(step, loss_val)
        backward(tape, loss)
        clip_gradients(params, cfg.clip_norm)
        adam_step(params, state, lr_at(step, cfg), cfg)
        zero_grads(params.values())
        since_eval.append(loss_val)

        if step % cfg.eval_every == 0 or step == cfg.total_steps:
            dev = evaluate_loss(params, config, dev_ids, dev_mask, cfg.batch_size)
            point = CurvePoint(step, lr_at(step, cfg), float(np.mean(since_eval)), dev)
            curve.append(point)
            _log_row(log_fh, point)
            since_eval = []
            if dev < best_loss:
                best = clone_parameters(params)
                best_loss, best_step = dev, step
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals > cfg.patience:
                    stopped_early = True
                    break

    return TrainResult(
        params=best,
        final_params=params,
        best_dev_loss=best_loss,
        best_step=best_step,
        steps_run=step,
        stopped_early=stopped_early,
        curve=curve,
    )


LOSS_CSV_HEADER = "step,lr,train_loss,dev_loss"


def _fmt(x):
    return "" if x is None else repr(float(x))


def _log_row(fh, point: CurvePoint):
    if fh is not None:
        fh.write(f"{point.step},{_fmt(point.lr)},{_fmt(point.train_loss)},{_fmt(point.dev_loss)}\n")


def write_loss_csv(path, curve: list[CurvePoint]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(LOSS_CSV_HEADER + "\n")
        for point in curve:
            _log_row(fh, point)


def encode_lm_corpus(
    sentences: list[str], vocab: Vocabulary, seq_len: int
) -> list[EncodedSequence]:
    return [encode_sentence(vocab, s, seq_len) for s in sentences]


def pretrain_lm(
    params: dict[str, Tensor],
    config: ModelConfig,
    vocab: Vocabulary,
    sentences: list[str],
    cfg: TrainConfig,
    seq_len: int | None = None,
) -> TrainResult:
    """Plain next-token language-model training over full sentences (every
    real token is a target), used to warm-start tuple training."""
    if not sentences:
        raise TrainingError("empty pretraining corpus")
    if seq_len is None:
        seq_len = min(config.max_seq_len, max(len(s.split()) for s in sentences) + 1)
    if seq_len > config.max_seq_len:
        raise TrainingError(f"seq_len {seq_len} exceeds model max_seq_len {config.max_seq_len}")
    seqs = encode_lm_corpus(sentences, vocab, seq_len)
    perm = np.random.default_rng([cfg.seed, 0x7E]).permutation(len(seqs))
    n_dev = max(1, len(seqs) // 10)
    dev_seqs = [seqs[i] for i in perm[:n_dev]]
    train_seqs = [seqs[i] for i in perm[n_dev:]]
    if not train_seqs:
        raise TrainingError("pretraining corpus too small to split")
    tr_ids, tr_mask = stack_sequences(train_seqs)
    dv_ids, dv_mask = stack_sequences(dev_seqs)
    return train(params, config, tr_ids, tr_mask, dv_ids, dv_mask, cfg)
