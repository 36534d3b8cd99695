"""Plain-SGD training of the toy bi-encoder on the contrastive objective."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import QAExample
from .encoder import (EncoderParams, LossBatch, features_loss_and_gradient, init_params,
                      loss_and_sparse_gradient, save_params)
from .errors import EmptyPool, NumericalError
from .sampler import SamplingStrategy, TrainingBatch, Variant, build_batch, is_drawable, make_rng

logger = logging.getLogger(__name__)

# Streams of make_rng(seed, ...) used by training.
_EPOCH_STREAM = 1
_VALIDATION_STREAM = 2
_MULTI_STREAM = 3


@dataclass
class TrainConfig:
    """Training hyperparameters.

    The toy encoder sees unit-norm sparse features, so each step touches a
    few hundred columns with small values; plain SGD needs a step of order 1
    to move it. 2.0 is stable on the synthetic corpora; 5.0 learns faster
    and still converges, 0.05 barely moves in 40 epochs.
    """

    learning_rate: float = 2.0
    epochs: int = 40
    batch_size: int = 16
    strategy: str = "inpassage+bm25"
    eval_every: int = 0  # extra validation every N steps; 0 = per epoch only
    seed: int = 0
    dim: int = 64
    feature_space_size: int = 2**15
    context_blend: float = 0.7
    init_scale: Optional[float] = None
    val_pool: int = 256

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.val_pool < 2:
            raise ValueError("val_pool must hold at least one question and one negative")
        SamplingStrategy.parse(self.strategy)


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_accuracy: Optional[float]
    steps: int
    skipped: int
    shared_positive_questions: int
    wall_time: float


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    step_validation: list = field(default_factory=list)
    wall_time: float = 0.0
    final_checkpoint: Optional[str] = None
    best_checkpoint: Optional[str] = None
    best_val_accuracy: Optional[float] = None
    params: Optional[EncoderParams] = field(default=None, repr=False)
    best_params: Optional[EncoderParams] = field(default=None, repr=False)

    @property
    def losses(self) -> list:
        return [e.mean_loss for e in self.epochs]

    @property
    def val_accuracies(self) -> list:
        return [e.val_accuracy for e in self.epochs]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.epochs:
                fh.write(json.dumps(asdict(e)) + "\n")


def concat_datasets(datasets: Sequence[Sequence[QAExample]], seed: int = 0) -> list:
    """Multi regime: member datasets concatenated and shuffled with ``seed``."""
    merged = [ex for ds in datasets for ex in ds]
    perm = make_rng(seed, _MULTI_STREAM).permutation(len(merged))
    return [merged[int(i)] for i in perm]


def validation_batches(dev_set: Sequence[QAExample], pool_size: int = 256,
                       seed: int = 0) -> list:
    """Pools of ``pool_size // 2`` dev questions, each with one BM25 negative."""
    usable = [ex for ex in dev_set if is_drawable(ex)]
    per_pool = max(1, pool_size // 2)
    rng = make_rng(seed, _VALIDATION_STREAM)
    strategy = SamplingStrategy(Variant.OneBM25Random, seed)
    return [build_batch(usable[i:i + per_pool], strategy, rng)
            for i in range(0, len(usable), per_pool)]


def _strict_hits(S: np.ndarray, gold: np.ndarray) -> np.ndarray:
    rows = np.arange(len(S))
    g = S[rows, gold]
    others = S.copy()
    others[rows, gold] = -np.inf
    return g > others.max(axis=1)


def validation_accuracy(dev_batches: Sequence, params: Optional[EncoderParams] = None) -> float:
    """Fraction of questions whose gold strictly beats every pooled candidate.

    Accepts ``TrainingBatch`` objects (encoded with ``params``) or ready
    ``LossBatch`` objects. Ties count as misses.
    """
    hits = total = 0
    for b in dev_batches:
        if isinstance(b, TrainingBatch):
            if params is None:
                raise ValueError("params are required to encode TrainingBatch pools")
            b = b.encode(params)
        if b.m == 0 or b.n == 0:
            continue
        ok = _strict_hits(b.similarities(), b.gold_index)
        hits += int(ok.sum())
        total += len(ok)
    if total == 0:
        raise EmptyPool("validation pool is empty")
    return hits / total


def sgd_step(params: EncoderParams, batch, lr: float) -> float:
    """One in-place SGD update on a LossBatch or TrainingBatch; returns the pre-update loss."""
    if isinstance(batch, TrainingBatch):
        qX, cX = batch.features(params)
        value, (qc, qb), (cc, cb) = features_loss_and_gradient(qX, cX, batch.gold_index, params)
    else:
        value, (qc, qb), (cc, cb) = loss_and_sparse_gradient(batch, params)
    if lr:
        params.question_projection[:, qc] -= lr * qb
        params.context_projection[:, cc] -= lr * cb
    return value


def train(train_set: Sequence[QAExample], dev_set: Sequence[QAExample], config: TrainConfig,
          out_dir=None, params: Optional[EncoderParams] = None) -> TrainReport:
    """Run ``epochs x ceil(n / batch_size)`` SGD steps.

    With ``out_dir`` the final and best-validation checkpoints are written
    there along with ``report.jsonl``. On a numerical failure the current
    (pre-update) parameters are kept as ``last_good.ckpt`` and the error is
    re-raised.
    """
    t0 = time.perf_counter()
    strategy = SamplingStrategy.parse(config.strategy, config.seed)
    if params is None:
        params = init_params(config.dim, config.feature_space_size, config.context_blend,
                             config.seed, config.init_scale)
    else:
        params = params.copy()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    usable = [ex for ex in train_set if is_drawable(ex)]
    skipped = len(train_set) - len(usable)
    if skipped:
        logger.warning("skipping %d training example(s) without usable negatives", skipped)
    if not usable:
        raise ValueError("no trainable examples")
    val = validation_batches(dev_set, config.val_pool, config.seed) if dev_set else []

    report = TrainReport()
    best = -1.0
    steps_per_epoch = math.ceil(len(usable) / config.batch_size)
    global_step = 0
    for epoch in range(config.epochs):
        rng = make_rng(config.seed, _EPOCH_STREAM, epoch)
        order = rng.permutation(len(usable))
        losses, shared = [], 0
        for s in range(steps_per_epoch):
            chunk = [usable[int(i)] for i in order[s * config.batch_size:(s + 1) * config.batch_size]]
            tb = build_batch(chunk, strategy, rng)
            shared += tb.metadata["questions_with_shared_positive"]
            try:
                losses.append(sgd_step(params, tb, config.learning_rate))
            except NumericalError:
                if out is not None:
                    save_params(params, out / "last_good.ckpt")
                report.params = params
                raise
            global_step += 1
            if config.eval_every and val and global_step % config.eval_every == 0:
                report.step_validation.append((global_step, validation_accuracy(val, params)))
        acc = validation_accuracy(val, params) if val else None
        report.epochs.append(EpochRecord(epoch + 1, float(np.mean(losses)), acc, len(losses),
                                         skipped, shared, time.perf_counter() - t0))
        logger.info("epoch %d loss %.4f val %s", epoch + 1, report.epochs[-1].mean_loss, acc)
        if acc is not None and acc > best:
            best = acc
            report.best_val_accuracy = acc
            report.best_params = params.copy()
            if out is not None:
                save_params(params, out / "best.ckpt")
                report.best_checkpoint = str(out / "best.ckpt")

    report.params = params
    report.wall_time = time.perf_counter() - t0
    if out is not None:
        save_params(params, out / "final.ckpt")
        report.final_checkpoint = str(out / "final.ckpt")
        report.write_jsonl(out / "report.jsonl")
    return report
