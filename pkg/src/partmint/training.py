"""Composite objective, analytic gradient and the RMSprop training loop.

The objective drives each detector's smoothed activation map to
concentrate its mass (locality term, bounded in [-1, 0]) while penalizing
any cell whose activation summed across detectors exceeds 1 (unicity
hinge, always >= 0):

    total = locality + lam * unicity

Gradients are exact up to the subgradient choice at the max operators,
which route through the row-major-first argmax cell.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import IO, Sequence

import numpy as np

from partmint import kernels as backend
from partmint.bank import BatchForward, DetectorBank, ForwardResult, forward_batch, stack_features
from partmint.errors import DimensionMismatchError, NumericError


@dataclass
class TrainConfig:
    # batch_size 1 gives the optimizer enough steps to converge within the
    # default 30 epochs on desk-scale datasets (a few hundred images); use
    # larger batches for datasets with thousands of images.
    lam: float = 0.2
    epochs: int = 30
    learning_rate: float = 5e-4
    weight_decay: float = 1e-5
    batch_size: int = 1
    rmsprop_smoothing: float = 0.99
    rmsprop_epsilon: float = 1e-8
    seed: int = 0

    def validate(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.rmsprop_smoothing < 1.0:
            raise ValueError("rmsprop_smoothing must be in (0, 1)")
        if self.rmsprop_epsilon <= 0:
            raise ValueError("rmsprop_epsilon must be positive")


@dataclass
class LossBreakdown:
    locality: float
    unicity: float
    total: float

    @classmethod
    def combine(cls, locality: float, unicity: float, lam: float) -> "LossBreakdown":
        return cls(locality=locality, unicity=unicity, total=locality + lam * unicity)


@dataclass
class EpochStats:
    epoch: int
    locality: float
    unicity: float
    total: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    final_coverage: float = float("nan")


def _as_results(batch) -> list[ForwardResult]:
    if isinstance(batch, BatchForward):
        return batch.results()
    results = list(batch)
    if not results:
        raise ValueError("batch of forward results is empty")
    return results


def locality_loss(batch) -> float:
    """Mean negated max of the smoothed maps: -(1/p) sum_i (1/n) sum_x max."""
    results = _as_results(batch)
    n = len(results)
    p = results[0].p
    total = 0.0
    for r in results:
        total += r.smoothed_maps.reshape(p, -1).max(axis=1).sum()
    return -total / (p * n)


def unicity_loss(batch) -> float:
    """Mean hinge on the peak of the summed activation map."""
    results = _as_results(batch)
    total = 0.0
    for r in results:
        total += max(float(r.activation_maps.sum(axis=0).max()) - 1.0, 0.0)
    return total / len(results)


def total_loss(batch, lam: float) -> LossBreakdown:
    results = _as_results(batch)
    return LossBreakdown.combine(locality_loss(results), unicity_loss(results), lam)


def loss_and_gradient(bank: DetectorBank, feats, lam: float) -> tuple[LossBreakdown, np.ndarray]:
    """Batch loss and exact d(total)/d(kernels), shape (p, D)."""
    stacked = stack_features(feats)
    if stacked.shape[3] != bank.depth:
        raise DimensionMismatchError(
            f"bank depth {bank.depth} does not match feature depth {stacked.shape[3]}"
        )
    loc, uni, grad = backend.loss_grad(stacked, bank.kernels, float(lam))
    return LossBreakdown.combine(loc, uni, lam), grad


@dataclass
class RmspropState:
    v: np.ndarray  # running mean of squared gradients, same shape as kernels

    @classmethod
    def zeros_like(cls, bank: DetectorBank) -> "RmspropState":
        return cls(v=np.zeros_like(bank.kernels))


def rmsprop_update(w: np.ndarray, g: np.ndarray, v: np.ndarray, cfg: TrainConfig):
    """One RMSprop step, in place on ``w`` and ``v``.

    The running average accumulates the raw gradient; L2 weight decay is
    added to the numerator only.
    """
    rho = cfg.rmsprop_smoothing
    v *= rho
    v += (1.0 - rho) * g * g
    g_total = g if cfg.weight_decay == 0.0 else g + cfg.weight_decay * w
    w -= cfg.learning_rate * g_total / (np.sqrt(v) + cfg.rmsprop_epsilon)


def rmsprop_step(
    bank: DetectorBank, grad: np.ndarray, state: RmspropState, cfg: TrainConfig
) -> tuple[DetectorBank, RmspropState]:
    if grad.shape != bank.kernels.shape:
        raise DimensionMismatchError(
            f"gradient shape {grad.shape} does not match bank shape {bank.kernels.shape}"
        )
    rmsprop_update(bank.kernels, grad, state.v, cfg)
    return bank, state


def train(
    bank: DetectorBank,
    feats,
    cfg: TrainConfig | None = None,
    log_stream: IO[str] | None = None,
) -> tuple[DetectorBank, TrainReport]:
    """Train the bank in place over ``feats`` (n, H, W, D).

    Shuffles with a generator seeded from ``cfg.seed``; every epoch logs the
    image-weighted mean loss breakdown (one JSON line per epoch when
    ``log_stream`` is given).  Identical inputs, config and seed give a
    bitwise-identical trajectory on one machine.
    """
    cfg = cfg or TrainConfig()
    cfg.validate()
    stacked = stack_features(feats)
    if stacked.shape[0] == 0:
        raise ValueError("dataset is empty")
    n = stacked.shape[0]
    bank.lam = cfg.lam
    rng = np.random.default_rng(cfg.seed)
    state = RmspropState.zeros_like(bank)
    report = TrainReport()

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = np.ascontiguousarray(stacked[idx])
            breakdown, grad = loss_and_gradient(bank, batch, cfg.lam)
            if not np.isfinite(breakdown.total):
                raise NumericError(f"non-finite loss at epoch {epoch}: {breakdown}")
            rmsprop_step(bank, grad, state, cfg)
            sums += len(idx) * np.array([breakdown.locality, breakdown.unicity, breakdown.total])
        stats = EpochStats(
            epoch=epoch,
            locality=sums[0] / n,
            unicity=sums[1] / n,
            total=sums[2] / n,
            seconds=time.perf_counter() - t0,
        )
        report.epochs.append(stats)
        if log_stream is not None:
            log_stream.write(json.dumps(stats.__dict__) + "\n")

    report.final_coverage = attention_coverage(bank, stacked)
    return bank, report


def attention_coverage(bank: DetectorBank, feats) -> float:
    """Mean per-image mass of the cellwise max over detectors, in [1/p, 1].

    1 means every detector claims its own region; 1/p means the detectors
    are fully redundant.
    """
    stacked = stack_features(feats)
    if stacked.shape[0] == 0:
        raise ValueError("dataset is empty")
    fb = forward_batch(bank, stacked)
    per_image = fb.activations.max(axis=1).sum(axis=(1, 2))
    return float(per_image.mean()) / bank.p
