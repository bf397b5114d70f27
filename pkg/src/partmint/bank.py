"""The learnable bank of part-detector kernels and its forward pass.

A bank holds ``p`` kernels of depth ``D``.  Scoring an (H, W, D) feature
map with one kernel is a 1x1 convolution (no bias); a 2-D spatial softmax
turns each score map into an activation map, and a 3x3 box sum produces
the smoothed map used by the locality objective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from partmint import kernels as backend
from partmint.errors import DimensionMismatchError
from partmint.ops import as_feature_map


@dataclass
class DetectorBank:
    """``p`` learnable kernels of depth ``D``, plus training provenance."""

    kernels: np.ndarray  # (p, D) float64
    seed: int | None = None
    lam: float | None = None  # unicity weight the bank was trained with

    def __post_init__(self):
        self.kernels = np.ascontiguousarray(self.kernels, dtype=np.float64)
        if self.kernels.ndim != 2 or min(self.kernels.shape) < 1:
            raise DimensionMismatchError(
                f"kernels must be a non-empty (p, D) array, got {self.kernels.shape}"
            )
        if not np.all(np.isfinite(self.kernels)):
            raise ValueError("kernel weights must be finite")

    @property
    def p(self) -> int:
        return self.kernels.shape[0]

    @property
    def depth(self) -> int:
        return self.kernels.shape[1]


@dataclass
class ForwardResult:
    """Per-detector forward quantities for a single feature map."""

    score_maps: np.ndarray  # (p, H, W)
    activation_maps: np.ndarray  # (p, H, W), each sums to 1
    smoothed_maps: np.ndarray  # (p, H, W)
    max_scores: np.ndarray  # (p,) max pre-softmax correlation per detector
    max_locations: np.ndarray  # (p, 2) int, (h, w) of each score-map argmax

    @property
    def p(self) -> int:
        return self.score_maps.shape[0]


@dataclass
class BatchForward:
    """Stacked forward quantities for a batch of equally shaped feature maps."""

    scores: np.ndarray  # (n, p, H, W)
    activations: np.ndarray
    smoothed: np.ndarray
    max_scores: np.ndarray  # (n, p)
    max_locations: np.ndarray  # (n, p, 2) int

    def result(self, x: int) -> ForwardResult:
        return ForwardResult(
            score_maps=self.scores[x],
            activation_maps=self.activations[x],
            smoothed_maps=self.smoothed[x],
            max_scores=self.max_scores[x],
            max_locations=self.max_locations[x],
        )

    def results(self) -> list[ForwardResult]:
        return [self.result(x) for x in range(self.scores.shape[0])]


def init_bank(num_detectors: int, depth: int, seed: int) -> DetectorBank:
    """Draw a fresh bank, i.i.d. normal with std ``1/sqrt(depth)``.

    The scale keeps initial correlation scores O(1) for unit-scale
    features; identical seeds give bitwise-identical banks.
    """
    if num_detectors < 1 or depth < 1:
        raise ValueError("num_detectors and depth must be >= 1")
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 1.0 / math.sqrt(depth), size=(num_detectors, depth))
    return DetectorBank(kernels=weights, seed=seed)


def _check_depth(bank: DetectorBank, depth: int):
    if bank.depth != depth:
        raise DimensionMismatchError(
            f"bank depth {bank.depth} does not match feature depth {depth}"
        )


def stack_features(feats) -> np.ndarray:
    """Coerce a dataset to a C-contiguous float64 (n, H, W, D) stack."""
    if isinstance(feats, np.ndarray) and feats.ndim == 4:
        return np.ascontiguousarray(feats, dtype=np.float64)
    maps = [as_feature_map(f) for f in feats]
    if not maps:
        raise ValueError("dataset is empty")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise DimensionMismatchError(
                f"all feature maps in a batch must share one shape; saw {shape} and {m.shape}"
            )
    return np.ascontiguousarray(np.stack(maps))


def forward_batch(bank: DetectorBank, feats) -> BatchForward:
    """Forward pass of every detector over a stacked feature batch."""
    stacked = stack_features(feats)
    _check_depth(bank, stacked.shape[3])
    n, h, w, _ = stacked.shape
    scores = backend.conv_scores(stacked, bank.kernels)
    acts = backend.softmax2d(scores)
    smoothed = backend.box3x3(acts)
    flat = scores.reshape(n, bank.p, h * w)
    arg = flat.argmax(axis=2)
    max_scores = np.take_along_axis(flat, arg[..., None], axis=2)[..., 0]
    max_locations = np.stack(np.divmod(arg, w), axis=-1)
    return BatchForward(scores, acts, smoothed, max_scores, max_locations)


def forward(bank: DetectorBank, fmap) -> ForwardResult:
    """Forward pass for one feature map."""
    arr = as_feature_map(fmap)
    return forward_batch(bank, arr[None]).result(0)


def summed_activation(fr: ForwardResult) -> np.ndarray:
    """Cellwise sum of the ``p`` activation maps (total mass ``p``)."""
    return fr.activation_maps.sum(axis=0)
