"""Gaussian confidence calibration of detector scores.

Each detector's maximum pre-softmax correlation score over the training
set is modeled as a normal variable; the confidence of a detection is the
CDF of that fitted normal evaluated at the image's score.  Low confidence
indicates the part is likely not visible.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from partmint.bank import DetectorBank, forward, forward_batch
from partmint.errors import DegenerateDetectorWarning, DimensionMismatchError
from partmint.ops import as_feature_map

MIN_VARIANCE = 1e-12


@dataclass
class CalibrationParams:
    """Per-detector score mean and variance fitted over a training set."""

    mu: np.ndarray  # (p,)
    sigma2: np.ndarray  # (p,) positive
    count: int  # samples used for the fit

    @property
    def p(self) -> int:
        return self.mu.shape[0]


@dataclass
class ConfidenceResult:
    confidences: np.ndarray  # (p,) in [0, 1]
    max_scores: np.ndarray  # (p,) raw scores the confidences were computed from
    max_locations: np.ndarray  # (p, 2) int


def fit_calibration(bank: DetectorBank, feats) -> CalibrationParams:
    """Fit per-detector mean and unbiased variance of the max scores.

    A detector with (near-)constant scores gets its variance clamped to
    ``MIN_VARIANCE`` and raises a :class:`DegenerateDetectorWarning`; such a
    detector carries no visibility information.
    """
    fb = forward_batch(bank, feats)
    scores = fb.max_scores  # (n, p)
    n = scores.shape[0]
    if n < 2:
        raise ValueError(f"calibration needs at least 2 images, got {n}")
    mu = scores.mean(axis=0)
    sigma2 = scores.var(axis=0, ddof=1)
    for i in np.flatnonzero(sigma2 < MIN_VARIANCE):
        warnings.warn(
            f"detector {i} produced near-constant scores (variance {sigma2[i]:.3e}); "
            f"clamping variance to {MIN_VARIANCE:g}",
            DegenerateDetectorWarning,
            stacklevel=2,
        )
    return CalibrationParams(mu=mu, sigma2=np.maximum(sigma2, MIN_VARIANCE), count=n)


def normal_cdf(z: float, mu: float, sigma2: float) -> float:
    """CDF of N(mu, sigma2) at ``z``, via the complementary error function."""
    if sigma2 <= 0:
        raise ValueError(f"variance must be positive, got {sigma2}")
    return 0.5 * math.erfc(-(z - mu) / math.sqrt(2.0 * sigma2))


def confidence(params: CalibrationParams, bank: DetectorBank, fmap) -> ConfidenceResult:
    """Per-detector confidence for one image, with score argmax locations."""
    if params.p != bank.p:
        raise DimensionMismatchError(
            f"calibration holds {params.p} detectors but bank has {bank.p}"
        )
    fr = forward(bank, as_feature_map(fmap))
    conf = np.array(
        [
            normal_cdf(float(fr.max_scores[i]), float(params.mu[i]), float(params.sigma2[i]))
            for i in range(bank.p)
        ]
    )
    return ConfidenceResult(
        confidences=conf, max_scores=fr.max_scores, max_locations=fr.max_locations
    )
