"""Part-based classifier: masked pooling, per-part MLP heads, summed logits.

The feature map is pooled under each detector's activation map into one
part vector per detector (a convex combination of feature vectors, since
activation maps sum to 1).  Each part vector feeds an independent
affine-ReLU-dropout-affine-ReLU-dropout-affine head; class logits are the
elementwise sum of the head logits, so every decision can be traced back
to its per-part contributions.

The detector bank stays frozen throughout head training.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from partmint.bank import DetectorBank, forward, forward_batch, stack_features
from partmint.errors import DimensionMismatchError, NumericError
from partmint.ops import as_feature_map
from partmint.training import TrainConfig, rmsprop_update


@dataclass
class ClassifierHead:
    """Weights of one part head: depth -> h1 -> h2 -> num_classes."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    dropout_rate: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if (
            self.w1.shape[0] != self.b1.shape[0]
            or self.w2.shape != (self.b2.shape[0], self.w1.shape[0])
            or self.w3.shape != (self.b3.shape[0], self.w2.shape[0])
        ):
            raise DimensionMismatchError("head layer shapes do not chain")

    @property
    def depth(self) -> int:
        return self.w1.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w3.shape[0]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


@dataclass
class PartClassifier:
    bank: DetectorBank
    heads: list[ClassifierHead]
    num_classes: int

    def __post_init__(self):
        if len(self.heads) != self.bank.p:
            raise DimensionMismatchError(
                f"bank has {self.bank.p} detectors but {len(self.heads)} heads given"
            )
        for head in self.heads:
            if head.num_classes != self.num_classes:
                raise DimensionMismatchError("heads disagree on num_classes")
            if head.depth != self.bank.depth:
                raise DimensionMismatchError("head input width does not match bank depth")


@dataclass
class PredictResult:
    class_index: int
    final_logits: np.ndarray  # (num_classes,)
    part_logits: np.ndarray  # (p, num_classes)


def init_head(
    depth: int,
    hidden: tuple[int, int],
    num_classes: int,
    dropout_rate: float,
    rng: np.random.Generator,
) -> ClassifierHead:
    """He-normal weights, zero biases."""
    h1, h2 = hidden

    def draw(rows, cols):
        return rng.normal(0.0, math.sqrt(2.0 / cols), size=(rows, cols))

    return ClassifierHead(
        w1=draw(h1, depth),
        b1=np.zeros(h1),
        w2=draw(h2, h1),
        b2=np.zeros(h2),
        w3=draw(num_classes, h2),
        b3=np.zeros(num_classes),
        dropout_rate=dropout_rate,
    )


def init_classifier(
    bank: DetectorBank,
    num_classes: int,
    hidden: tuple[int, int] = (4096, 4096),
    dropout_rate: float = 0.5,
    seed: int = 0,
) -> PartClassifier:
    rng = np.random.default_rng(seed)
    heads = [
        init_head(bank.depth, hidden, num_classes, dropout_rate, rng) for _ in range(bank.p)
    ]
    return PartClassifier(bank=bank, heads=heads, num_classes=num_classes)


def extract_part_vectors(fmap, activation_maps) -> np.ndarray:
    """Activation-weighted pooling of the feature map, one vector per map.

    ``v[i, d] = sum_hw activation_maps[i, h, w] * fmap[h, w, d]``; with
    softmax-normalized maps this is a weighted average, so the pooled
    support adapts to the spatial extent of the detected part.
    """
    arr = as_feature_map(fmap)
    maps = np.asarray(activation_maps, dtype=np.float64)
    if maps.ndim != 3 or maps.shape[1:] != arr.shape[:2]:
        raise DimensionMismatchError(
            f"activation maps {maps.shape} do not match feature map {arr.shape}"
        )
    return np.einsum("phw,hwd->pd", maps, arr)


def _dropout_mask(shape, rate: float, rng: np.random.Generator) -> np.ndarray:
    # inverted dropout: scale kept units so inference needs no rescaling
    return (rng.random(shape) >= rate) / (1.0 - rate)


def head_forward(
    head: ClassifierHead,
    v: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Logits for part vector(s) ``v`` of shape (depth,) or (n, depth)."""
    single = v.ndim == 1
    x = np.atleast_2d(np.asarray(v, dtype=np.float64))
    if x.shape[1] != head.depth:
        raise DimensionMismatchError(
            f"part vector width {x.shape[1]} does not match head depth {head.depth}"
        )
    logits, _ = _head_forward_cached(head, x, training, rng)
    return logits[0] if single else logits


def _head_forward_cached(head, x, training, rng):
    use_dropout = training and head.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    z1 = x @ head.w1.T + head.b1
    a1 = np.maximum(z1, 0.0)
    m1 = _dropout_mask(a1.shape, head.dropout_rate, rng) if use_dropout else None
    d1 = a1 * m1 if use_dropout else a1
    z2 = d1 @ head.w2.T + head.b2
    a2 = np.maximum(z2, 0.0)
    m2 = _dropout_mask(a2.shape, head.dropout_rate, rng) if use_dropout else None
    d2 = a2 * m2 if use_dropout else a2
    logits = d2 @ head.w3.T + head.b3
    return logits, (x, z1, m1, d1, z2, m2, d2)


def _head_backward(head, cache, dlogits):
    x, z1, m1, d1, z2, m2, d2 = cache
    dw3 = dlogits.T @ d2
    db3 = dlogits.sum(axis=0)
    dd2 = dlogits @ head.w3
    da2 = dd2 * m2 if m2 is not None else dd2
    dz2 = da2 * (z2 > 0.0)
    dw2 = dz2.T @ d1
    db2 = dz2.sum(axis=0)
    dd1 = dz2 @ head.w2
    da1 = dd1 * m1 if m1 is not None else dd1
    dz1 = da1 * (z1 > 0.0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return [dw1, db1, dw2, db2, dw3, db3]


def predict(model: PartClassifier, fmap) -> PredictResult:
    """Classify one feature map; dropout is disabled, so this is deterministic.

    ``final_logits`` is exactly the elementwise sum of ``part_logits``;
    ties at the argmax resolve to the lowest class index.
    """
    fr = forward(model.bank, fmap)
    vectors = extract_part_vectors(fmap, fr.activation_maps)
    part_logits = np.stack(
        [head_forward(head, vectors[i]) for i, head in enumerate(model.heads)]
    )
    final = part_logits.sum(axis=0)
    return PredictResult(class_index=int(final.argmax()), final_logits=final, part_logits=part_logits)


@dataclass
class HeadTrainConfig:
    epochs: int = 40
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 16
    rmsprop_smoothing: float = 0.99
    rmsprop_epsilon: float = 1e-8
    seed: int = 0

    def as_train_config(self) -> TrainConfig:
        return TrainConfig(
            lam=0.0,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            rmsprop_smoothing=self.rmsprop_smoothing,
            rmsprop_epsilon=self.rmsprop_epsilon,
            seed=self.seed,
        )


@dataclass
class HeadTrainEpoch:
    epoch: int
    loss: float
    accuracy: float
    seconds: float


def pooled_vectors(bank: DetectorBank, feats) -> np.ndarray:
    """Part vectors for a whole dataset, shape (n, p, D)."""
    stacked = stack_features(feats)
    fb = forward_batch(bank, stacked)
    return np.einsum("nphw,nhwd->npd", fb.activations, stacked, optimize=True)


def _batch_logits(model, vectors, training=False, rng=None, caches=None):
    total = None
    for i, head in enumerate(model.heads):
        logits, cache = _head_forward_cached(head, vectors[:, i, :], training, rng)
        if caches is not None:
            caches.append(cache)
        total = logits if total is None else total + logits
    return total


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def train_classifier(
    model: PartClassifier,
    feats,
    labels,
    cfg: HeadTrainConfig | None = None,
) -> tuple[PartClassifier, list[HeadTrainEpoch]]:
    """Fit the heads by cross-entropy on the summed logits.

    Part vectors are pooled once up front (the bank is frozen, so they
    never change).  Heads are updated jointly with RMSprop on their own
    parameters; detector kernels are not touched.  Deterministic for a
    fixed seed.
    """
    cfg = cfg or HeadTrainConfig()
    tc = cfg.as_train_config()
    tc.validate()
    labels = np.asarray(labels, dtype=np.int64)
    stacked = stack_features(feats)
    n = stacked.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    if labels.shape != (n,):
        raise DimensionMismatchError(f"expected {n} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError(
            f"labels must lie in [0, {model.num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )

    vectors = pooled_vectors(model.bank, stacked)
    rng = np.random.default_rng(cfg.seed)
    states = [[np.zeros_like(p) for p in head.params()] for head in model.heads]
    history: list[HeadTrainEpoch] = []

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        loss_sum = 0.0
        hits = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            vb, yb = vectors[idx], labels[idx]
            caches: list = []
            logits = _batch_logits(model, vb, training=True, rng=rng, caches=caches)
            probs = _softmax_rows(logits)
            picked = np.clip(probs[np.arange(len(idx)), yb], 1e-300, None)
            loss = -float(np.log(picked).mean())
            if not math.isfinite(loss):
                raise NumericError(f"non-finite classifier loss at epoch {epoch}")
            loss_sum += loss * len(idx)
            hits += int((logits.argmax(axis=1) == yb).sum())

            dlogits = probs
            dlogits[np.arange(len(idx)), yb] -= 1.0
            dlogits /= len(idx)
            for head, cache, state in zip(model.heads, caches, states):
                grads = _head_backward(head, cache, dlogits)
                for w, g, v in zip(head.params(), grads, state):
                    rmsprop_update(w, g, v, tc)
        history.append(
            HeadTrainEpoch(
                epoch=epoch,
                loss=loss_sum / n,
                accuracy=hits / n,
                seconds=time.perf_counter() - t0,
            )
        )
    return model, history


def evaluate_classifier(model: PartClassifier, feats, labels) -> float:
    """Fraction of images whose summed-logit argmax matches the label."""
    stacked = stack_features(feats)
    labels = np.asarray(labels, dtype=np.int64)
    vectors = pooled_vectors(model.bank, stacked)
    logits = _batch_logits(model, vectors)
    return float((logits.argmax(axis=1) == labels).mean())
