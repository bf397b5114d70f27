"""File formats, dataset manifests and the synthetic planted-pattern generator.

Feature files are a fixed binary layout (all integers little-endian):

    bytes 0-7    magic ``PCULF001``
    bytes 8-19   H, W, D as unsigned 32-bit
    bytes 20-    H*W*D IEEE-754 single-precision values, row-major (h, w, d)

Banks and classifiers share one container: magic ``PCULM001``, a u32
header length, a UTF-8 JSON header describing the blocks, then the raw
single-precision blocks in order.  Manifests and calibration parameters
are plain JSON.  All writers are atomic (temp file + rename).
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from partmint.bank import DetectorBank
from partmint.calibration import CalibrationParams
from partmint.classifier import ClassifierHead, PartClassifier
from partmint.errors import (
    BadMagicError,
    DataFormatError,
    DimensionOverflowError,
    NonFiniteValueError,
    TrailingDataError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from partmint.ops import as_feature_map

FEATURE_MAGIC = b"PCULF001"
CONTAINER_MAGIC = b"PCULM001"
MAX_CELLS = 2**30
MANIFEST_VERSION = 1
CALIBRATION_VERSION = 1
CONTAINER_VERSION = 1


def atomic_write_bytes(path, data: bytes):
    """Write ``data`` to ``path`` via a temp file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# feature files


def feature_file_bytes(fmap) -> bytes:
    arr = as_feature_map(fmap)
    h, w, d = arr.shape
    header = FEATURE_MAGIC + struct.pack("<III", h, w, d)
    return header + arr.astype("<f4").tobytes()


def write_feature_file(path, fmap):
    atomic_write_bytes(path, feature_file_bytes(fmap))


def _check_magic(raw: bytes, expected: bytes, what: str):
    if len(raw) < 8:
        raise TruncatedFileError(f"{what}: file shorter than the 8-byte magic")
    got = raw[:8]
    if got == expected:
        return
    if got[:5] == expected[:5]:
        raise UnsupportedVersionError(
            f"{what}: unsupported format version {got[5:].decode('ascii', 'replace')!r} "
            f"(expected {expected[5:].decode('ascii')!r})"
        )
    raise BadMagicError(f"{what}: bad magic {got!r}, expected {expected!r}")


def read_feature_file(path) -> np.ndarray:
    """Read one feature file into a float64 (H, W, D) array.

    The whole file is consumed and validated before anything is returned;
    malformed files raise distinct :class:`DataFormatError` subclasses.
    """
    raw = Path(path).read_bytes()
    _check_magic(raw, FEATURE_MAGIC, str(path))
    if len(raw) < 20:
        raise TruncatedFileError(f"{path}: header ends before the three dimension fields")
    h, w, d = struct.unpack_from("<III", raw, 8)
    if h < 1 or w < 1 or d < 1:
        raise DimensionOverflowError(f"{path}: dimensions must be >= 1, got {(h, w, d)}")
    cells = h * w * d
    if cells > MAX_CELLS:
        raise DimensionOverflowError(f"{path}: H*W*D = {cells} exceeds the 2^30 bound")
    expected = 20 + 4 * cells
    if len(raw) < expected:
        raise TruncatedFileError(
            f"{path}: payload holds {len(raw) - 20} bytes, expected {4 * cells}"
        )
    if len(raw) > expected:
        raise TrailingDataError(f"{path}: {len(raw) - expected} bytes beyond the payload")
    values = np.frombuffer(raw, dtype="<f4", offset=20).reshape(h, w, d)
    if not np.all(np.isfinite(values)):
        raise NonFiniteValueError(f"{path}: payload contains non-finite values")
    return values.astype(np.float64)


# ---------------------------------------------------------------------------
# dataset manifests


@dataclass
class ManifestItem:
    id: str
    path: str  # relative to the manifest's directory
    split: str = "train"
    label: int | None = None


@dataclass
class DatasetManifest:
    depth: int
    items: list[ManifestItem] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def split_items(self, split: str | None) -> list[ManifestItem]:
        if split is None:
            return list(self.items)
        return [it for it in self.items if it.split == split]


def save_manifest(path, manifest: DatasetManifest):
    doc = {
        "version": manifest.version,
        "depth": manifest.depth,
        "items": [
            {
                "id": it.id,
                "path": it.path,
                "split": it.split,
                **({"label": it.label} if it.label is not None else {}),
            }
            for it in manifest.items
        ],
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_manifest(path) -> DatasetManifest:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("version", "depth", "items"):
        if key not in doc:
            raise DataFormatError(f"{path}: manifest missing key {key!r}")
    if doc["version"] != MANIFEST_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported manifest version {doc['version']}")
    items = []
    seen = set()
    for entry in doc["items"]:
        item = ManifestItem(
            id=str(entry["id"]),
            path=str(entry["path"]),
            split=str(entry.get("split", "train")),
            label=entry.get("label"),
        )
        if item.split not in ("train", "test"):
            raise DataFormatError(f"{path}: item {item.id!r} has bad split {item.split!r}")
        if item.id in seen:
            raise DataFormatError(f"{path}: duplicate item id {item.id!r}")
        seen.add(item.id)
        items.append(item)
    return DatasetManifest(depth=int(doc["depth"]), items=items, version=int(doc["version"]))


def load_features(manifest_path, split: str | None = None):
    """Load a manifest split as a stacked (n, H, W, D) array.

    Returns ``(features, ids, labels)``; ``labels[i]`` is None when absent.
    All maps must share one shape (depth is checked against the manifest).
    """
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    base = manifest_path.parent
    items = manifest.split_items(split)
    if not items:
        raise DataFormatError(f"{manifest_path}: no items for split {split!r}")
    maps, ids, labels = [], [], []
    shape = None
    for it in items:
        arr = read_feature_file(base / it.path)
        if arr.shape[2] != manifest.depth:
            raise DataFormatError(
                f"{it.path}: depth {arr.shape[2]} does not match manifest depth {manifest.depth}"
            )
        if shape is None:
            shape = arr.shape
        elif arr.shape != shape:
            raise DataFormatError(
                f"{it.path}: shape {arr.shape} differs from {shape}; "
                "a training run needs uniformly shaped feature maps"
            )
        maps.append(arr)
        ids.append(it.id)
        labels.append(it.label)
    return np.stack(maps), ids, labels


# ---------------------------------------------------------------------------
# model containers


def _container_bytes(header: dict, blocks: list[tuple[str, np.ndarray]]) -> bytes:
    head = dict(header)
    head["version"] = CONTAINER_VERSION
    head["dtype"] = "<f4"
    head["blocks"] = [{"name": name, "shape": list(arr.shape)} for name, arr in blocks]
    head_bytes = json.dumps(head).encode("utf-8")
    out = [CONTAINER_MAGIC, struct.pack("<I", len(head_bytes)), head_bytes]
    out += [np.ascontiguousarray(arr).astype("<f4").tobytes() for _, arr in blocks]
    return b"".join(out)


def _read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    _check_magic(raw, CONTAINER_MAGIC, str(path))
    if len(raw) < 12:
        raise TruncatedFileError(f"{path}: missing header length")
    (head_len,) = struct.unpack_from("<I", raw, 8)
    if len(raw) < 12 + head_len:
        raise TruncatedFileError(f"{path}: header truncated")
    try:
        header = json.loads(raw[12 : 12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: container header is not valid JSON: {exc}") from exc
    if header.get("version") != CONTAINER_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported container version {header.get('version')!r}"
        )
    offset = 12 + head_len
    blocks: dict[str, np.ndarray] = {}
    for spec in header.get("blocks", []):
        shape = tuple(int(s) for s in spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        if len(raw) < offset + nbytes:
            raise TruncatedFileError(f"{path}: block {spec['name']!r} truncated")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValueError(f"{path}: block {spec['name']!r} has non-finite values")
        blocks[spec["name"]] = arr.astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise TrailingDataError(f"{path}: {len(raw) - offset} bytes beyond the declared blocks")
    return header, blocks


def save_bank(path, bank: DetectorBank):
    header = {
        "kind": "bank",
        "p": bank.p,
        "D": bank.depth,
        "lambda": bank.lam,
        "seed": bank.seed,
    }
    atomic_write_bytes(path, _container_bytes(header, [("kernels", bank.kernels)]))


def load_bank(path) -> DetectorBank:
    header, blocks = _read_container(path)
    if header.get("kind") != "bank":
        raise DataFormatError(f"{path}: container holds {header.get('kind')!r}, expected 'bank'")
    if "kernels" not in blocks:
        raise DataFormatError(f"{path}: bank container missing the kernel block")
    return DetectorBank(kernels=blocks["kernels"], seed=header.get("seed"), lam=header.get("lambda"))


def save_classifier(path, model: PartClassifier):
    h1 = model.heads[0].w1.shape[0]
    h2 = model.heads[0].w2.shape[0]
    header = {
        "kind": "classifier",
        "p": model.bank.p,
        "D": model.bank.depth,
        "num_classes": model.num_classes,
        "hidden": [h1, h2],
        "dropout_rate": model.heads[0].dropout_rate,
        "lambda": model.bank.lam,
        "seed": model.bank.seed,
    }
    blocks = [("kernels", model.bank.kernels)]
    for i, head in enumerate(model.heads):
        for name, arr in zip(("w1", "b1", "w2", "b2", "w3", "b3"), head.params()):
            blocks.append((f"head{i}/{name}", arr))
    atomic_write_bytes(path, _container_bytes(header, blocks))


def load_classifier(path) -> PartClassifier:
    header, blocks = _read_container(path)
    if header.get("kind") != "classifier":
        raise DataFormatError(
            f"{path}: container holds {header.get('kind')!r}, expected 'classifier'"
        )
    bank = DetectorBank(
        kernels=blocks["kernels"], seed=header.get("seed"), lam=header.get("lambda")
    )
    heads = []
    for i in range(int(header["p"])):
        try:
            parts = {name: blocks[f"head{i}/{name}"] for name in ("w1", "b1", "w2", "b2", "w3", "b3")}
        except KeyError as exc:
            raise DataFormatError(f"{path}: classifier container missing block {exc}") from exc
        heads.append(ClassifierHead(dropout_rate=float(header["dropout_rate"]), **parts))
    return PartClassifier(bank=bank, heads=heads, num_classes=int(header["num_classes"]))


def save_calibration(path, params: CalibrationParams):
    doc = {
        "version": CALIBRATION_VERSION,
        "p": params.p,
        "entries": [
            {"mu": float(params.mu[i]), "sigma2": float(params.sigma2[i]), "count": params.count}
            for i in range(params.p)
        ],
    }
    atomic_write_text(path, json.dumps(doc, indent=2) + "\n")


def load_calibration(path) -> CalibrationParams:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
    if doc.get("version") != CALIBRATION_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported calibration version")
    entries = doc["entries"]
    if len(entries) != doc.get("p"):
        raise DataFormatError(f"{path}: entry count does not match declared p")
    return CalibrationParams(
        mu=np.array([e["mu"] for e in entries], dtype=np.float64),
        sigma2=np.array([e["sigma2"] for e in entries], dtype=np.float64),
        count=int(entries[0]["count"]) if entries else 0,
    )


# ---------------------------------------------------------------------------
# synthetic planted-pattern datasets


@dataclass
class SyntheticSpec:
    """Recipe for a desk-scale dataset with known part locations.

    Each image is i.i.d. Gaussian noise with one scaled unit direction
    added per planted pattern at a random cell (cells distinct within an
    image).  Directions are mutually orthogonal, so detector-to-pattern
    assignment is unambiguous.  ``pattern_gain`` may be a single value or
    one value per pattern.  When ``num_classes`` is set, patterns carry
    orthogonally rotated variant directions and the class label encodes
    the variant combination, so classification requires part-local
    information.
    """

    height: int = 7
    width: int = 7
    depth: int = 16
    p_true: int = 4
    n_train: int = 200
    n_test: int = 100
    noise_sigma: float = 0.5
    pattern_gain: float | Sequence[float] = 5.0
    absence_rate: float = 0.0
    num_classes: int | None = None
    seed: int = 0

    def gains(self) -> np.ndarray:
        g = np.asarray(self.pattern_gain, dtype=np.float64)
        if g.ndim == 0:
            g = np.full(self.p_true, float(g))
        if g.shape != (self.p_true,):
            raise ValueError(f"need one gain or {self.p_true} gains, got shape {g.shape}")
        return g

    def validate(self):
        if min(self.height, self.width, self.depth, self.p_true) < 1:
            raise ValueError("dimensions and p_true must be >= 1")
        if self.p_true > self.depth:
            raise ValueError(f"p_true={self.p_true} exceeds depth {self.depth}")
        if self.p_true > self.height * self.width:
            raise ValueError("more patterns than cells")
        if not 0.0 <= self.absence_rate < 1.0:
            raise ValueError("absence_rate must be in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if min(self.n_train, self.n_test) < 0:
            raise ValueError("n_train and n_test must be nonnegative")
        self.gains()
        v = self.variants_per_pattern()
        if self.p_true * v > self.depth:
            raise ValueError(
                f"{self.num_classes} classes need {self.p_true * v} orthogonal directions, "
                f"but depth is only {self.depth}"
            )

    def variants_per_pattern(self) -> int:
        if not self.num_classes or self.num_classes <= 1:
            return 1
        v = 2
        while v**self.p_true < self.num_classes:
            v += 1
        return v


@dataclass
class ImageTruth:
    id: str
    split: str
    cells: np.ndarray  # (p_true, 2) int
    present: np.ndarray  # (p_true,) bool
    label: int | None = None


@dataclass
class GroundTruth:
    directions: np.ndarray  # (p_true, D) base unit directions
    variant_directions: np.ndarray  # (p_true, v, D); variant 0 is the base
    images: list[ImageTruth]


@dataclass
class SyntheticData:
    spec: SyntheticSpec
    train: np.ndarray  # (n_train, H, W, D)
    test: np.ndarray
    truth: GroundTruth

    def labels(self, split: str) -> np.ndarray | None:
        if self.spec.num_classes is None:
            return None
        values = [t.label for t in self.truth.images if t.split == split]
        return np.array(values, dtype=np.int64)

    def truths(self, split: str) -> list[ImageTruth]:
        return [t for t in self.truth.images if t.split == split]


def _orthonormal_frame(depth: int, rng: np.random.Generator) -> np.ndarray:
    a = rng.standard_normal((depth, depth))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))  # canonical signs, deterministic


def synthesize(spec: SyntheticSpec) -> SyntheticData:
    """Generate the dataset in memory (float64); see :class:`SyntheticSpec`."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    gains = spec.gains()
    v = spec.variants_per_pattern()
    frame = _orthonormal_frame(spec.depth, rng)
    base = frame[:, : spec.p_true].T
    variants = np.empty((spec.p_true, v, spec.depth))
    variants[:, 0] = base
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    for j in range(spec.p_true):
        for m in range(1, v):
            extra = frame[:, spec.p_true + j * (v - 1) + (m - 1)]
            variants[j, m] = (base[j] + extra) * inv_sqrt2

    truth_images: list[ImageTruth] = []

    def make_split(split: str, count: int) -> np.ndarray:
        feats = np.empty((count, spec.height, spec.width, spec.depth))
        for x in range(count):
            label = None
            if spec.num_classes:
                label = int(rng.integers(spec.num_classes))
            present = rng.random(spec.p_true) >= spec.absence_rate
            flat_cells = rng.choice(spec.height * spec.width, size=spec.p_true, replace=False)
            cells = np.stack(np.divmod(flat_cells, spec.width), axis=-1)
            img = rng.normal(0.0, spec.noise_sigma, (spec.height, spec.width, spec.depth))
            for j in range(spec.p_true):
                if not present[j]:
                    continue
                code = 0 if label is None else (label // v**j) % v
                h, w = cells[j]
                img[h, w] += gains[j] * variants[j, code]
            feats[x] = img
            truth_images.append(
                ImageTruth(
                    id=f"{split}_{x:05d}", split=split, cells=cells, present=present, label=label
                )
            )
        return feats

    train = make_split("train", spec.n_train)
    test = make_split("test", spec.n_test)
    truth = GroundTruth(directions=base, variant_directions=variants, images=truth_images)
    return SyntheticData(spec=spec, train=train, test=test, truth=truth)


@dataclass
class SyntheticPaths:
    train_manifest: Path
    test_manifest: Path
    ground_truth: Path
    data: SyntheticData


def _spec_doc(spec: SyntheticSpec) -> dict:
    doc = dict(spec.__dict__)
    doc["pattern_gain"] = [float(g) for g in spec.gains()]
    return doc


def generate_synthetic(spec: SyntheticSpec, out_dir) -> SyntheticPaths:
    """Write the dataset, per-split manifests and ground truth under ``out_dir``."""
    out = Path(out_dir)
    data = synthesize(spec)
    manifests = {}
    for split, feats in (("train", data.train), ("test", data.test)):
        items = []
        truths = data.truths(split)
        for x in range(feats.shape[0]):
            rel = f"{split}/{truths[x].id}.pcf"
            write_feature_file(out / rel, feats[x])
            items.append(
                ManifestItem(id=truths[x].id, path=rel, split=split, label=truths[x].label)
            )
        manifest_path = out / f"{split}_manifest.json"
        save_manifest(manifest_path, DatasetManifest(depth=spec.depth, items=items))
        manifests[split] = manifest_path

    truth_doc = {
        "version": 1,
        "spec": _spec_doc(spec),
        "directions": data.truth.directions.tolist(),
        "variant_directions": data.truth.variant_directions.tolist(),
        "images": [
            {
                "id": t.id,
                "split": t.split,
                "cells": t.cells.tolist(),
                "present": t.present.tolist(),
                "label": t.label,
            }
            for t in data.truth.images
        ],
    }
    truth_path = out / "ground_truth.json"
    atomic_write_text(truth_path, json.dumps(truth_doc) + "\n")
    return SyntheticPaths(
        train_manifest=manifests["train"],
        test_manifest=manifests["test"],
        ground_truth=truth_path,
        data=data,
    )
