"""Paired-feature dataset ingestion, synthetic generation, and splits.

Binary formats (all little-endian):
  features  "UCHFEAT1" + n + dim (u32) + row-major float32
  labels    "UCHLAB1" + n + L (u32) + 64-bit words, bit set <=> label active
Files ending in .csv are read as headerless comma-separated numeric rows.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

FEATURE_MAGIC = b"UCHFEAT1"
LABEL_MAGIC = b"UCHLAB1"


class IngestionError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class PairedDataset:
    images: np.ndarray
    texts: np.ndarray
    labels: np.ndarray | None = None  # (n, L) bool
    query_mask: np.ndarray | None = None  # True = query, False = retrieval
    pruned: int = 0

    @property
    def n(self):
        return self.images.shape[0]

    def _mask(self, query):
        if self.query_mask is None:
            return np.zeros(self.n, dtype=bool) if query else np.ones(self.n, dtype=bool)
        return self.query_mask if query else ~self.query_mask

    def training_images(self):
        return self.images[self._mask(query=False)]

    def training_texts(self):
        return self.texts[self._mask(query=False)]

    def subset(self, query):
        m = self._mask(query)
        labels = self.labels[m] if self.labels is not None else None
        return PairedDataset(images=self.images[m], texts=self.texts[m], labels=labels)


@dataclass
class SyntheticSpec:
    clusters: int
    pairs_per_cluster: int
    d_img: int
    d_txt: int
    sigma: float = 0.1
    rho: float = 0.0
    seed: int = 0

    def validate(self):
        if self.clusters < 2:
            raise ValueError("clusters must be >= 2")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if not (0.0 <= self.rho <= 1.0):
            raise ValueError("rho must be in [0, 1]")
        if self.pairs_per_cluster < 1 or self.d_img < 1 or self.d_txt < 1:
            raise ValueError("counts and dims must be positive")


# -- file I/O -------------------------------------------------------------


def save_features(path, arr):
    arr = np.asarray(arr, dtype=np.float64)
    n, dim = arr.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<II", n, dim))
        f.write(arr.astype("<f4").tobytes())


def load_features(path):
    path = str(path)
    if path.endswith(".csv"):
        arr = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
        return arr
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != FEATURE_MAGIC:
            raise IngestionError(f"{path}: bad feature magic {magic!r}")
        n, dim = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(n * dim * 4), dtype="<f4")
        if data.size != n * dim:
            raise IngestionError(f"{path}: truncated feature file")
    return data.astype(np.float64).reshape(n, dim)


def _label_words(bits):
    n, l = bits.shape
    w = (l + 63) // 64
    padded = np.zeros((n, w * 64), dtype=np.uint8)
    padded[:, :l] = bits
    weights = np.uint64(1) << np.arange(64, dtype=np.uint64)
    return (padded.reshape(n, w, 64).astype(np.uint64) * weights).sum(
        axis=2, dtype=np.uint64
    )


def save_labels(path, labels):
    labels = np.asarray(labels).astype(bool)
    n, l = labels.shape
    with open(path, "wb") as f:
        f.write(LABEL_MAGIC)
        f.write(struct.pack("<II", n, l))
        f.write(_label_words(labels).astype("<u8").tobytes())


def load_labels(path):
    path = str(path)
    if path.endswith(".csv"):
        return np.loadtxt(path, delimiter=",", ndmin=2) > 0.5
    with open(path, "rb") as f:
        magic = f.read(7)
        if magic != LABEL_MAGIC:
            raise IngestionError(f"{path}: bad label magic {magic!r}")
        n, l = struct.unpack("<II", f.read(8))
        w = (l + 63) // 64
        data = np.frombuffer(f.read(n * w * 8), dtype="<u8")
        if data.size != n * w:
            raise IngestionError(f"{path}: truncated label file")
    words = data.reshape(n, w).astype(np.uint64)
    shifts = np.arange(64, dtype=np.uint64)
    bits = ((words[:, :, None] >> shifts) & np.uint64(1)).reshape(n, w * 64)
    return bits[:, :l].astype(bool)


def load_dataset(image_path, text_path, labels_path=None) -> PairedDataset:
    images = load_features(image_path)
    texts = load_features(text_path)
    if images.shape[0] != texts.shape[0]:
        raise IngestionError(
            f"item count mismatch: {image_path} has {images.shape[0]}, "
            f"{text_path} has {texts.shape[0]}"
        )
    for name, arr in (("image", images), ("text", texts)):
        bad = ~np.isfinite(arr)
        if bad.any():
            row = int(np.argwhere(bad)[0][0])
            raise DataError(f"non-finite {name} feature at row {row}")
    labels = None
    pruned = 0
    if labels_path is not None:
        labels = load_labels(labels_path)
        if labels.shape[0] != images.shape[0]:
            raise IngestionError(
                f"item count mismatch: {image_path} has {images.shape[0]}, "
                f"{labels_path} has {labels.shape[0]}"
            )
        keep = labels.any(axis=1)
        pruned = int((~keep).sum())
        if pruned:
            images, texts, labels = images[keep], texts[keep], labels[keep]
    return PairedDataset(images=images, texts=texts, labels=labels, pruned=pruned)


# -- synthetic benchmark data --------------------------------------------


def generate_synthetic(spec: SyntheticSpec) -> PairedDataset:
    """Clustered paired features: per-cluster anchors plus Gaussian noise."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    def unit_anchors(count, dim):
        a = rng.normal(size=(count, dim))
        return a / np.linalg.norm(a, axis=1, keepdims=True)

    img_anchors = unit_anchors(spec.clusters, spec.d_img)
    txt_anchors = unit_anchors(spec.clusters, spec.d_txt)
    n = spec.clusters * spec.pairs_per_cluster
    cluster_ids = np.repeat(np.arange(spec.clusters), spec.pairs_per_cluster)
    images = img_anchors[cluster_ids] + spec.sigma * rng.normal(size=(n, spec.d_img))
    text_clusters = cluster_ids.copy()
    if spec.rho > 0.0:
        flip = rng.random(n) < spec.rho
        offsets = rng.integers(1, spec.clusters, size=n)
        text_clusters[flip] = (cluster_ids[flip] + offsets[flip]) % spec.clusters
    texts = txt_anchors[text_clusters] + spec.sigma * rng.normal(size=(n, spec.d_txt))
    labels = np.zeros((n, spec.clusters), dtype=bool)
    labels[np.arange(n), cluster_ids] = True
    return PairedDataset(images=images, texts=texts, labels=labels)


def split(dataset: PairedDataset, query_count, seed) -> PairedDataset:
    """Tag a uniform random query subset; the rest is the retrieval set."""
    if query_count >= dataset.n:
        raise ValueError(f"query count {query_count} >= dataset size {dataset.n}")
    perm = np.random.default_rng(seed).permutation(dataset.n)
    mask = np.zeros(dataset.n, dtype=bool)
    mask[perm[:query_count]] = True
    dataset.query_mask = mask
    return dataset
