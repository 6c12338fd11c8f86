"""Synthetic correlated-source generators and dataset files.

Every generator is a pure function of its parameters and an explicit
seed; regenerating with the same seed reproduces the dataset bitwise.
Also hosts the classification-task data used by the gradient
experiments (a built-in Gaussian-blobs task plus optional IDX digit
ingestion).
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DataError

DATASET_MAGIC = b"NDSD"
DATASET_VERSION = 1

# Default data seed for the built-in gradient-experiment task.
DEFAULT_GRAD_DATA_SEED = 1009


@dataclass
class PairDataset:
    """i.i.d. samples (x, y) from a correlated source.

    x: (n, x_dim) float32, y: (n, si_dim) float32, aux: optional
    (n, aux_dim) float32 per-sample metadata (e.g. the time step for
    gradient pairs).
    """

    source: str
    x: np.ndarray
    y: np.ndarray
    aux: np.ndarray | None
    seed: int

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        self.y = np.ascontiguousarray(self.y, dtype=np.float32)
        if self.aux is not None:
            self.aux = np.ascontiguousarray(self.aux, dtype=np.float32)
            if self.aux.shape[0] != self.x.shape[0]:
                raise DataError(
                    f"aux rows {self.aux.shape[0]} != sample count {self.x.shape[0]}")
        if self.x.shape[0] != self.y.shape[0]:
            raise DataError(
                f"x rows {self.x.shape[0]} != y rows {self.y.shape[0]}")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def x_dim(self):
        return self.x.shape[1]

    @property
    def si_dim(self):
        return self.y.shape[1]

    def subset(self, idx) -> "PairDataset":
        return PairDataset(self.source, self.x[idx], self.y[idx],
                           None if self.aux is None else self.aux[idx], self.seed)


def split_pair_dataset(ds: PairDataset, fractions=(0.8, 0.1, 0.1), seed=0):
    """Deterministic shuffled split into len(fractions) subsets."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng([seed, 0x5DA7])
    perm = rng.permutation(ds.n)
    bounds = np.cumsum([int(round(f * ds.n)) for f in fractions[:-1]])
    parts = np.split(perm, bounds)
    return tuple(ds.subset(p) for p in parts)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_gaussian(n: int, sigma_n: float, seed: int) -> PairDataset:
    """Scalar jointly Gaussian pair: x ~ N(0,1), y = x + N(0, sigma_n^2)."""
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    if sigma_n < 0:
        raise ValueError(f"noise std must be >= 0, got {sigma_n}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 1))
    y = x + sigma_n * rng.standard_normal((n, 1))
    return PairDataset("gaussian", x, y, None, seed)


def gen_hamming(n: int, seed: int) -> PairDataset:
    """Uniform 3-bit strings differing in at most one position.

    y applies one of four equiprobable perturbations to x: identity or a
    flip of exactly one of the three bits.  x and y are exposed as three
    {0,1} reals each for learned codecs; aux keeps the exact strings as
    integer codes (x_int, y_int) in [0, 8).
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    x_int = rng.integers(0, 8, size=n)
    flip = rng.integers(0, 4, size=n)  # 0 = identity, j = flip bit j-1 (MSB first)
    mask = np.where(flip == 0, 0, 1 << (3 - np.maximum(flip, 1)))
    y_int = x_int ^ mask
    x_bits = ((x_int[:, None] >> np.array([2, 1, 0])) & 1).astype(np.float32)
    y_bits = ((y_int[:, None] >> np.array([2, 1, 0])) & 1).astype(np.float32)
    aux = np.stack([x_int, y_int], axis=1).astype(np.float32)
    return PairDataset("hamming", x_bits, y_bits, aux, seed)


_FIELD_WAVES = 4
_FIELD_NOISE = 0.05


def gen_split_field(n: int, grid: int, seed: int) -> PairDataset:
    """Smooth random fields split into top (input) and bottom (SI) halves.

    Each sample is a g x g field: a sum of four random sinusoids with
    wavelengths in [g/2, 4g] (random orientations and phases, amplitudes
    growing with wavelength) plus N(0, 0.05^2) pixel noise, mapped into
    [0, 1] by the sample's own amplitude span.  The long-wavelength
    components give the halves shared structure without spatial
    alignment.
    """
    if grid % 2 != 0 or grid < 8:
        raise ValueError(f"grid must be even and >= 8, got {grid}")
    if n <= 0:
        raise ValueError(f"sample count must be positive, got {n}")
    rng = np.random.default_rng(seed)
    g = grid
    wavelength = g * rng.uniform(0.5, 4.0, size=(n, _FIELD_WAVES))
    theta = rng.uniform(0.0, np.pi, size=(n, _FIELD_WAVES))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=(n, _FIELD_WAVES))
    amp = rng.uniform(0.5, 1.0, size=(n, _FIELD_WAVES)) * (wavelength / g)

    rows = np.arange(g, dtype=np.float64)
    cols = np.arange(g, dtype=np.float64)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    proj = (np.cos(theta)[..., None, None] * rr
            + np.sin(theta)[..., None, None] * cc)  # (n, W, g, g)
    waves = amp[..., None, None] * np.sin(
        2.0 * np.pi * proj / wavelength[..., None, None] + phase[..., None, None])
    field = waves.sum(axis=1)
    field += rng.normal(0.0, _FIELD_NOISE, size=field.shape)
    # the amplitude span bounds |field| outside a ~6-sigma noise tail, so
    # this affine map lands in [0, 1]; clip guards the tail
    span = amp.sum(axis=1)[:, None, None] + 6.0 * _FIELD_NOISE
    field = np.clip(0.5 * (1.0 + field / span), 0.0, 1.0)

    half = g // 2
    x = field[:, :half, :].reshape(n, half * g)
    y = field[:, half:, :].reshape(n, half * g)
    return PairDataset("split_field", x, y, None, seed)


def gen_gradient_dataset(classifier_cfg=None, runs: int = 4, steps: int = 200,
                         sample_rate: float = 0.5, seed: int = 0,
                         task=None) -> PairDataset:
    """Gradient pairs (t, g1, g2) from independent two-worker training runs.

    Each run re-initializes the classifier with a fresh seed, shards its
    training data into two fixed halves, and records both workers'
    gradients at a random subset of the synchronous steps.  x = g2
    (the compressed worker), y = g1 (side information), aux = t.
    """
    from . import gradcomp  # deferred: gradcomp depends on codec/sources

    if runs < 2:
        raise ValueError(f"need at least 2 independent runs, got {runs}")
    if not 0.0 < sample_rate <= 1.0:
        raise ValueError(f"sample_rate must be in (0, 1], got {sample_rate}")
    cfg = classifier_cfg or gradcomp.ClassifierConfig()
    if task is None:
        task = default_grad_task(DEFAULT_GRAD_DATA_SEED).pre
    ss = np.random.SeedSequence([seed, 0x6AD])
    run_seeds = ss.spawn(runs)
    ts, g1s, g2s = [], [], []
    for run_seed in run_seeds:
        records = gradcomp.record_gradient_pairs(
            cfg, task, steps, seed=run_seed, sample_rate=sample_rate)
        for t, g1, g2 in records:
            ts.append(t)
            g1s.append(g1)
            g2s.append(g2)
    x = np.asarray(g2s, dtype=np.float32)
    y = np.asarray(g1s, dtype=np.float32)
    aux = np.asarray(ts, dtype=np.float32)[:, None]
    return PairDataset("gradients", x, y, aux, seed)


# ---------------------------------------------------------------------------
# Dataset file format: magic "NDSD", version u16, length-prefixed source
# tag, seed u64, n u64, x_dim u32, si_dim u32, aux_dim u32, then
# row-major little-endian float32 for x, y, aux.
# ---------------------------------------------------------------------------

def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(
            f"truncated dataset file while reading {what} at offset "
            f"{fh.tell() - len(buf)}: wanted {n} bytes, got {len(buf)}")
    return buf


def dataset_write(ds: PairDataset, path) -> None:
    """Atomic write (temp file + rename) of the binary dataset format."""
    path = os.fspath(path)
    aux_dim = 0 if ds.aux is None else ds.aux.shape[1]
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(DATASET_MAGIC)
            fh.write(struct.pack("<H", DATASET_VERSION))
            tag = ds.source.encode("utf-8")
            fh.write(struct.pack("<H", len(tag)))
            fh.write(tag)
            fh.write(struct.pack("<QQIII", ds.seed, ds.n, ds.x_dim, ds.si_dim, aux_dim))
            fh.write(ds.x.astype("<f4").tobytes())
            fh.write(ds.y.astype("<f4").tobytes())
            if ds.aux is not None:
                fh.write(ds.aux.astype("<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_read(path) -> PairDataset:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != DATASET_MAGIC:
            raise DataError(
                f"bad dataset magic {magic!r}: expected {DATASET_MAGIC!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version > DATASET_VERSION:
            raise DataError(
                f"dataset format version {version} is newer than supported "
                f"version {DATASET_VERSION}")
        (tag_len,) = struct.unpack("<H", _read_exact(fh, 2, "source tag length"))
        tag = _read_exact(fh, tag_len, "source tag").decode("utf-8")
        seed, n, x_dim, si_dim, aux_dim = struct.unpack(
            "<QQIII", _read_exact(fh, 8 + 8 + 12, "header"))
        x = np.frombuffer(_read_exact(fh, 4 * n * x_dim, "x block"),
                          dtype="<f4").reshape(n, x_dim)
        y = np.frombuffer(_read_exact(fh, 4 * n * si_dim, "y block"),
                          dtype="<f4").reshape(n, si_dim)
        aux = None
        if aux_dim > 0:
            aux = np.frombuffer(_read_exact(fh, 4 * n * aux_dim, "aux block"),
                                dtype="<f4").reshape(n, aux_dim)
        trailing = fh.read(1)
        if trailing:
            raise DataError(
                f"unexpected trailing bytes at offset {fh.tell() - 1}")
    return PairDataset(tag, x.copy(), y.copy(),
                       None if aux is None else aux.copy(), seed)


# ---------------------------------------------------------------------------
# Classification-task data for the gradient experiments
# ---------------------------------------------------------------------------

@dataclass
class ClassifyData:
    """Feature matrix plus integer labels for the toy classifier."""

    x: np.ndarray      # (n, dim) float32
    labels: np.ndarray  # (n,) int64

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.x.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"feature rows {self.x.shape[0]} != labels {self.labels.shape[0]}")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def subset(self, idx) -> "ClassifyData":
        return ClassifyData(self.x[idx], self.labels[idx])


@dataclass
class GradTask:
    """Disjoint data shards for the gradient experiment pipeline.

    `pre` feeds gradient-pair generation (codec training data only);
    `train` drives the compressed-training harness; `test` measures
    accuracy.  pre and train never overlap.
    """

    pre: ClassifyData
    train: ClassifyData
    test: ClassifyData


def make_blobs_task(n_train: int, n_test: int, seed: int, n_classes: int = 10,
                    dim: int = 64, center_scale: float = 0.3,
                    noise: float = 1.0):
    """Synthetic Gaussian-blobs classification data (shared class centers)."""
    rng = np.random.default_rng([seed, 0xB10B])
    centers = rng.normal(0.0, center_scale, size=(n_classes, dim))

    def draw(m):
        labels = rng.integers(0, n_classes, size=m)
        x = centers[labels] + noise * rng.standard_normal((m, dim))
        return ClassifyData(x, labels)

    return draw(n_train), draw(n_test)


def default_grad_task(seed: int = DEFAULT_GRAD_DATA_SEED, n_pre: int = 2048,
                      n_train: int = 2048, n_test: int = 1024) -> GradTask:
    """Built-in blobs task split into disjoint pre/train halves plus test."""
    train_all, test = make_blobs_task(n_pre + n_train, n_test, seed)
    pre = train_all.subset(np.arange(n_pre))
    train = train_all.subset(np.arange(n_pre, n_pre + n_train))
    return GradTask(pre, train, test)


# ---------------------------------------------------------------------------
# IDX ingestion (the standard container for digit images)
# ---------------------------------------------------------------------------

_IDX_IMAGES_MAGIC = 0x00000803
_IDX_LABELS_MAGIC = 0x00000801


def _pool_axis(a: np.ndarray, out_size: int, axis: int) -> np.ndarray:
    """Average-pool one axis down to out_size near-equal chunks."""
    n = a.shape[axis]
    edges = np.linspace(0, n, out_size + 1).round().astype(int)
    sums = np.add.reduceat(a, edges[:-1], axis=axis)
    counts = np.diff(edges)
    shape = [1] * a.ndim
    shape[axis] = out_size
    return sums / counts.reshape(shape)


def idx_ingest(images_path, labels_path, downsample_to: int = 8) -> ClassifyData:
    """Parse IDX image/label files into a pooled classification dataset.

    Pixels are scaled to [0, 1] and average-pooled to a
    downsample_to x downsample_to grid, then flattened.
    """
    with open(images_path, "rb") as fh:
        header = _read_exact(fh, 16, "image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != _IDX_IMAGES_MAGIC:
            raise DataError(
                f"bad image magic 0x{magic:08x}: expected 0x{_IDX_IMAGES_MAGIC:08x}")
        raw = _read_exact(fh, count * rows * cols, "image pixels")
    images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)

    with open(labels_path, "rb") as fh:
        header = _read_exact(fh, 8, "label header")
        magic, label_count = struct.unpack(">II", header)
        if magic != _IDX_LABELS_MAGIC:
            raise DataError(
                f"bad label magic 0x{magic:08x}: expected 0x{_IDX_LABELS_MAGIC:08x}")
        labels = np.frombuffer(_read_exact(fh, label_count, "labels"),
                               dtype=np.uint8)
    if label_count != count:
        raise DataError(
            f"image count {count} != label count {label_count}")
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DataError(
            f"labels outside [0, 9]: found {int(labels.max())}")

    pooled = images.astype(np.float64) / 255.0
    pooled = _pool_axis(pooled, downsample_to, axis=1)
    pooled = _pool_axis(pooled, downsample_to, axis=2)
    x = pooled.reshape(count, downsample_to * downsample_to)
    return ClassifyData(x, labels.astype(np.int64))
