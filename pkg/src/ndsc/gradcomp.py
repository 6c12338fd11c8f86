"""Gradient compression for two-worker synchronous training.

Classical compressors (top-k, random-k, QSGD, cyclic coordinate
sampling), per-round bit accounting, gradient-pair recording for codec
training, and the simulator itself: worker 1 sends its gradient raw,
worker 2's gradient is compressed, and the server updates with the
average of the raw and reconstructed gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import codec, numerics
from .errors import ConfigError, NumericalError
from .numerics import AdamState, ParamSet, Tensor, adam_step, backward
from .sources import ClassifyData, GradTask

COMPRESSOR_KINDS = ("topk", "randk", "qsgd", "coord",
                    "vq_separate", "vq_distributed", "vq_joint", "none")

_INV_SQRT2 = 1.0 / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# Toy classifier: dense input -> hidden (gelu) -> classes, cross-entropy
# ---------------------------------------------------------------------------

@dataclass
class ClassifierConfig:
    input_dim: int = 64
    hidden: int = 32
    n_classes: int = 10
    batch_size: int = 64
    lr: float = 1e-3


_CLS_PARAMS = ("w0", "b0", "w1", "b1")


def classifier_dim(cfg: ClassifierConfig) -> int:
    """Total parameter count (the gradient dimensionality d)."""
    return (cfg.input_dim * cfg.hidden + cfg.hidden
            + cfg.hidden * cfg.n_classes + cfg.n_classes)


def init_classifier(cfg: ClassifierConfig, seed) -> ParamSet:
    rng = np.random.default_rng(seed)
    ps = ParamSet()
    w, b = numerics.init_affine(rng, cfg.input_dim, cfg.hidden)
    ps.add("w0", w), ps.add("b0", b)
    w, b = numerics.init_affine(rng, cfg.hidden, cfg.n_classes)
    ps.add("w1", w), ps.add("b1", b)
    return ps


def _flat_grad(params: ParamSet) -> np.ndarray:
    return np.concatenate([params.grad(n).ravel() for n in _CLS_PARAMS])


def _set_flat_grad(params: ParamSet, flat: np.ndarray) -> None:
    offset = 0
    for name in _CLS_PARAMS:
        t = params[name]
        size = t.data.size
        t.grad = flat[offset:offset + size].reshape(t.data.shape).copy()
        offset += size


def batch_loss_grad(cfg: ClassifierConfig, params: ParamSet,
                    xb: np.ndarray, yb: np.ndarray):
    """Cross-entropy loss and flattened gradient on one batch."""
    h = numerics.gelu(numerics.affine(Tensor(xb), params["w0"], params["b0"]))
    logits = numerics.affine(h, params["w1"], params["b1"])
    loss = numerics.cross_entropy(logits, yb)
    params.zero_grad()
    backward(loss)
    return loss.item(), _flat_grad(params)


def _logits_np(params: ParamSet, x: np.ndarray) -> np.ndarray:
    h = x @ params["w0"].data + params["b0"].data
    h = h * 0.5 * (1.0 + special.erf(h * _INV_SQRT2))
    return h @ params["w1"].data + params["b1"].data


def accuracy(cfg: ClassifierConfig, params: ParamSet, data: ClassifyData) -> float:
    preds = np.argmax(_logits_np(params, data.x.astype(numerics.DTYPE)), axis=1)
    return float(np.mean(preds == data.labels))


def _fixed_shards(n: int):
    """Two fixed worker shards: a data property, independent of run seeds."""
    perm = np.random.default_rng([0x5A4D, n]).permutation(n)
    half = n // 2
    return perm[:half], perm[half:]


# ---------------------------------------------------------------------------
# Compressors
# ---------------------------------------------------------------------------

@dataclass
class SparseVector:
    """k (index, value) pairs of a d-dimensional vector; zero elsewhere."""

    d: int
    indices: np.ndarray
    values: np.ndarray

    def dense(self) -> np.ndarray:
        out = np.zeros(self.d, dtype=np.float64)
        out[self.indices] = self.values
        return out


@dataclass
class QsgdVector:
    """Stochastic s-level quantization: norm, signs, integer levels."""

    d: int
    s: int
    norm: float
    signs: np.ndarray
    levels: np.ndarray

    def dense(self) -> np.ndarray:
        return self.norm * self.signs * self.levels / self.s


def topk(g: np.ndarray, k: int) -> SparseVector:
    """Keep the k largest-magnitude coordinates; ties go to lower indices."""
    g = np.asarray(g, dtype=np.float64)
    d = g.size
    if not 1 <= k <= d:
        raise ConfigError(f"k must be in [1, {d}], got {k}")
    order = np.lexsort((np.arange(d), -np.abs(g)))
    idx = np.sort(order[:k])
    return SparseVector(d, idx, g[idx].copy())


def randk(g: np.ndarray, k: int, round_seed) -> SparseVector:
    """Transmit k uniformly chosen coordinates (no debiasing rescale)."""
    g = np.asarray(g, dtype=np.float64)
    d = g.size
    if not 1 <= k <= d:
        raise ConfigError(f"k must be in [1, {d}], got {k}")
    rng = np.random.default_rng(round_seed)
    idx = np.sort(rng.choice(d, size=k, replace=False))
    return SparseVector(d, idx, g[idx].copy())


def qsgd(g: np.ndarray, s: int, round_seed) -> QsgdVector:
    """Unbiased stochastic quantization to s levels scaled by ||g||_2."""
    g = np.asarray(g, dtype=np.float64)
    if s < 1:
        raise ConfigError(f"s must be >= 1, got {s}")
    norm = float(np.linalg.norm(g))
    d = g.size
    if norm == 0.0:
        return QsgdVector(d, s, 0.0, np.zeros(d), np.zeros(d))
    ratio = np.abs(g) * s / norm
    low = np.floor(ratio)
    p_up = ratio - low
    rng = np.random.default_rng(round_seed)
    levels = low + (rng.random(d) < p_up)
    return QsgdVector(d, s, norm, np.sign(g), levels)


def coord_sample(g: np.ndarray, k: int, t: int) -> SparseVector:
    """Cyclic deterministic batch of k coordinates at round t."""
    g = np.asarray(g, dtype=np.float64)
    d = g.size
    if not 1 <= k <= d:
        raise ConfigError(f"k must be in [1, {d}], got {k}")
    idx = np.sort((t * k + np.arange(k)) % d)
    return SparseVector(d, idx, g[idx].copy())


# ---------------------------------------------------------------------------
# Specs, bit accounting, and the compression dispatch used by the harness
# ---------------------------------------------------------------------------

@dataclass
class CompressorSpec:
    kind: str
    k: int | None = None
    s: int | None = None
    model: "codec.CodecModel | None" = None
    seed_stream: int = 0

    def validate(self, d: int) -> None:
        if self.kind not in COMPRESSOR_KINDS:
            raise ConfigError(
                f"unknown compressor kind {self.kind!r}; expected one of "
                f"{COMPRESSOR_KINDS}")
        if self.kind in ("topk", "randk", "coord"):
            if self.k is None or not 1 <= self.k <= d:
                raise ConfigError(f"{self.kind} needs k in [1, {d}], got {self.k}")
        if self.kind == "qsgd":
            if self.s is None or self.s < 1:
                raise ConfigError(f"qsgd needs s >= 1, got {self.s}")
        if self.kind.startswith("vq_"):
            if self.model is None:
                raise ConfigError(f"{self.kind} needs a codec model")
            if self.model.config.x_dim != d:
                raise ConfigError(
                    f"codec x_dim {self.model.config.x_dim} != gradient dim {d}")
            expected = self.kind.removeprefix("vq_")
            if self.model.config.variant != expected:
                raise ConfigError(
                    f"{self.kind} needs a {expected!r}-variant model, got "
                    f"{self.model.config.variant!r}")


def bits_cost(spec: CompressorSpec, d: int) -> int:
    """Bits sent by worker 2 per round under the declared accounting.

    Random and cyclic index sets are derivable from the shared seed and
    round counter, so only values are charged; top-k pays for explicit
    indices; QSGD sends the norm plus sign and level bits per coordinate.
    """
    if spec.kind == "topk":
        return spec.k * (math.ceil(math.log2(d)) + 32)
    if spec.kind in ("randk", "coord"):
        return spec.k * 32
    if spec.kind == "qsgd":
        return 32 + d * (1 + math.ceil(math.log2(spec.s + 1)))
    if spec.kind.startswith("vq_"):
        return codec.rate_bits(spec.model.config)
    if spec.kind == "none":
        return 32 * d
    raise ConfigError(f"unknown compressor kind {spec.kind!r}")


def compress_gradient(spec: CompressorSpec, g2: np.ndarray, t: int,
                      g1: np.ndarray | None):
    """Reconstruct worker 2's gradient after compression; returns (g_hat, bits)."""
    d = g2.size
    bits = bits_cost(spec, d)
    if spec.kind == "none":
        return g2.copy(), bits
    if spec.kind == "topk":
        return topk(g2, spec.k).dense(), bits
    if spec.kind == "randk":
        return randk(g2, spec.k, [spec.seed_stream, t, 0x7A2D]).dense(), bits
    if spec.kind == "coord":
        return coord_sample(g2, spec.k, t).dense(), bits
    if spec.kind == "qsgd":
        return qsgd(g2, spec.s, [spec.seed_stream, t, 0x95D]).dense(), bits
    model = spec.model
    if spec.kind == "vq_separate":
        idx = model.encode_batch(g2[None, :], t=np.array([t]))
        return model.decode_batch(idx, t=np.array([t]))[0], bits
    if spec.kind == "vq_distributed":
        idx = model.encode_batch(g2[None, :], t=np.array([t]))
        return model.decode_batch(idx, y=g1[None, :], t=np.array([t]))[0], bits
    if spec.kind == "vq_joint":
        idx = model.encode_batch(g2[None, :], y=g1[None, :], t=np.array([t]))
        return model.decode_batch(idx, y=g1[None, :], t=np.array([t]))[0], bits
    raise ConfigError(f"unknown compressor kind {spec.kind!r}")


# ---------------------------------------------------------------------------
# Gradient-pair recording (codec training data) and the training harness
# ---------------------------------------------------------------------------

@dataclass
class RoundLog:
    round: int
    bits: int
    train_loss: float
    test_accuracy: float
    seed: int


def record_gradient_pairs(cfg: ClassifierConfig, data: ClassifyData, steps: int,
                          seed, sample_rate: float = 1.0):
    """One two-worker run; returns [(t, g1, g2)] at the sampled steps.

    The classifier trains synchronously (server averages both worker
    gradients and applies Adam); gradients are recorded before the
    update at each retained step.
    """
    ss = seed if isinstance(seed, np.random.SeedSequence) else \
        np.random.SeedSequence([int(seed), 0x9EC0])
    init_s, b1_s, b2_s, keep_s = ss.spawn(4)
    params = init_classifier(cfg, init_s)
    adam = AdamState.for_params(params, lr=cfg.lr)
    shard1, shard2 = _fixed_shards(data.n)
    rng1, rng2 = np.random.default_rng(b1_s), np.random.default_rng(b2_s)
    keep_rng = np.random.default_rng(keep_s)

    x = data.x.astype(numerics.DTYPE)
    records = []
    for t in range(1, steps + 1):
        i1 = shard1[rng1.integers(0, shard1.size, size=cfg.batch_size)]
        i2 = shard2[rng2.integers(0, shard2.size, size=cfg.batch_size)]
        loss1, g1 = batch_loss_grad(cfg, params, x[i1], data.labels[i1])
        loss2, g2 = batch_loss_grad(cfg, params, x[i2], data.labels[i2])
        if not (np.isfinite(loss1) and np.isfinite(loss2)):
            raise NumericalError(f"divergent training at step {t}")
        if keep_rng.random() < sample_rate:
            records.append((t, g1.astype(np.float32), g2.astype(np.float32)))
        _set_flat_grad(params, 0.5 * (g1 + g2))
        adam_step(params, adam)
    return records


def run_distributed_training(classifier_cfg: ClassifierConfig, data: GradTask,
                             spec: CompressorSpec, rounds: int,
                             seed: int) -> list[RoundLog]:
    """Two-worker synchronous training with worker 2's gradient compressed.

    Worker 1 sends g1 raw; worker 2 sends compress(g2).  For the
    vq_distributed kind the server decodes with g1 as side information;
    vq_joint additionally feeds g1 to worker 2's encoder (a diagnostic
    upper bound only, not physically realizable).  The server steps Adam
    on the average of g1 and the reconstruction.
    """
    d = classifier_dim(classifier_cfg)
    spec.validate(d)
    ss = np.random.SeedSequence([int(seed), 0x57EB])
    init_s, b1_s, b2_s = ss.spawn(3)
    params = init_classifier(classifier_cfg, init_s)
    adam = AdamState.for_params(params, lr=classifier_cfg.lr)
    shard1, shard2 = _fixed_shards(data.train.n)
    rng1, rng2 = np.random.default_rng(b1_s), np.random.default_rng(b2_s)

    x = data.train.x.astype(numerics.DTYPE)
    labels = data.train.labels
    logs: list[RoundLog] = []
    for t in range(1, rounds + 1):
        i1 = shard1[rng1.integers(0, shard1.size, size=classifier_cfg.batch_size)]
        i2 = shard2[rng2.integers(0, shard2.size, size=classifier_cfg.batch_size)]
        loss1, g1 = batch_loss_grad(classifier_cfg, params, x[i1], labels[i1])
        loss2, g2 = batch_loss_grad(classifier_cfg, params, x[i2], labels[i2])
        if not (np.isfinite(loss1) and np.isfinite(loss2)):
            raise NumericalError(f"divergent training at round {t}")
        g2_hat, bits = compress_gradient(spec, g2, t, g1)
        _set_flat_grad(params, 0.5 * (g1 + g2_hat))
        adam_step(params, adam)
        acc = accuracy(classifier_cfg, params, data.test)
        logs.append(RoundLog(t, bits, 0.5 * (loss1 + loss2), acc, seed))
    return logs
