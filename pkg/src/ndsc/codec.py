"""Conditional vector-quantized compressor.

Encoder -> fixed-length discrete message -> decoder that may consume
correlated side information, in four variants:

* distributed: side information enters the decoder only,
* joint: both encoder and decoder see the side information,
* separate: neither side uses it (the SI feature slot is zeroed),
* uncorrelated_si: architecture of `distributed`, but trained against
  side information shuffled across samples.

Also provides the uniform-quantization ablation (same networks, no
codebook, post-hoc uniform scalar quantization of the latent) and
exact rate accounting: the rate is always latent_len * codebook_bits.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import numerics, vq
from .errors import ConfigError, DataError, NumericalError
from .numerics import AdamState, ParamSet, Tensor, adam_step, backward
from .sources import PairDataset

log = logging.getLogger(__name__)

MODEL_MAGIC = b"NDSC"
MODEL_VERSION = 1

VARIANTS = ("distributed", "joint", "separate", "uncorrelated_si")

# number of scalar features in the time embedding (t/T, sin, cos)
TIME_FEATURES = 3


@dataclass
class CodecConfig:
    """Architecture and rate parameters of one codec."""

    variant: str
    x_dim: int
    si_dim: int
    latent_len: int
    code_dim: int
    codebook_bits: int
    hidden: tuple = (64, 32)  # (encoder/decoder width, SI-net width)
    time_conditioned: bool = False
    time_horizon: int | None = None
    output_sigmoid: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("x_dim", "si_dim", "latent_len", "code_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 1 <= self.codebook_bits <= 16:
            raise ConfigError(
                f"codebook_bits must be in [1, 16], got {self.codebook_bits}")
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            raise ConfigError(
                f"hidden must be two positive widths (net, SI net), got {self.hidden}")
        if self.time_conditioned and (self.time_horizon is None or self.time_horizon < 1):
            raise ConfigError(
                "time_conditioned models need a positive time_horizon")

    @property
    def codebook_size(self) -> int:
        return 1 << self.codebook_bits

    @property
    def encoder_in(self) -> int:
        extra = self.hidden[1] if self.variant == "joint" else 0
        return self.x_dim + extra + (TIME_FEATURES if self.time_conditioned else 0)

    @property
    def decoder_in(self) -> int:
        return (self.latent_len * self.code_dim + self.hidden[1]
                + (TIME_FEATURES if self.time_conditioned else 0))

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "x_dim": self.x_dim,
            "si_dim": self.si_dim,
            "latent_len": self.latent_len,
            "code_dim": self.code_dim,
            "codebook_bits": self.codebook_bits,
            "hidden": list(self.hidden),
            "time_conditioned": self.time_conditioned,
            "time_horizon": self.time_horizon,
            "output_sigmoid": self.output_sigmoid,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        known = {"variant", "x_dim", "si_dim", "latent_len", "code_dim",
                 "codebook_bits", "hidden", "time_conditioned", "time_horizon",
                 "output_sigmoid"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown codec config keys: {sorted(unknown)}")
        missing = {"variant", "x_dim", "si_dim", "latent_len", "code_dim",
                   "codebook_bits"} - set(d)
        if missing:
            raise ConfigError(f"missing codec config keys: {sorted(missing)}")
        kwargs = dict(d)
        if "hidden" in kwargs:
            kwargs["hidden"] = tuple(kwargs["hidden"])
        return cls(**kwargs)


def rate_bits(config: CodecConfig) -> int:
    """Exact message size in bits: latent positions times bits per index."""
    return config.latent_len * config.codebook_bits


# ---------------------------------------------------------------------------
# Message: L indices of b bits each, packed big-endian (MSB first) and
# zero-padded to a byte boundary.
# ---------------------------------------------------------------------------

@dataclass
class Message:
    indices: np.ndarray
    codebook_bits: int

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 1:
            raise ValueError(f"message indices must be 1-d, got {self.indices.shape}")
        limit = 1 << self.codebook_bits
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= limit):
            raise ValueError(
                f"message index out of range [0, {limit}): "
                f"min={self.indices.min()}, max={self.indices.max()}")

    def __len__(self):
        return self.indices.size

    def to_bytes(self) -> bytes:
        return pack_indices(self.indices, self.codebook_bits)

    @classmethod
    def from_bytes(cls, data: bytes, latent_len: int, codebook_bits: int) -> "Message":
        return cls(unpack_indices(data, latent_len, codebook_bits), codebook_bits)


def pack_indices(indices: np.ndarray, bits: int) -> bytes:
    indices = np.asarray(indices, dtype=np.int64)
    limit = 1 << bits
    if indices.size and (indices.min() < 0 or indices.max() >= limit):
        raise ValueError(f"index out of range [0, {limit})")
    shifts = np.arange(bits - 1, -1, -1)
    bitstream = ((indices[:, None] >> shifts) & 1).astype(np.uint8).ravel()
    return np.packbits(bitstream).tobytes()


def unpack_indices(data: bytes, count: int, bits: int) -> np.ndarray:
    total_bits = count * bits
    expected = (total_bits + 7) // 8
    if len(data) != expected:
        raise DataError(
            f"message length {len(data)} bytes does not match {count} indices "
            f"of {bits} bits (expected {expected} bytes)")
    bitstream = np.unpackbits(np.frombuffer(data, dtype=np.uint8))
    if np.any(bitstream[total_bits:]):
        raise DataError("nonzero padding bits in message")
    shifts = np.arange(bits - 1, -1, -1)
    return (bitstream[:total_bits].reshape(count, bits).astype(np.int64)
            << shifts).sum(axis=1)


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------

_PARAM_NAMES = ("enc.w0", "enc.b0", "enc.w1", "enc.b1",
                "si.w0", "si.b0",
                "dec.w0", "dec.b0", "dec.w1", "dec.b1",
                "codebook")


class CodecModel:
    """A trained (or freshly initialized) compressor."""

    def __init__(self, config: CodecConfig, params: ParamSet):
        self.config = config
        self.params = params
        for name in _PARAM_NAMES:
            if name not in params:
                raise ConfigError(f"model missing parameter {name!r}")

    @classmethod
    def init(cls, config: CodecConfig, seed) -> "CodecModel":
        rng = np.random.default_rng(seed)
        h, h_si = config.hidden
        ld = config.latent_len * config.code_dim
        ps = ParamSet()
        w, b = numerics.init_affine(rng, config.encoder_in, h)
        ps.add("enc.w0", w), ps.add("enc.b0", b)
        w, b = numerics.init_affine(rng, h, ld)
        ps.add("enc.w1", w), ps.add("enc.b1", b)
        w, b = numerics.init_affine(rng, config.si_dim, h_si)
        ps.add("si.w0", w), ps.add("si.b0", b)
        w, b = numerics.init_affine(rng, config.decoder_in, h)
        ps.add("dec.w0", w), ps.add("dec.b0", b)
        w, b = numerics.init_affine(rng, h, config.x_dim)
        ps.add("dec.w1", w), ps.add("dec.b1", b)
        bound = 1.0 / math.sqrt(config.code_dim)
        ps.add("codebook", rng.uniform(-bound, bound,
                                       size=(config.codebook_size, config.code_dim)))
        return cls(config, ps)

    @property
    def codebook(self) -> vq.Codebook:
        return vq.Codebook(self.params["codebook"])

    # -- forward pieces -----------------------------------------------------

    def _time_feat(self, t: np.ndarray) -> np.ndarray:
        horizon = float(self.config.time_horizon)
        frac = np.asarray(t, dtype=numerics.DTYPE).reshape(-1, 1) / horizon
        return np.concatenate(
            [frac, np.sin(2 * np.pi * frac), np.cos(2 * np.pi * frac)], axis=1)

    def _si_feat(self, y2d: np.ndarray) -> Tensor:
        yt = Tensor(y2d)
        return numerics.gelu(numerics.affine(yt, self.params["si.w0"],
                                             self.params["si.b0"]))

    def _encoder(self, x2d: np.ndarray, y2d: np.ndarray | None,
                 t: np.ndarray | None) -> Tensor:
        parts = [Tensor(x2d)]
        if self.config.variant == "joint":
            parts.append(self._si_feat(y2d))
        if self.config.time_conditioned:
            parts.append(Tensor(self._time_feat(t)))
        xin = parts[0] if len(parts) == 1 else numerics.concat(parts, axis=1)
        h = numerics.gelu(numerics.affine(xin, self.params["enc.w0"],
                                          self.params["enc.b0"]))
        z = numerics.affine(h, self.params["enc.w1"], self.params["enc.b1"])
        n = x2d.shape[0]
        return numerics.reshape(z, (n, self.config.latent_len, self.config.code_dim))

    def _decoder(self, codes_flat: Tensor, y2d: np.ndarray | None,
                 t: np.ndarray | None) -> Tensor:
        n = codes_flat.data.shape[0]
        if self.config.variant == "separate" or y2d is None:
            si = Tensor(np.zeros((n, self.config.hidden[1])))
        else:
            si = self._si_feat(y2d)
        parts = [codes_flat, si]
        if self.config.time_conditioned:
            parts.append(Tensor(self._time_feat(t)))
        h = numerics.gelu(numerics.affine(numerics.concat(parts, axis=1),
                                          self.params["dec.w0"], self.params["dec.b0"]))
        out = numerics.affine(h, self.params["dec.w1"], self.params["dec.b1"])
        if self.config.output_sigmoid:
            out = numerics.sigmoid(out)
        return out

    # -- arity validation ---------------------------------------------------

    def _check_encode_args(self, y, t):
        if self.config.variant == "joint" and y is None:
            raise ConfigError("joint encoder requires side information")
        if self.config.variant != "joint" and y is not None:
            raise ConfigError(
                f"{self.config.variant} encoder must not receive side information")
        self._check_time(t)

    def _check_decode_args(self, y, t):
        needs_si = self.config.variant in ("distributed", "joint", "uncorrelated_si")
        if needs_si and y is None:
            raise ConfigError(
                f"{self.config.variant} decoder requires side information")
        self._check_time(t)

    def _check_time(self, t):
        if self.config.time_conditioned and t is None:
            raise ConfigError("time-conditioned codec requires the time step t")
        if not self.config.time_conditioned and t is not None:
            raise ConfigError("codec is not time-conditioned; t must be omitted")

    @staticmethod
    def _as_batch(v, dim: int, what: str) -> np.ndarray:
        arr = np.asarray(v, dtype=numerics.DTYPE)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != dim:
            raise ConfigError(f"{what} must have dimension {dim}, got shape {arr.shape}")
        return arr

    # -- public batched paths ----------------------------------------------

    def encode_batch(self, x, y=None, t=None) -> np.ndarray:
        self._check_encode_args(y, t)
        x2d = self._as_batch(x, self.config.x_dim, "input")
        y2d = None if y is None else self._as_batch(y, self.config.si_dim, "side information")
        z_e = self._encoder(x2d, y2d, t)
        flat = z_e.data.reshape(-1, self.config.code_dim)
        idx = vq.assign_indices(flat, self.params["codebook"].data)
        return idx.reshape(x2d.shape[0], self.config.latent_len)

    def decode_batch(self, indices, y=None, t=None) -> np.ndarray:
        self._check_decode_args(y, t)
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim == 1:
            indices = indices[None, :]
        if indices.shape[1] != self.config.latent_len:
            raise ConfigError(
                f"message length {indices.shape[1]} != latent_len {self.config.latent_len}")
        if indices.size and (indices.min() < 0 or indices.max() >= self.config.codebook_size):
            raise DataError(
                f"message index out of range [0, {self.config.codebook_size})")
        y2d = None if y is None else self._as_batch(y, self.config.si_dim, "side information")
        codes = self.params["codebook"].data[indices]
        codes_flat = Tensor(codes.reshape(indices.shape[0], -1))
        return self._decoder(codes_flat, y2d, t).data

    def reconstruct(self, x, y=None, t=None) -> np.ndarray:
        """decode(encode(x)) with each side receiving only what its variant allows."""
        enc_y = y if self.config.variant == "joint" else None
        dec_y = None if self.config.variant == "separate" else y
        idx = self.encode_batch(x, enc_y, t)
        return self.decode_batch(idx, dec_y, t)

    # -- single-sample API ---------------------------------------------------

    def encode(self, x, y=None, t=None) -> Message:
        idx = self.encode_batch(
            np.asarray(x, dtype=numerics.DTYPE)[None, :],
            None if y is None else np.asarray(y, dtype=numerics.DTYPE)[None, :],
            None if t is None else np.asarray([t]))
        return Message(idx[0], self.config.codebook_bits)

    def decode(self, message: Message, y=None, t=None) -> np.ndarray:
        if len(message) != self.config.latent_len:
            raise ConfigError(
                f"message length {len(message)} != latent_len {self.config.latent_len}")
        out = self.decode_batch(
            message.indices[None, :],
            None if y is None else np.asarray(y, dtype=numerics.DTYPE)[None, :],
            None if t is None else np.asarray([t]))
        return out[0]

    # -- serialization -------------------------------------------------------

    def save(self, path) -> None:
        path = os.fspath(path)
        blob = json.dumps(self.config.to_dict(), sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(MODEL_MAGIC)
                fh.write(struct.pack("<H", MODEL_VERSION))
                fh.write(struct.pack("<I", len(blob)))
                fh.write(blob)
                fh.write(struct.pack("<I", len(_PARAM_NAMES)))
                for name in _PARAM_NAMES:
                    numerics.write_tensor_record(fh, name, self.params[name].data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "CodecModel":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MODEL_MAGIC:
                raise DataError(f"bad model magic {magic!r}: expected {MODEL_MAGIC!r}")
            (version,) = struct.unpack("<H", fh.read(2))
            if version > MODEL_VERSION:
                raise DataError(
                    f"model format version {version} is newer than supported "
                    f"version {MODEL_VERSION}")
            (blob_len,) = struct.unpack("<I", fh.read(4))
            config = CodecConfig.from_dict(json.loads(fh.read(blob_len).decode("utf-8")))
            (n_records,) = struct.unpack("<I", fh.read(4))
            values = {}
            for _ in range(n_records):
                name, data = numerics.read_tensor_record(fh)
                values[name] = data
        model = cls.init(config, seed=0)
        missing = set(_PARAM_NAMES) - set(values)
        if missing:
            raise DataError(f"model file missing tensors: {sorted(missing)}")
        model.params.load_values(values)
        if model.params["codebook"].data.shape != (config.codebook_size, config.code_dim):
            raise DataError("codebook shape inconsistent with config")
        return model


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    valid_mse: float


def _dataset_arrays(config: CodecConfig, ds: PairDataset):
    if ds.n == 0:
        raise DataError("dataset is empty")
    if ds.x_dim != config.x_dim or ds.si_dim != config.si_dim:
        raise DataError(
            f"dataset dims ({ds.x_dim}, {ds.si_dim}) do not match config "
            f"({config.x_dim}, {config.si_dim})")
    t = None
    if config.time_conditioned:
        if ds.aux is None:
            raise DataError("time-conditioned codec needs aux time steps")
        t = ds.aux[:, 0].astype(numerics.DTYPE)
    return (ds.x.astype(numerics.DTYPE), ds.y.astype(numerics.DTYPE), t)


def dataset_mse(model, ds: PairDataset, batch_size: int = 512,
                si_override: np.ndarray | None = None) -> float:
    """Mean squared reconstruction error over a dataset."""
    x, y, t = _dataset_arrays(model.config, ds)
    if si_override is not None:
        y = si_override.astype(numerics.DTYPE)
    total = 0.0
    for lo in range(0, ds.n, batch_size):
        hi = min(lo + batch_size, ds.n)
        xhat = model.reconstruct(x[lo:hi], y[lo:hi],
                                 None if t is None else t[lo:hi])
        total += float(np.sum((xhat - x[lo:hi]) ** 2))
    return total / x.size


def train(config: CodecConfig, train_set: PairDataset, valid_set: PairDataset,
          epochs: int, seed: int, *, lr: float = 1e-3, batch_size: int = 64,
          patience: int = 20, commitment_beta: float = 0.25):
    """Train a codec; returns (best-validation model, per-epoch loss log).

    The returned model is the checkpoint with the lowest validation MSE
    seen during training; training stops early once validation MSE has
    not improved for `patience` epochs.  Fully deterministic given the
    seed.
    """
    x_tr, y_tr, t_tr = _dataset_arrays(config, train_set)
    _dataset_arrays(config, valid_set)  # dim check

    ss = np.random.SeedSequence([seed, 0xC0DEC])
    init_s, shuffle_s, cb_s, dead_s, uncorr_s = ss.spawn(5)
    model = CodecModel.init(config, init_s)
    shuffle_rng = np.random.default_rng(shuffle_s)
    dead_rng = np.random.default_rng(dead_s)
    uncorr_rng = np.random.default_rng(uncorr_s)

    n = train_set.n
    first_perm = shuffle_rng.permutation(n)

    # data-driven codebook init from the first training batch
    first = first_perm[:batch_size]
    y_first = y_tr[first] if config.variant == "joint" else None
    z0 = model._encoder(x_tr[first], y_first,
                        None if t_tr is None else t_tr[first])
    model.params["codebook"].data = vq.init_codebook_from_outputs(
        z0.data.reshape(-1, config.code_dim), config.codebook_size,
        np.random.default_rng(cb_s))

    # for uncorrelated_si the validation pairing is shuffled once, so the
    # metric matches the training objective and stays comparable across epochs
    valid_si = None
    if config.variant == "uncorrelated_si":
        valid_si = valid_set.y[uncorr_rng.permutation(valid_set.n)]

    adam = AdamState.for_params(model.params, lr=lr)
    logrows: list[EpochLog] = []
    best_mse = math.inf
    best_values = model.params.copy_values()
    stale = 0

    perm = first_perm
    for epoch in range(epochs):
        epoch_loss = 0.0
        batches = 0
        counts = np.zeros(config.codebook_size, dtype=np.int64)
        last_z = None
        for lo in range(0, n, batch_size):
            idx = perm[lo:lo + batch_size]
            xb = x_tr[idx]
            yb = y_tr[idx]
            if config.variant == "uncorrelated_si":
                yb = yb[uncorr_rng.permutation(idx.size)]
            tb = None if t_tr is None else t_tr[idx]

            z_e = model._encoder(xb, yb if config.variant == "joint" else None, tb)
            flat = z_e.data.reshape(-1, config.code_dim)
            assign = vq.assign_indices(flat, model.params["codebook"].data)
            counts += np.bincount(assign, minlength=config.codebook_size)
            last_z = flat

            codes_t = numerics.gather_rows(
                model.params["codebook"],
                assign.reshape(xb.shape[0], config.latent_len))
            cb_loss, commit_loss = vq.vq_loss_terms(z_e, codes_t)
            st = vq.straight_through(z_e, codes_t.data)
            codes_flat = numerics.reshape(st, (xb.shape[0], -1))
            dec_y = None if config.variant == "separate" else yb
            xhat = model._decoder(codes_flat, dec_y, tb)
            recon = numerics.mean_all(numerics.square(numerics.sub(xhat, Tensor(xb))))
            total = numerics.add(
                numerics.add(recon, cb_loss),
                numerics.scale(commit_loss, commitment_beta))

            loss_val = total.item()
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"non-finite loss {loss_val!r} at epoch {epoch}, "
                    f"batch starting at {lo} (variant={config.variant})")
            model.params.zero_grad()
            backward(total)
            adam_step(model.params, adam)
            epoch_loss += loss_val
            batches += 1

        # dead-code refresh: codes unused for a whole epoch restart from data
        dead = np.flatnonzero(counts == 0)
        if dead.size and last_z is not None:
            picks = dead_rng.choice(last_z.shape[0], size=dead.size, replace=True)
            model.params["codebook"].data[dead] = last_z[picks]
            log.info("reinitialized %d dead codebook entries at epoch %d: %s",
                     dead.size, epoch, dead.tolist())

        valid_mse = dataset_mse(model, valid_set, si_override=valid_si)
        logrows.append(EpochLog(epoch, epoch_loss / max(batches, 1), valid_mse))

        if valid_mse < best_mse:
            best_mse = valid_mse
            best_values = model.params.copy_values()
            stale = 0
        else:
            stale += 1
            if stale > patience:
                break
        perm = shuffle_rng.permutation(n)

    model.params.load_values(best_values)
    return model, logrows


# ---------------------------------------------------------------------------
# Uniform-quantization ablation: identical networks, no codebook
# ---------------------------------------------------------------------------

def uniform_quantize_value(v, levels: int, lo: float, hi: float):
    """Map latent values to (cell index, cell center) on a uniform grid."""
    v = np.asarray(v, dtype=np.float64)
    width = (hi - lo) / levels
    idx = np.clip(np.floor((v - lo) / width).astype(np.int64), 0, levels - 1)
    centers = lo + (idx + 0.5) * width
    return idx, centers


class UniformCodecModel:
    """Autoencoder with a sigmoid-bounded latent, quantized post hoc."""

    def __init__(self, config: CodecConfig, params: ParamSet, levels: int,
                 value_range=(0.0, 1.0)):
        if levels < 2:
            raise ConfigError(f"levels must be >= 2, got {levels}")
        self.config = config
        self.params = params
        self.levels = int(levels)
        self.value_range = (float(value_range[0]), float(value_range[1]))

    @classmethod
    def init(cls, config: CodecConfig, seed, levels: int,
             value_range=(0.0, 1.0)) -> "UniformCodecModel":
        rng = np.random.default_rng(seed)
        h, h_si = config.hidden
        ps = ParamSet()
        w, b = numerics.init_affine(rng, config.encoder_in, h)
        ps.add("enc.w0", w), ps.add("enc.b0", b)
        w, b = numerics.init_affine(rng, h, config.latent_len)
        ps.add("enc.w1", w), ps.add("enc.b1", b)
        w, b = numerics.init_affine(rng, config.si_dim, h_si)
        ps.add("si.w0", w), ps.add("si.b0", b)
        dec_in = (config.latent_len + h_si
                  + (TIME_FEATURES if config.time_conditioned else 0))
        w, b = numerics.init_affine(rng, dec_in, h)
        ps.add("dec.w0", w), ps.add("dec.b0", b)
        w, b = numerics.init_affine(rng, h, config.x_dim)
        ps.add("dec.w1", w), ps.add("dec.b1", b)
        return cls(config, ps, levels, value_range)

    def with_levels(self, levels: int) -> "UniformCodecModel":
        """Same trained networks evaluated at a different grid resolution."""
        return UniformCodecModel(self.config, self.params, levels, self.value_range)

    @property
    def rate_bits(self) -> int:
        return self.config.latent_len * math.ceil(math.log2(self.levels))

    def _latent(self, x2d, y2d, t) -> Tensor:
        parts = [Tensor(x2d)]
        if self.config.variant == "joint":
            parts.append(self._si_feat(y2d))
        if self.config.time_conditioned:
            parts.append(Tensor(CodecModel._time_feat(self, t)))
        xin = parts[0] if len(parts) == 1 else numerics.concat(parts, axis=1)
        h = numerics.gelu(numerics.affine(xin, self.params["enc.w0"],
                                          self.params["enc.b0"]))
        z = numerics.sigmoid(numerics.affine(h, self.params["enc.w1"],
                                             self.params["enc.b1"]))
        lo, hi = self.value_range
        return numerics.add(numerics.scale(z, hi - lo),
                            Tensor(np.full((1, 1), lo)))

    _si_feat = CodecModel._si_feat
    _check_time = CodecModel._check_time
    _as_batch = staticmethod(CodecModel._as_batch)

    def _decoder(self, latent: Tensor, y2d, t) -> Tensor:
        n = latent.data.shape[0]
        if self.config.variant == "separate" or y2d is None:
            si = Tensor(np.zeros((n, self.config.hidden[1])))
        else:
            si = self._si_feat(y2d)
        parts = [latent, si]
        if self.config.time_conditioned:
            parts.append(Tensor(CodecModel._time_feat(self, t)))
        h = numerics.gelu(numerics.affine(numerics.concat(parts, axis=1),
                                          self.params["dec.w0"], self.params["dec.b0"]))
        out = numerics.affine(h, self.params["dec.w1"], self.params["dec.b1"])
        if self.config.output_sigmoid:
            out = numerics.sigmoid(out)
        return out

    def encode_batch(self, x, y=None, t=None) -> np.ndarray:
        x2d = self._as_batch(x, self.config.x_dim, "input")
        y2d = None if y is None else self._as_batch(y, self.config.si_dim,
                                                    "side information")
        z = self._latent(x2d, y2d, t)
        idx, _ = uniform_quantize_value(z.data, self.levels, *self.value_range)
        return idx

    def decode_batch(self, indices, y=None, t=None) -> np.ndarray:
        lo, hi = self.value_range
        width = (hi - lo) / self.levels
        centers = lo + (np.asarray(indices, dtype=np.float64) + 0.5) * width
        y2d = None if y is None else self._as_batch(y, self.config.si_dim,
                                                    "side information")
        return self._decoder(Tensor(centers), y2d, t).data

    def reconstruct(self, x, y=None, t=None) -> np.ndarray:
        enc_y = y if self.config.variant == "joint" else None
        dec_y = None if self.config.variant == "separate" else y
        return self.decode_batch(self.encode_batch(x, enc_y, t), dec_y, t)


def uniform_ae_train(config: CodecConfig, levels: int, value_range,
                     train_set: PairDataset, valid_set: PairDataset,
                     epochs: int, seed: int, *, lr: float = 1e-3,
                     batch_size: int = 64, patience: int = 20):
    """Train the ablation autoencoder (continuous latent, quantized post hoc)."""
    if levels < 2:
        raise ConfigError(f"levels must be >= 2, got {levels}")
    x_tr, y_tr, t_tr = _dataset_arrays(config, train_set)
    _dataset_arrays(config, valid_set)

    ss = np.random.SeedSequence([seed, 0xAB1A])
    init_s, shuffle_s, uncorr_s = ss.spawn(3)
    model = UniformCodecModel.init(config, init_s, levels, value_range)
    shuffle_rng = np.random.default_rng(shuffle_s)
    uncorr_rng = np.random.default_rng(uncorr_s)

    valid_si = None
    if config.variant == "uncorrelated_si":
        valid_si = valid_set.y[uncorr_rng.permutation(valid_set.n)]

    adam = AdamState.for_params(model.params, lr=lr)
    logrows: list[EpochLog] = []
    best_mse = math.inf
    best_values = model.params.copy_values()
    stale = 0
    n = train_set.n

    for epoch in range(epochs):
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for lo_i in range(0, n, batch_size):
            idx = perm[lo_i:lo_i + batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            if config.variant == "uncorrelated_si":
                yb = yb[uncorr_rng.permutation(idx.size)]
            tb = None if t_tr is None else t_tr[idx]
            z = model._latent(xb, yb if config.variant == "joint" else None, tb)
            dec_y = None if config.variant == "separate" else yb
            xhat = model._decoder(z, dec_y, tb)
            loss = numerics.mean_all(numerics.square(numerics.sub(xhat, Tensor(xb))))
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"non-finite loss {loss_val!r} at epoch {epoch} (uniform ablation)")
            model.params.zero_grad()
            backward(loss)
            adam_step(model.params, adam)
            epoch_loss += loss_val
            batches += 1

        valid_mse = uniform_dataset_mse(model, valid_set, si_override=valid_si)
        logrows.append(EpochLog(epoch, epoch_loss / max(batches, 1), valid_mse))
        if valid_mse < best_mse:
            best_mse = valid_mse
            best_values = model.params.copy_values()
            stale = 0
        else:
            stale += 1
            if stale > patience:
                break

    model.params.load_values(best_values)
    return model, logrows


def uniform_dataset_mse(model: UniformCodecModel, ds: PairDataset,
                        batch_size: int = 512,
                        si_override: np.ndarray | None = None) -> float:
    """Quantized reconstruction MSE of the ablation model over a dataset."""
    x, y, t = _dataset_arrays(model.config, ds)
    if si_override is not None:
        y = si_override.astype(numerics.DTYPE)
    total = 0.0
    for lo in range(0, ds.n, batch_size):
        hi = min(lo + batch_size, ds.n)
        xhat = model.reconstruct(x[lo:hi], y[lo:hi],
                                 None if t is None else t[lo:hi])
        total += float(np.sum((xhat - x[lo:hi]) ** 2))
    return total / x.size
