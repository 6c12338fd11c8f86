"""Metrics and experiment drivers.

MSE/PSNR/bits-per-pixel accounting, rate-distortion sweeps over codec
configurations and seeds, the bin-diversity measurement (how much the
decoding of one fixed message varies with the side information), and
the side-information swap evaluation.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import codec
from .errors import ConfigError
from .sources import PairDataset, split_pair_dataset

RD_CSV_HEADER = "rate_bits,bpp,mse,psnr_db,variant,seed"
DIVERSITY_CSV_HEADER = "model,diversity_l2,pool_size,seed"


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"mse shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(mse_value: float, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the error is exactly zero."""
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    if mse_value < 0:
        raise ValueError(f"mse must be >= 0, got {mse_value}")
    if mse_value == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse_value)


def bpp(rate_bits: int, pixel_count: int) -> float:
    if pixel_count <= 0:
        raise ValueError(f"pixel count must be positive, got {pixel_count}")
    return rate_bits / pixel_count


@dataclass
class RDPoint:
    """One rate-distortion measurement.

    bpp and psnr_db are NaN when no pixel count or peak applies
    (unbounded sources report MSE only).  The mean-over-seeds row uses
    seed = -1.
    """

    rate_bits: int
    bpp: float
    mse: float
    psnr_db: float
    variant: str
    seed: int


def _rd_job(args):
    config, train_ds, valid_ds, test_ds, seed, epochs, lr, batch_size, patience = args
    model, _ = codec.train(config, train_ds, valid_ds, epochs, seed,
                           lr=lr, batch_size=batch_size, patience=patience)
    return codec.dataset_mse(model, test_ds)


def rd_sweep(dataset: PairDataset, configs, seeds, *, epochs: int = 150,
             lr: float = 1e-3, batch_size: int = 64, patience: int = 20,
             split=(0.7, 0.15, 0.15), split_seed: int = 0,
             peak: float | None = None, pixel_count: int | None = None,
             jobs: int = 1) -> list[RDPoint]:
    """Train every (config, seed) pair and measure test MSE.

    Emits one RDPoint per (config, seed) plus a mean-over-seeds row per
    config (seed -1).  Rows are ordered by (config index, seed) no
    matter how the work is scheduled.
    """
    for config in configs:
        if config.x_dim != dataset.x_dim or config.si_dim != dataset.si_dim:
            raise ConfigError(
                f"config dims ({config.x_dim}, {config.si_dim}) do not match "
                f"dataset ({dataset.x_dim}, {dataset.si_dim})")
    train_ds, valid_ds, test_ds = split_pair_dataset(dataset, split, split_seed)
    tasks = [(config, train_ds, valid_ds, test_ds, seed,
              epochs, lr, batch_size, patience)
             for config in configs for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            mses = list(pool.map(_rd_job, tasks))
    else:
        mses = [_rd_job(t) for t in tasks]

    points = []
    per_config = len(seeds)
    for ci, config in enumerate(configs):
        rate = codec.rate_bits(config)
        bpp_val = bpp(rate, pixel_count) if pixel_count else math.nan
        seed_mses = mses[ci * per_config:(ci + 1) * per_config]
        for seed, m in zip(seeds, seed_mses):
            points.append(RDPoint(rate, bpp_val, m,
                                  psnr(m, peak) if peak else math.nan,
                                  config.variant, seed))
        mean_mse = float(np.mean(seed_mses))
        points.append(RDPoint(rate, bpp_val, mean_mse,
                              psnr(mean_mse, peak) if peak else math.nan,
                              config.variant, -1))
    return points


def bin_diversity(model, inputs: np.ndarray, si_pool: np.ndarray) -> float:
    """Mean pairwise l2 distance among decodings of one message under
    varying side information, averaged over inputs.

    Defined for variants whose encoder runs without side information
    (distributed, uncorrelated_si, separate); a decoder that ignores the
    side information scores exactly 0.
    """
    if model.config.variant == "joint":
        raise ConfigError(
            "bin diversity needs an encoder that runs without side information")
    si_pool = np.asarray(si_pool, dtype=np.float64)
    if si_pool.ndim != 2 or si_pool.shape[0] < 2:
        raise ConfigError(
            f"side-information pool must have >= 2 rows, got shape {si_pool.shape}")
    inputs = np.asarray(inputs, dtype=np.float64)
    indices = model.encode_batch(inputs)
    dec_y = None if model.config.variant == "separate" else si_pool
    recons = []
    for j in range(si_pool.shape[0]):
        y_j = None if dec_y is None else np.repeat(si_pool[j][None, :],
                                                   inputs.shape[0], axis=0)
        recons.append(model.decode_batch(indices, y_j))
    recons = np.stack(recons, axis=0)  # (pool, n, x_dim)
    p = recons.shape[0]
    total = 0.0
    pairs = 0
    for i in range(p):
        for j in range(i + 1, p):
            total += float(np.mean(np.linalg.norm(recons[i] - recons[j], axis=1)))
            pairs += 1
    return total / pairs


def si_swap_eval(model, test_set: PairDataset,
                 modes=("true", "shuffled", "random"), seed: int = 0) -> dict:
    """Mean reconstruction MSE per side-information mode.

    "true" pairs each message with its own side information, "shuffled"
    with another sample's (a cyclic derangement), "random" with an
    i.i.d. draw from the empirical side-information marginal.
    """
    x = test_set.x.astype(np.float64)
    y = test_set.y.astype(np.float64)
    t = None
    if model.config.time_conditioned:
        t = test_set.aux[:, 0].astype(np.float64)
    enc_y = y if model.config.variant == "joint" else None
    indices = model.encode_batch(x, enc_y, t)
    rng = np.random.default_rng([seed, 0x51A9])

    out = {}
    for mode in modes:
        if mode == "true":
            y_mode = y
        elif mode == "shuffled":
            y_mode = np.roll(y, 1, axis=0)
        elif mode == "random":
            y_mode = y[rng.integers(0, y.shape[0], size=y.shape[0])]
        else:
            raise ConfigError(f"unknown side-information mode {mode!r}")
        dec_y = None if model.config.variant == "separate" else y_mode
        xhat = model.decode_batch(indices, dec_y, t)
        out[mode] = mse(xhat, x)
    return out


# ---------------------------------------------------------------------------
# CSV emission (the exact schemas the CLI writes)
# ---------------------------------------------------------------------------

def format_rd_csv(points) -> str:
    lines = [RD_CSV_HEADER]
    for p in points:
        lines.append(f"{p.rate_bits},{p.bpp!r},{p.mse!r},{p.psnr_db!r},"
                     f"{p.variant},{p.seed}")
    return "\n".join(lines) + "\n"


def format_diversity_csv(rows) -> str:
    """rows: iterable of (model label, diversity, pool size, seed)."""
    lines = [DIVERSITY_CSV_HEADER]
    for label, value, pool, seed in rows:
        lines.append(f"{label},{value!r},{pool},{seed}")
    return "\n".join(lines) + "\n"
