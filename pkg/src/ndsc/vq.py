"""Learned vector quantization.

Codebook storage, nearest-neighbor assignment with deterministic
tie-breaking, the straight-through gradient contract, and the two
auxiliary training losses (codebook pull and encoder commitment).
"""

from __future__ import annotations

import numpy as np

from . import numerics
from .numerics import Tensor


class Codebook:
    """K x D matrix of code vectors, K a power of two (K = 2**bits)."""

    def __init__(self, vectors):
        if isinstance(vectors, Tensor):
            self.vectors = vectors
        else:
            self.vectors = Tensor(np.asarray(vectors, dtype=numerics.DTYPE),
                                  requires_grad=True)
        k, d = self.shape
        if k < 2 or (k & (k - 1)) != 0:
            raise ValueError(f"codebook size {k} must be a power of two >= 2")
        if d < 1:
            raise ValueError(f"code dimension {d} must be >= 1")
        if not np.all(np.isfinite(self.vectors.data)):
            raise ValueError("codebook contains non-finite entries")

    @property
    def shape(self):
        return self.vectors.data.shape

    @property
    def k(self):
        return self.vectors.data.shape[0]

    @property
    def dim(self):
        return self.vectors.data.shape[1]

    @property
    def bits(self):
        return int(self.k).bit_length() - 1


def assign_indices(z: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Nearest-code index for each row ofz (m, D); ties -> lowest index."""
    # squared distances via expansion; argmin returns the first minimum
    d2 = (np.square(z).sum(axis=1, keepdims=True)
          - 2.0 * z @ vectors.T
          + np.square(vectors).sum(axis=1))
    return np.argmin(d2, axis=1)


def quantize(z, cb: Codebook):
    """Map one vector to its nearest code: returns (index, code vector)."""
    z = np.asarray(z, dtype=numerics.DTYPE)
    if z.shape != (cb.dim,):
        raise ValueError(
            f"quantize expects a vector of length {cb.dim}, got shape {z.shape}")
    # exact argmin over true distances for the single-vector path
    d2 = np.square(cb.vectors.data - z).sum(axis=1)
    idx = int(np.argmin(d2))
    return idx, cb.vectors.data[idx].copy()


def quantize_batch(zs, cb: Codebook):
    """Positionwise quantize: list of (index, code) per row of zs (L, D)."""
    zs = np.asarray(zs, dtype=numerics.DTYPE)
    if zs.ndim != 2 or zs.shape[1] != cb.dim:
        raise ValueError(
            f"quantize_batch expects shape (L, {cb.dim}), got {zs.shape}")
    idxs = assign_indices(zs, cb.vectors.data)
    return [(int(i), cb.vectors.data[i].copy()) for i in idxs]


def straight_through(z_e: Tensor, code_values: np.ndarray) -> Tensor:
    """Forward the quantized values; pass the gradient to z_e unchanged."""
    return numerics.straight_through(z_e, code_values)


def vq_loss_terms(z_e: Tensor, codes: Tensor):
    """Codebook and commitment losses, averaged over batch and positions.

    z_e and codes have shape (..., D).  The codebook loss moves only the
    codebook (encoder side stop-gradded); the commitment loss moves only
    the encoder (codes stop-gradded).  Both are mean squared euclidean
    distances: sum over the code dimension, mean over all positions.
    """
    if z_e.data.shape != codes.data.shape:
        raise ValueError(
            f"vq_loss_terms shape mismatch: {z_e.data.shape} vs {codes.data.shape}")
    n_positions = int(np.prod(z_e.data.shape[:-1])) if z_e.data.ndim > 1 else 1
    codebook_loss = numerics.scale(
        numerics.sum_all(numerics.square(numerics.sub(numerics.detach(z_e), codes))),
        1.0 / n_positions)
    commitment_loss = numerics.scale(
        numerics.sum_all(numerics.square(numerics.sub(z_e, numerics.detach(codes)))),
        1.0 / n_positions)
    return codebook_loss, commitment_loss


def init_codebook_from_outputs(z_rows: np.ndarray, k: int,
                               rng: np.random.Generator) -> np.ndarray:
    """Seed a codebook with k rows sampled from encoder outputs."""
    m = z_rows.shape[0]
    replace = m < k
    picks = rng.choice(m, size=k, replace=replace)
    return z_rows[picks].copy()
