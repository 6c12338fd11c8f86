"""Classical references the learned codecs are checked against.

Exact binning over 3-bit sources with unit-Hamming correlation,
analytic quadratic-Gaussian rate-distortion curves with and without
decoder side information, and a Lloyd-Max scalar quantizer used as a
one-shot compression oracle.

All rates are in bits (base-2 logarithms throughout).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# The four bins: each holds two strings at Hamming distance 3, so a
# decoder that knows y within distance 1 of x always disambiguates.
BINS = (("000", "111"), ("001", "110"), ("010", "101"), ("011", "100"))

_BIN_OF = {s: i for i, members in enumerate(BINS) for s in members}

SW_RATE_BITS = 2
SW_UNCODED_BITS = 3


@dataclass(frozen=True)
class BinTable:
    """Lookup table from 3-bit strings to bin ids and back."""

    bins: tuple = BINS

    def bin_of(self, x: str) -> int:
        return _BIN_OF[x]

    def members(self, bin_id: int):
        return self.bins[bin_id]


def _check_bits(s: str, name: str) -> str:
    if len(s) != 3 or any(c not in "01" for c in s):
        raise ValueError(f"{name} must be a 3-bit string, got {s!r}")
    return s


def hamming_distance(a: str, b: str) -> int:
    return sum(ca != cb for ca, cb in zip(a, b))


def sw_encode(x: str) -> int:
    """Bin index of x; transmitting it costs exactly 2 bits."""
    return _BIN_OF[_check_bits(x, "x")]


def sw_decode(bin_id: int, y: str) -> str:
    """The bin member closest to y in Hamming distance.

    Within a bin the members are at distance 3, and their distances to
    any y have opposite parity, so ties cannot occur.
    """
    if bin_id not in range(4):
        raise ValueError(f"bin id must be in [0, 4), got {bin_id}")
    _check_bits(y, "y")
    a, b = BINS[bin_id]
    return a if hamming_distance(a, y) <= hamming_distance(b, y) else b


def sw_verify_all():
    """Exhaustive check over the 32 valid (x, y) pairs.

    Yields (x, y, bin id, decoded, ok) for every x in {0,1}^3 and every
    y within Hamming distance 1 of x.
    """
    rows = []
    for xi in range(8):
        x = format(xi, "03b")
        neighbors = [x] + [x[:j] + ("1" if x[j] == "0" else "0") + x[j + 1:]
                           for j in range(3)]
        for y in neighbors:
            bin_id = sw_encode(x)
            decoded = sw_decode(bin_id, y)
            rows.append((x, y, bin_id, decoded, decoded == x))
    return rows


# ---------------------------------------------------------------------------
# Quadratic-Gaussian rate-distortion curves
# ---------------------------------------------------------------------------

def rd_gaussian_no_si(distortion: float, var_x: float = 1.0) -> float:
    """Rate in bits/sample to hit the given MSE without side information."""
    if distortion <= 0:
        raise ValueError(f"distortion must be positive, got {distortion}")
    return float(max(0.0, 0.5 * np.log2(var_x / distortion)))


def conditional_variance(var_x: float, var_n: float) -> float:
    """Residual variance of x given y = x + n (jointly Gaussian)."""
    return var_x * var_n / (var_x + var_n)


def rd_gaussian_with_si(distortion: float, var_x: float = 1.0,
                        var_n: float = 0.01) -> float:
    """Rate with decoder side information y = x + n.

    For jointly Gaussian sources under squared error, the side-informed
    curve equals the conditional curve with variance
    var_x * var_n / (var_x + var_n).
    """
    if distortion <= 0:
        raise ValueError(f"distortion must be positive, got {distortion}")
    var_c = conditional_variance(var_x, var_n)
    return float(max(0.0, 0.5 * np.log2(var_c / distortion)))


# ---------------------------------------------------------------------------
# Lloyd-Max scalar quantizer
# ---------------------------------------------------------------------------

@dataclass
class ScalarQuantizer:
    """K cell centers with the midpoint thresholds between them."""

    centers: np.ndarray     # (K,) ascending
    thresholds: np.ndarray  # (K-1,) cell boundaries

    def assign(self, samples: np.ndarray) -> np.ndarray:
        return np.searchsorted(self.thresholds, samples)

    def reconstruct(self, samples: np.ndarray) -> np.ndarray:
        return self.centers[self.assign(samples)]

    def distortion(self, samples: np.ndarray) -> float:
        r = self.reconstruct(samples)
        return float(np.mean((samples - r) ** 2))


def lloyd_max(samples, k: int, iters: int = 200, tol: float = 1e-9) -> ScalarQuantizer:
    """MSE-optimal scalar quantizer by alternating centroid/threshold updates.

    Centers are initialized at the k interior sample quantiles and
    refined until the largest center movement drops below tol.  The
    training distortion is non-increasing across iterations.
    """
    samples = np.asarray(samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    distinct = np.unique(samples)
    if k > distinct.size:
        raise ValueError(
            f"k={k} exceeds the number of distinct samples ({distinct.size})")

    qs = (np.arange(k) + 0.5) / k
    centers = np.quantile(samples, qs)
    order = np.argsort(samples, kind="stable")
    sorted_samples = samples[order]
    prefix = np.concatenate([[0.0], np.cumsum(sorted_samples)])

    for _ in range(iters):
        thresholds = 0.5 * (centers[:-1] + centers[1:])
        # conditional means per cell via prefix sums over the sorted samples
        cuts = np.searchsorted(sorted_samples, thresholds)
        starts = np.concatenate([[0], cuts])
        stops = np.concatenate([cuts, [samples.size]])
        counts = stops - starts
        new_centers = centers.copy()
        nonempty = counts > 0
        new_centers[nonempty] = ((prefix[stops] - prefix[starts])[nonempty]
                                 / counts[nonempty])
        move = np.max(np.abs(new_centers - centers)) if k > 1 else abs(
            float(new_centers[0] - centers[0]))
        centers = np.sort(new_centers)
        if move < tol:
            break

    thresholds = 0.5 * (centers[:-1] + centers[1:])
    return ScalarQuantizer(centers=centers, thresholds=thresholds)
