"""Tests for metrics, sweeps, diversity, and the SI-swap evaluation."""

import math

import numpy as np
import pytest

from ndsc import analysis, codec, sources
from ndsc.codec import CodecConfig, CodecModel
from ndsc.errors import ConfigError


class TestMetrics:
    def test_psnr_known_values(self):
        assert analysis.psnr(0.01, peak=1.0) == pytest.approx(20.0)
        assert analysis.psnr(1.0, peak=1.0) == pytest.approx(0.0)

    def test_psnr_zero_mse_infinite(self):
        a = np.ones((4, 4))
        assert analysis.mse(a, a) == 0.0
        assert analysis.psnr(0.0, peak=1.0) == math.inf

    def test_psnr_strictly_decreasing_in_mse(self):
        values = [analysis.psnr(m) for m in (0.001, 0.01, 0.1, 1.0)]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_psnr_validation(self):
        with pytest.raises(ValueError):
            analysis.psnr(0.1, peak=0.0)
        with pytest.raises(ValueError):
            analysis.psnr(-0.1)

    def test_bpp(self):
        assert analysis.bpp(4096, 128 * 256) == pytest.approx(0.125)
        assert analysis.bpp(2048, 32768) == pytest.approx(0.0625)
        assert analysis.bpp(0, 100) == 0.0
        with pytest.raises(ValueError):
            analysis.bpp(100, 0)

    def test_mse_shape_mismatch(self):
        with pytest.raises(ValueError):
            analysis.mse(np.ones(3), np.ones(4))


class TestRdSweep:
    def test_single_point_structure(self):
        ds = sources.gen_gaussian(600, 0.1, seed=0)
        cfg = CodecConfig("separate", 1, 1, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(8, 4))
        points = analysis.rd_sweep(ds, [cfg], [1], epochs=3)
        assert len(points) == 2  # one seed row plus the mean row
        assert all(p.rate_bits == 4 for p in points)
        assert points[0].seed == 1
        assert points[1].seed == -1
        assert points[1].mse == pytest.approx(points[0].mse)
        assert math.isnan(points[0].bpp) and math.isnan(points[0].psnr_db)

    def test_rows_reproducible(self):
        ds = sources.gen_gaussian(600, 0.1, seed=1)
        cfg = CodecConfig("separate", 1, 1, latent_len=1, code_dim=2,
                          codebook_bits=1, hidden=(8, 4))
        a = analysis.rd_sweep(ds, [cfg], [2, 3], epochs=3)
        b = analysis.rd_sweep(ds, [cfg], [2, 3], epochs=3)
        assert [(p.rate_bits, p.mse, p.seed) for p in a] == \
            [(p.rate_bits, p.mse, p.seed) for p in b]

    def test_dim_mismatch_rejected(self):
        ds = sources.gen_gaussian(100, 0.1, seed=2)
        cfg = CodecConfig("separate", 2, 2, latent_len=1, code_dim=2,
                          codebook_bits=1, hidden=(8, 4))
        with pytest.raises(ConfigError):
            analysis.rd_sweep(ds, [cfg], [0], epochs=1)

    def test_csv_format(self):
        points = [analysis.RDPoint(4, math.nan, 0.25, math.nan, "separate", 1)]
        text = analysis.format_rd_csv(points)
        lines = text.strip().split("\n")
        assert lines[0] == "rate_bits,bpp,mse,psnr_db,variant,seed"
        assert lines[1] == "4,nan,0.25,nan,separate,1"


class TestBinDiversity:
    def test_separate_decoder_scores_zero(self):
        cfg = CodecConfig("separate", 4, 4, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(8, 4))
        model = CodecModel.init(cfg, 0)
        rng = np.random.default_rng(0)
        value = analysis.bin_diversity(model, rng.standard_normal((5, 4)),
                                       rng.standard_normal((6, 4)))
        assert value == 0.0

    def test_two_element_pool_is_single_distance(self):
        cfg = CodecConfig("distributed", 4, 4, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(8, 4))
        model = CodecModel.init(cfg, 1)
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 4))
        pool = rng.standard_normal((2, 4))
        idx = model.encode_batch(x)
        a = model.decode_batch(idx, np.repeat(pool[0][None], 1, axis=0))
        b = model.decode_batch(idx, np.repeat(pool[1][None], 1, axis=0))
        expected = float(np.linalg.norm(a[0] - b[0]))
        assert analysis.bin_diversity(model, x, pool) == pytest.approx(expected)

    def test_invariant_to_pool_and_input_order(self):
        cfg = CodecConfig("distributed", 4, 4, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(8, 4))
        model = CodecModel.init(cfg, 2)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((6, 4))
        pool = rng.standard_normal((5, 4))
        base = analysis.bin_diversity(model, x, pool)
        shuffled = analysis.bin_diversity(model, x[::-1], pool[::-1])
        assert shuffled == pytest.approx(base, rel=1e-12)

    def test_joint_rejected(self):
        cfg = CodecConfig("joint", 4, 4, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(8, 4))
        model = CodecModel.init(cfg, 3)
        with pytest.raises(ConfigError):
            analysis.bin_diversity(model, np.zeros((2, 4)), np.zeros((3, 4)))

    def test_small_pool_rejected(self):
        cfg = CodecConfig("distributed", 4, 4, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(8, 4))
        model = CodecModel.init(cfg, 4)
        with pytest.raises(ConfigError):
            analysis.bin_diversity(model, np.zeros((2, 4)), np.zeros((1, 4)))


class TestSiSwap:
    def test_separate_modes_identical(self):
        cfg = CodecConfig("separate", 3, 3, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(8, 4))
        model = CodecModel.init(cfg, 5)
        ds = sources.gen_gaussian(50, 0.1, seed=3)
        ds = sources.PairDataset("gaussian", np.tile(ds.x, (1, 3)),
                                 np.tile(ds.y, (1, 3)), None, 3)
        out = analysis.si_swap_eval(model, ds)
        assert out["true"] == out["shuffled"] == out["random"]

    def test_trained_distributed_prefers_true_si(self):
        ds = sources.gen_gaussian(1024, 0.1, seed=4)
        tr, va, te = sources.split_pair_dataset(ds, (0.7, 0.15, 0.15), seed=0)
        cfg = CodecConfig("distributed", 1, 1, latent_len=1, code_dim=2,
                          codebook_bits=1, hidden=(16, 8))
        model, _ = codec.train(cfg, tr, va, epochs=30, seed=0)
        out = analysis.si_swap_eval(model, te)
        assert out["true"] < out["shuffled"]
        assert out["true"] < out["random"]

    def test_unknown_mode_rejected(self):
        cfg = CodecConfig("separate", 3, 3, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(8, 4))
        model = CodecModel.init(cfg, 6)
        ds = sources.PairDataset("gaussian", np.zeros((4, 3)), np.zeros((4, 3)),
                                 None, 0)
        with pytest.raises(ConfigError):
            analysis.si_swap_eval(model, ds, modes=("bogus",))

    def test_diversity_csv_format(self):
        text = analysis.format_diversity_csv([("m1", 1.5, 16, 0)])
        lines = text.strip().split("\n")
        assert lines[0] == "model,diversity_l2,pool_size,seed"
        assert lines[1] == "m1,1.5,16,0"
