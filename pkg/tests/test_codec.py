"""Tests for the conditional VQ codec: contracts, packing, training."""

import numpy as np
import pytest

from ndsc import codec, sources
from ndsc.codec import CodecConfig, CodecModel, Message
from ndsc.errors import ConfigError, DataError, NumericalError


def small_config(variant="distributed", **kw):
    defaults = dict(x_dim=4, si_dim=4, latent_len=4, code_dim=2,
                    codebook_bits=3, hidden=(16, 8))
    defaults.update(kw)
    return CodecConfig(variant, **defaults)


class TestRateBits:
    def test_target_rate_product(self):
        cfg = small_config(latent_len=512, codebook_bits=4)
        assert codec.rate_bits(cfg) == 2048

    def test_minimal(self):
        assert codec.rate_bits(small_config(latent_len=1, codebook_bits=1)) == 1

    def test_bits_per_pixel_row(self):
        # 512 positions at 8 bits over a 128x256-pixel source -> 0.125 bpp
        cfg = small_config(latent_len=512, codebook_bits=8)
        assert codec.rate_bits(cfg) == 4096
        assert codec.rate_bits(cfg) / (128 * 256) == 0.125


class TestMessagePacking:
    def test_bit_length_exact(self):
        for latent_len, bits in [(4, 3), (7, 5), (1, 1), (16, 4)]:
            rng = np.random.default_rng(latent_len * bits)
            idx = rng.integers(0, 1 << bits, size=latent_len)
            msg = Message(idx, bits)
            raw = msg.to_bytes()
            assert len(raw) == (latent_len * bits + 7) // 8
            back = Message.from_bytes(raw, latent_len, bits)
            np.testing.assert_array_equal(back.indices, idx)

    def test_padding_must_be_zero(self):
        msg = Message(np.array([1, 2, 3]), 3)  # 9 bits -> 2 bytes
        raw = bytearray(msg.to_bytes())
        raw[-1] |= 0x01
        with pytest.raises(DataError, match="padding"):
            Message.from_bytes(bytes(raw), 3, 3)

    def test_out_of_range_index_rejected(self):
        with pytest.raises(ValueError, match="range"):
            Message(np.array([8]), 3)

    def test_wrong_length_rejected(self):
        msg = Message(np.array([1, 2, 3, 4]), 4)
        with pytest.raises(DataError, match="length"):
            Message.from_bytes(msg.to_bytes() + b"\x00", 4, 4)


class TestEncodeDecodeContracts:
    def test_fresh_model_message_structure(self):
        model = CodecModel.init(small_config(latent_len=4, codebook_bits=3), 0)
        rng = np.random.default_rng(1)
        msg = model.encode(rng.standard_normal(4))
        assert len(msg) == 4
        assert msg.indices.max() < 8

    def test_encode_deterministic(self):
        model = CodecModel.init(small_config(), 0)
        x = np.random.default_rng(2).standard_normal(4)
        a = model.encode(x)
        b = model.encode(x)
        np.testing.assert_array_equal(a.indices, b.indices)

    def test_separate_encoder_rejects_si(self):
        model = CodecModel.init(small_config("separate"), 0)
        x = np.zeros(4)
        with pytest.raises(ConfigError, match="must not receive"):
            model.encode(x, y=np.zeros(4))

    def test_joint_encoder_requires_si(self):
        model = CodecModel.init(small_config("joint"), 0)
        with pytest.raises(ConfigError, match="requires side information"):
            model.encode(np.zeros(4))

    def test_distributed_decoder_requires_si(self):
        model = CodecModel.init(small_config("distributed"), 0)
        msg = model.encode(np.zeros(4))
        with pytest.raises(ConfigError, match="requires side information"):
            model.decode(msg)

    def test_separate_decode_ignores_si(self):
        model = CodecModel.init(small_config("separate"), 0)
        rng = np.random.default_rng(3)
        msg = model.encode(rng.standard_normal(4))
        out_a = model.decode(msg, y=rng.standard_normal(4))
        out_b = model.decode(msg, y=rng.standard_normal(4))
        out_c = model.decode(msg)
        np.testing.assert_array_equal(out_a, out_b)
        np.testing.assert_array_equal(out_a, out_c)

    def test_distributed_encoder_ignores_si_perturbation(self):
        model = CodecModel.init(small_config("distributed"), 0)
        rng = np.random.default_rng(4)
        x = rng.standard_normal((8, 4))
        a = model.encode_batch(x)
        b = model.encode_batch(x)  # no SI path exists at the encoder
        np.testing.assert_array_equal(a, b)

    def test_decode_rejects_out_of_range_index(self):
        model = CodecModel.init(small_config(codebook_bits=2), 0)
        with pytest.raises(DataError, match="range"):
            model.decode_batch(np.array([[4, 0, 0, 0]]), y=np.zeros((1, 4)))

    def test_round_trip_finite(self):
        model = CodecModel.init(small_config("distributed"), 0)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((32, 4))
        y = rng.standard_normal((32, 4))
        out = model.reconstruct(x, y)
        assert out.shape == (32, 4)
        assert np.all(np.isfinite(out))

    def test_time_conditioning_arity(self):
        cfg = small_config(time_conditioned=True, time_horizon=100)
        model = CodecModel.init(cfg, 0)
        with pytest.raises(ConfigError, match="time"):
            model.encode(np.zeros(4))
        msg = model.encode(np.zeros(4), t=7)
        plain = CodecModel.init(small_config(), 0)
        with pytest.raises(ConfigError, match="time"):
            plain.encode(np.zeros(4), t=7)
        assert len(msg) == 4


class TestModelFile:
    def test_round_trip(self, tmp_path):
        model = CodecModel.init(small_config("joint"), 3)
        path = tmp_path / "model.ndsc"
        model.save(path)
        back = CodecModel.load(path)
        assert back.config == model.config
        # float32 interchange: a second save of the loaded model is bitwise
        # identical to the first file
        path2 = tmp_path / "model2.ndsc"
        back.save(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_reencoding_reproducible_after_reload(self, tmp_path):
        model = CodecModel.init(small_config(), 4)
        path = tmp_path / "m.ndsc"
        model.save(path)
        a = CodecModel.load(path)
        b = CodecModel.load(path)
        x = np.random.default_rng(7).standard_normal((16, 4))
        np.testing.assert_array_equal(a.encode_batch(x), b.encode_batch(x))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ndsc"
        path.write_bytes(b"ZZZZ" + b"\x00" * 16)
        with pytest.raises(DataError, match="NDSC"):
            CodecModel.load(path)

    def test_config_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            CodecConfig.from_dict({"variant": "separate", "x_dim": 1,
                                   "si_dim": 1, "latent_len": 1, "code_dim": 1,
                                   "codebook_bits": 1, "bogus": 2})


class TestTraining:
    @staticmethod
    def tiny_gaussian(n=512, seed=0):
        ds = sources.gen_gaussian(n, 0.1, seed)
        return sources.split_pair_dataset(ds, (0.75, 0.25), seed=0)

    def test_single_sample_overfit(self):
        # capacity sanity: a codec trained on one pair drives MSE below 1e-3
        rng = np.random.default_rng(8)
        x = rng.random((1, 4)).astype(np.float32)
        y = rng.random((1, 4)).astype(np.float32)
        one = sources.PairDataset("gaussian", x, y, None, 0)
        cfg = small_config("distributed", codebook_bits=1, latent_len=2)
        model, log = codec.train(cfg, one, one, epochs=400, seed=0,
                                 batch_size=1, patience=400)
        assert codec.dataset_mse(model, one) < 1e-3

    def test_loss_log_deterministic(self):
        tr, va = self.tiny_gaussian()
        cfg = CodecConfig("separate", 1, 1, latent_len=1, code_dim=2,
                          codebook_bits=2, hidden=(16, 8))
        _, log_a = codec.train(cfg, tr, va, epochs=5, seed=9)
        _, log_b = codec.train(cfg, tr, va, epochs=5, seed=9)
        assert [(r.epoch, r.train_loss, r.valid_mse) for r in log_a] == \
            [(r.epoch, r.train_loss, r.valid_mse) for r in log_b]

    def test_perfect_si_orders_variants(self):
        # y == x: a decoder with side information beats one without
        ds = sources.gen_gaussian(1024, 0.0, seed=10)
        tr, va = sources.split_pair_dataset(ds, (0.75, 0.25), seed=0)
        results = {}
        for variant in ("distributed", "separate"):
            cfg = CodecConfig(variant, 1, 1, latent_len=1, code_dim=2,
                              codebook_bits=2, hidden=(16, 8))
            model, _ = codec.train(cfg, tr, va, epochs=40, seed=1)
            results[variant] = codec.dataset_mse(model, va)
        assert results["distributed"] < results["separate"]

    def test_empty_dataset_rejected(self):
        cfg = small_config()
        empty = sources.PairDataset("gaussian", np.zeros((0, 4)),
                                    np.zeros((0, 4)), None, 0)
        with pytest.raises(DataError, match="empty"):
            codec.train(cfg, empty, empty, epochs=1, seed=0)

    def test_dim_mismatch_rejected(self):
        tr, va = self.tiny_gaussian()
        with pytest.raises(DataError, match="dims"):
            codec.train(small_config(x_dim=2, si_dim=2), tr, va, 1, 0)

    def test_nan_aborts_with_diagnostic(self):
        tr, va = self.tiny_gaussian()
        cfg = CodecConfig("separate", 1, 1, latent_len=1, code_dim=2,
                          codebook_bits=2, hidden=(16, 8))
        with pytest.raises(NumericalError, match="epoch"):
            codec.train(cfg, tr, va, epochs=6, seed=0, lr=1e160)

    def test_message_indices_reproducible_after_training(self):
        tr, va = self.tiny_gaussian()
        cfg = CodecConfig("separate", 1, 1, latent_len=2, code_dim=2,
                          codebook_bits=2, hidden=(16, 8))
        model, _ = codec.train(cfg, tr, va, epochs=10, seed=2)
        x = tr.x.astype(np.float64)
        np.testing.assert_array_equal(model.encode_batch(x),
                                      model.encode_batch(x))


class TestUniformAblation:
    def test_quantize_examples(self):
        idx, center = codec.uniform_quantize_value(0.3, 4, 0.0, 1.0)
        assert idx == 1 and center == pytest.approx(0.375)
        idx, center = codec.uniform_quantize_value(0.0, 4, 0.0, 1.0)
        assert idx == 0 and center == pytest.approx(0.125)
        idx, center = codec.uniform_quantize_value(1.0, 4, 0.0, 1.0)
        assert idx == 3 and center == pytest.approx(0.875)

    def test_cell_centers_grid(self):
        values = np.array([0.05, 0.3, 0.6, 0.9])
        _, centers = codec.uniform_quantize_value(values, 4, 0.0, 1.0)
        np.testing.assert_allclose(centers, [0.125, 0.375, 0.625, 0.875])

    def test_rate_accounting(self):
        cfg = small_config("separate", latent_len=8)
        model = codec.UniformCodecModel.init(cfg, 0, levels=8)
        assert model.rate_bits == 8 * 3
        assert model.with_levels(5).rate_bits == 8 * 3  # ceil(log2 5) == 3

    def test_levels_validation(self):
        cfg = small_config("separate")
        with pytest.raises(ConfigError, match="levels"):
            codec.UniformCodecModel.init(cfg, 0, levels=1)

    def test_training_runs_and_quantizes(self):
        ds = sources.gen_gaussian(512, 0.1, seed=20)
        tr, va = sources.split_pair_dataset(ds, (0.75, 0.25), seed=0)
        cfg = CodecConfig("separate", 1, 1, latent_len=1, code_dim=1,
                          codebook_bits=2, hidden=(16, 8))
        model, log = codec.uniform_ae_train(cfg, 4, (-3.0, 3.0), tr, va,
                                            epochs=20, seed=0)
        assert len(log) >= 1
        idx = model.encode_batch(tr.x.astype(np.float64))
        assert idx.min() >= 0 and idx.max() < 4
        m = codec.uniform_dataset_mse(model, va)
        assert np.isfinite(m)
