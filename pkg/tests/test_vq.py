"""Tests for vector quantization: assignment, losses, straight-through."""

import numpy as np
import pytest

from ndsc import numerics, vq
from ndsc.numerics import ParamSet, Tensor, backward


class TestQuantize:
    def test_nearest(self):
        cb = vq.Codebook(np.array([[0.0], [1.0]]))
        idx, code = vq.quantize([0.2], cb)
        assert idx == 0
        np.testing.assert_array_equal(code, [0.0])

    def test_tie_breaks_to_lowest_index(self):
        cb = vq.Codebook(np.array([[0.0], [1.0]]))
        idx, code = vq.quantize([0.5], cb)
        assert idx == 0
        np.testing.assert_array_equal(code, [0.0])

    def test_matches_exhaustive_scan(self):
        rng = np.random.default_rng(3)
        vectors = rng.standard_normal((16, 4))
        cb = vq.Codebook(vectors)
        for _ in range(50):
            z = rng.standard_normal(4)
            idx, code = vq.quantize(z, cb)
            # brute-force scan oracle
            dists = [np.linalg.norm(z - vectors[k]) for k in range(16)]
            assert idx == int(np.argmin(dists))
            np.testing.assert_array_equal(code, vectors[idx])

    def test_dimension_mismatch_rejected(self):
        cb = vq.Codebook(np.zeros((4, 3)))
        with pytest.raises(ValueError, match="length 3"):
            vq.quantize([1.0, 2.0], cb)

    def test_idempotent_on_code_vectors(self):
        rng = np.random.default_rng(11)
        vectors = rng.standard_normal((8, 2))
        cb = vq.Codebook(vectors)
        for k in range(8):
            idx, code = vq.quantize(vectors[k], cb)
            np.testing.assert_array_equal(code, vectors[idx])
            np.testing.assert_array_equal(
                vq.quantize(code, cb)[1], code)

    def test_never_increases_distance(self):
        rng = np.random.default_rng(12)
        vectors = rng.standard_normal((8, 3))
        cb = vq.Codebook(vectors)
        for _ in range(30):
            z = rng.standard_normal(3)
            _, code = vq.quantize(z, cb)
            d_star = np.linalg.norm(z - code)
            for k in range(8):
                assert d_star <= np.linalg.norm(z - vectors[k]) + 1e-12


class TestQuantizeBatch:
    def test_single_row_reduces_to_quantize(self):
        rng = np.random.default_rng(0)
        cb = vq.Codebook(rng.standard_normal((4, 2)))
        z = rng.standard_normal((1, 2))
        batch = vq.quantize_batch(z, cb)
        single = vq.quantize(z[0], cb)
        assert batch[0][0] == single[0]
        np.testing.assert_array_equal(batch[0][1], single[1])

    def test_equal_rows_equal_indices(self):
        rng = np.random.default_rng(1)
        cb = vq.Codebook(rng.standard_normal((8, 3)))
        z = np.tile(rng.standard_normal(3), (5, 1))
        indices = [i for i, _ in vq.quantize_batch(z, cb)]
        assert len(set(indices)) == 1

    def test_positionwise_matches_independent_calls(self):
        rng = np.random.default_rng(2)
        cb = vq.Codebook(rng.standard_normal((16, 4)))
        z = rng.standard_normal((10, 4))
        batch = vq.quantize_batch(z, cb)
        for row, (idx, code) in zip(z, batch):
            ref_idx, ref_code = vq.quantize(row, cb)
            assert idx == ref_idx
            np.testing.assert_array_equal(code, ref_code)

    def test_codebook_size_validation(self):
        with pytest.raises(ValueError, match="power of two"):
            vq.Codebook(np.zeros((3, 2)))
        with pytest.raises(ValueError, match="power of two"):
            vq.Codebook(np.zeros((1, 2)))


class TestVqLosses:
    def test_zero_when_equal(self):
        z = Tensor(np.ones((2, 3)))
        codes = Tensor(np.ones((2, 3)))
        cb_loss, commit = vq.vq_loss_terms(z, codes)
        assert cb_loss.item() == 0.0
        assert commit.item() == 0.0

    def test_unit_squared_distance(self):
        cb_loss, commit = vq.vq_loss_terms(Tensor(np.array([[1.0]])),
                                           Tensor(np.array([[0.0]])))
        assert cb_loss.item() == 1.0
        assert commit.item() == 1.0

    def test_gradient_routing(self):
        # codebook gradient comes only from the codebook loss, encoder
        # gradient only from the commitment loss
        rng = np.random.default_rng(4)
        ps = ParamSet()
        z = ps.add("z", rng.standard_normal((3, 2)))
        table = ps.add("cb", rng.standard_normal((4, 2)))
        idx = vq.assign_indices(z.data, table.data)
        codes = numerics.gather_rows(table, idx)

        cb_loss, commit = vq.vq_loss_terms(z, codes)
        ps.zero_grad()
        backward(cb_loss)
        assert np.all(ps.grad("z") == 0)
        assert np.any(ps.grad("cb") != 0)

        cb_loss, commit = vq.vq_loss_terms(z, numerics.gather_rows(table, idx))
        ps.zero_grad()
        backward(commit)
        assert np.any(ps.grad("z") != 0)
        assert np.all(ps.grad("cb") == 0)


class TestStraightThrough:
    def test_forward_equals_code(self):
        z = Tensor(np.array([[0.3, -0.7]]), requires_grad=True)
        code = np.array([[1.0, 2.0]])
        out = vq.straight_through(z, code)
        np.testing.assert_array_equal(out.data, code)

    def test_encoder_gradient_is_decoder_input_gradient(self):
        # loss = ||ST(z, code)||^2: gradient at z equals 2 * code
        ps = ParamSet()
        z = ps.add("z", np.array([[0.3, -0.7]]))
        code = np.array([[1.0, 2.0]])
        loss = numerics.sum_all(numerics.square(vq.straight_through(z, code)))
        backward(loss)
        np.testing.assert_allclose(ps.grad("z"), 2.0 * code)

    def test_zero_gradient_when_loss_ignores_st(self):
        ps = ParamSet()
        z = ps.add("z", np.array([[0.5]]))
        other = ps.add("other", np.array([[2.0]]))
        _ = vq.straight_through(z, np.array([[1.0]]))
        loss = numerics.sum_all(numerics.square(other))
        ps.zero_grad()
        backward(loss)
        assert np.all(ps.grad("z") == 0)

    def test_random_net_gradients_match_elementwise(self):
        # the gradient arriving at z through ST equals the gradient the
        # decoder input receives, checked against a plain-tensor path
        rng = np.random.default_rng(8)
        code = rng.standard_normal((4, 3))
        w = rng.standard_normal((3, 2))

        ps = ParamSet()
        z = ps.add("z", rng.standard_normal((4, 3)))
        st = vq.straight_through(z, code)
        loss = numerics.mean_all(numerics.square(
            numerics.affine(st, Tensor(w), Tensor(np.zeros(2)))))
        backward(loss)
        grad_through_st = ps.grad("z")

        ps2 = ParamSet()
        direct = ps2.add("direct", code)
        loss2 = numerics.mean_all(numerics.square(
            numerics.affine(direct, Tensor(w), Tensor(np.zeros(2)))))
        backward(loss2)
        np.testing.assert_allclose(grad_through_st, ps2.grad("direct"),
                                   atol=1e-12)
