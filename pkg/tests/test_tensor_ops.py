"""Forward semantics of the tensor ops against naive oracles and identities."""

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gsan import tensor as tz
from gsan.tensor import FiniteError, ShapeError, Tensor

from oracles import causal_conv_direct, matmul_loops


class TestMatmul:
    def test_identity(self):
        m = np.arange(9.0).reshape(3, 3)
        out = tz.matmul(Tensor(np.eye(3)), Tensor(m))
        npt.assert_array_equal(out.data, m)

    def test_scalar_cells(self):
        out = tz.matmul(Tensor([[2.0]]), Tensor([[3.0]]))
        assert out.data[0, 0] == 6.0

    def test_against_triple_loop(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(5, 4))
        b = rng.normal(size=(4, 3))
        out = tz.matmul(Tensor(a), Tensor(b))
        npt.assert_allclose(out.data, matmul_loops(a, b), atol=1e-12, rtol=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tz.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestElementwise:
    def test_leaky_relu_fixed_slope(self):
        out = tz.leaky_relu(Tensor([-1.0]), 0.2)
        npt.assert_allclose(out.data, [-0.2])

    def test_sigmoid_at_zero(self):
        assert tz.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_mul(self):
        out = tz.mul(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        npt.assert_array_equal(out.data, [3.0, 8.0])

    def test_row_broadcast(self):
        a = np.ones((3, 2))
        out = tz.add(Tensor(a), Tensor([1.0, 2.0]))
        npt.assert_array_equal(out.data, a + np.array([1.0, 2.0]))

    def test_bad_broadcast(self):
        with pytest.raises(ShapeError):
            tz.add(Tensor(np.ones((3, 2))), Tensor(np.ones(3)))

    def test_softplus_positive(self):
        x = np.linspace(-20, 20, 11)
        out = tz.softplus(Tensor(x))
        npt.assert_allclose(out.data, np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0))
        assert (out.data > 0).all()

    def test_elu_matches_definition(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        out = tz.elu(Tensor(x))
        npt.assert_allclose(out.data, np.where(x > 0, x, np.expm1(x)))

    def test_nonfinite_is_an_error(self):
        with pytest.raises(FiniteError):
            tz.exp(Tensor([1000.0]))


class TestSegmentSoftmax:
    def test_two_equal_scores(self):
        out = tz.segment_softmax(Tensor([0.0, 0.0]), np.array([0, 0]), 1)
        npt.assert_allclose(out.data, [0.5, 0.5])

    def test_single_edge_segment(self):
        out = tz.segment_softmax(Tensor([3.7]), np.array([0]), 1)
        npt.assert_allclose(out.data, [1.0])

    def test_ln2_analytic(self):
        out = tz.segment_softmax(Tensor([np.log(2.0), 0.0]), np.array([0, 0]), 1)
        npt.assert_allclose(out.data, [2 / 3, 1 / 3], atol=1e-15)

    def test_empty_scores_valid(self):
        out = tz.segment_softmax(Tensor(np.zeros(0)), np.zeros(0, dtype=np.int64), 3)
        assert out.data.shape == (0,)

    @given(st.integers(1, 5), st.integers(1, 40), st.integers(0, 2 ** 31 - 1))
    @settings(deadline=None, max_examples=50)
    def test_sums_and_shift_invariance(self, n_seg, n_edges, seed):
        rng = np.random.default_rng(seed)
        seg = rng.integers(0, n_seg, size=n_edges)
        scores = rng.normal(scale=3.0, size=n_edges)
        out = tz.segment_softmax(Tensor(scores), seg, n_seg).data
        sums = np.zeros(n_seg)
        np.add.at(sums, seg, out)
        for s in range(n_seg):
            if (seg == s).any():
                assert abs(sums[s] - 1.0) <= 1e-9
        assert (out > 0).all() and (out <= 1.0).all()
        # adding a per-segment constant leaves the result unchanged
        shift = rng.normal(size=n_seg)
        out2 = tz.segment_softmax(Tensor(scores + shift[seg]), seg, n_seg).data
        npt.assert_allclose(out2, out, atol=1e-9)


class TestConcat:
    def test_axis0(self):
        out = tz.concat([Tensor([1.0]), Tensor([2.0])], axis=0)
        npt.assert_array_equal(out.data, [1.0, 2.0])

    def test_single_tensor_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        npt.assert_array_equal(tz.concat([Tensor(x)], axis=1).data, x)

    def test_index_map_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(2, 3))
        b = rng.normal(size=(2, 5))
        out = tz.concat([Tensor(a), Tensor(b)], axis=1).data
        assert out.shape == (2, 8)
        for i in range(2):
            for j in range(8):
                expect = a[i, j] if j < 3 else b[i, j - 3]
                assert out[i, j] == expect

    def test_mismatched_non_axis_dims(self):
        with pytest.raises(ShapeError):
            tz.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))], axis=1)


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        out = tz.dropout(Tensor(x), 0.0, np.random.default_rng(0), training=True)
        npt.assert_array_equal(out.data, x)

    def test_eval_mode_identity(self):
        x = np.arange(12.0).reshape(3, 4)
        out = tz.dropout(Tensor(x), 0.6, np.random.default_rng(0), training=False)
        npt.assert_array_equal(out.data, x)

    def test_survivor_statistics(self):
        # statistical oracle under a fixed seed: survival fraction and scale
        rng = np.random.default_rng(123)
        x = np.ones(100_000)
        out = tz.dropout(Tensor(x), 0.6, rng, training=True).data
        survivors = out != 0.0
        assert abs(survivors.mean() - 0.4) < 0.01
        npt.assert_allclose(out[survivors].mean(), 1.0 / 0.4, rtol=0.01)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            tz.dropout(Tensor([1.0]), 1.0, np.random.default_rng(0), training=True)


class TestCausalConv:
    def test_width_one_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 2))
        out = tz.causal_conv1d_depthwise(Tensor(x), Tensor(np.ones((2, 1))),
                                         Tensor(np.zeros(2)))
        npt.assert_allclose(out.data, x)

    def test_impulse_response(self):
        x = np.zeros((4, 1))
        x[0, 0] = 1.0
        kernel = np.array([[0.3, 0.7]])  # [a, b] -> impulse gives [b, a, 0, 0]
        out = tz.causal_conv1d_depthwise(Tensor(x), Tensor(kernel), Tensor(np.zeros(1)))
        npt.assert_allclose(out.data[:, 0], [0.7, 0.3, 0.0, 0.0])

    def test_against_direct_summation(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(7, 3))
        kernel = rng.normal(size=(3, 4))
        bias = rng.normal(size=3)
        out = tz.causal_conv1d_depthwise(Tensor(x), Tensor(kernel), Tensor(bias))
        npt.assert_allclose(out.data, causal_conv_direct(x, kernel, bias),
                            atol=1e-12, rtol=0)

    def test_kernel_wider_than_sequence(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(2, 2))
        kernel = rng.normal(size=(2, 5))
        bias = rng.normal(size=2)
        out = tz.causal_conv1d_depthwise(Tensor(x), Tensor(kernel), Tensor(bias))
        npt.assert_allclose(out.data, causal_conv_direct(x, kernel, bias), atol=1e-12)

    @given(st.integers(2, 10), st.integers(1, 3), st.integers(1, 5),
           st.integers(0, 2 ** 31 - 1))
    @settings(deadline=None, max_examples=30)
    def test_causality(self, t_len, d, k, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(t_len, d))
        kernel = rng.normal(size=(d, k))
        bias = rng.normal(size=d)
        base = tz.causal_conv1d_depthwise(Tensor(x), Tensor(kernel), Tensor(bias)).data
        t_cut = rng.integers(0, t_len - 1)
        x2 = x.copy()
        x2[t_cut + 1:] += rng.normal(size=(t_len - t_cut - 1, d))
        changed = tz.causal_conv1d_depthwise(Tensor(x2), Tensor(kernel), Tensor(bias)).data
        npt.assert_array_equal(base[:t_cut + 1], changed[:t_cut + 1])


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        def run(seed):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.normal(size=(20, 10)))
            w = Tensor(rng.normal(size=(10, 4)))
            h = tz.dropout(tz.matmul(x, w), 0.5, rng, training=True)
            return tz.sigmoid(h).data

        npt.assert_array_equal(run(42), run(42))
