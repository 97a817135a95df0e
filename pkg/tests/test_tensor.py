import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check_op, numeric_grad, rel_error
from mfno import tensor as T
from mfno.errors import ShapeError
from mfno.tensor import GradTape, Tensor


def rand(shape, seed=0, dtype=np.float64):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), dtype=dtype)


class TestTensorType:
    def test_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.numpy()[0] = 5.0

    def test_default_precision_is_f32(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_astype_round_trip(self):
        t = rand((3, 2))
        assert t.astype(np.float32).astype(np.float64).dtype == np.float64

    def test_init_copies(self):
        src = np.zeros(4)
        t = Tensor(src)
        src[0] = 9.0
        assert t.numpy()[0] == 0.0


class TestAdd:
    def test_additive_identity(self):
        out = T.elementwise_add(Tensor([1.0, 2.0]), Tensor([0.0, 0.0]))
        np.testing.assert_array_equal(out.numpy(), [1.0, 2.0])

    def test_hand_sum(self):
        out = T.elementwise_add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
        np.testing.assert_array_equal(out.numpy(), [4.0, 6.0])

    def test_shape_mismatch_reports_dimensions(self):
        with pytest.raises(ShapeError, match=r"\(2,\).*\(3,\)"):
            T.elementwise_add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_gradient_vs_finite_differences(self):
        a, b = rand((4, 4, 4), 1), rand((4, 4, 4), 2)
        check_op(lambda x, y, tape: T.elementwise_add(x, y, tape), [a, b])

    def test_sub_gradient(self):
        a, b = rand((3, 5), 3), rand((3, 5), 4)
        check_op(lambda x, y, tape: T.elementwise_sub(x, y, tape), [a, b])


class TestChannelLinear:
    def test_shape_matches_architecture_row(self):
        x = rand((32, 32, 28, 7), dtype=np.float32)
        w = rand((7, 16), dtype=np.float32)
        b = Tensor(np.zeros(16, dtype=np.float32))
        assert T.channel_linear(x, w, b).shape == (32, 32, 28, 16)

    def test_identity_map(self):
        x = rand((4, 5, 3))
        out = T.channel_linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.numpy(), x.numpy(), rtol=0, atol=0)

    def test_against_per_location_matmul_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 2, 3))
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(4)
        out = T.channel_linear(Tensor(x, np.float64), Tensor(w, np.float64), Tensor(b, np.float64))
        expected = np.empty((2, 2, 4))
        for i in range(2):
            for j in range(2):
                for o in range(4):
                    acc = b[o]
                    for c in range(3):
                        acc += x[i, j, c] * w[c, o]
                    expected[i, j, o] = acc
        # summation order differs from BLAS; agreement to a few ulps
        np.testing.assert_allclose(out.numpy(), expected, rtol=1e-14, atol=0)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError, match="channel"):
            T.channel_linear(rand((2, 3)), rand((4, 5)), Tensor(np.zeros(5)))

    def test_gradients(self):
        x, w, b = rand((3, 2, 4), 5), rand((4, 3), 6), rand((3,), 7)
        check_op(lambda *a: T.channel_linear(*a), [x, w, b])


class TestGelu:
    def test_zero_maps_to_zero(self):
        assert T.gelu(Tensor([0.0])).numpy()[0] == 0.0

    def test_saturates_to_identity(self):
        np.testing.assert_allclose(T.gelu(Tensor([10.0], np.float64)).numpy(), [10.0], rtol=1e-7)

    def test_negative_tail_vanishes(self):
        assert abs(T.gelu(Tensor([-10.0], np.float64)).numpy()[0]) < 1e-8

    def test_derivative_vs_finite_differences(self):
        x = Tensor(np.linspace(-4.0, 4.0, 33), np.float64)
        check_op(lambda a, tape: T.gelu(a, tape), [x])


class TestPad:
    def test_architecture_row_low_fidelity(self):
        x = rand((32, 32, 28, 16), dtype=np.float32)
        assert T.pad_spatial(x, (6, 6, 6)).shape == (44, 44, 40, 16)

    def test_architecture_row_high_fidelity(self):
        x = rand((64, 64, 28, 16), dtype=np.float32)
        assert T.pad_spatial(x, (6, 6, 6)).shape == (76, 76, 40, 16)

    def test_zero_pad_is_identity(self):
        x = rand((3, 4, 2))
        np.testing.assert_array_equal(T.pad_spatial(x, (0, 0)).numpy(), x.numpy())

    def test_negative_pad_rejected(self):
        with pytest.raises(ShapeError, match="negative"):
            T.pad_spatial(rand((3, 4)), (-1,))

    @settings(max_examples=25, deadline=None)
    @given(
        shape=st.tuples(*[st.integers(1, 5)] * 3),
        pads=st.tuples(st.integers(0, 3), st.integers(0, 3)),
    )
    def test_pad_then_crop_is_identity(self, shape, pads):
        x = Tensor(np.random.default_rng(0).standard_normal(shape))
        out = T.crop_spatial(T.pad_spatial(x, pads), pads)
        np.testing.assert_array_equal(out.numpy(), x.numpy())

    def test_pad_gradient(self):
        check_op(lambda a, tape: T.pad_spatial(a, (2, 1), tape), [rand((3, 4, 2), 8)])

    def test_crop_gradient(self):
        check_op(lambda a, tape: T.crop_spatial(a, (1, 1), tape), [rand((5, 4, 2), 9)])


class TestLpNorm:
    def test_pythagorean(self):
        assert T.lp_norm(Tensor([3.0, 4.0], np.float64), 2).item() == 5.0

    def test_l1_sum_of_magnitudes(self):
        assert T.lp_norm(Tensor([1.0, -1.0, 1.0], np.float64), 1).item() == 3.0

    def test_against_naive_accumulation(self):
        x = np.random.default_rng(11).standard_normal((5, 6, 7))
        got = T.lp_norm(Tensor(x, np.float64), 2).item()
        acc = 0.0
        for v in x.ravel():
            acc += v * v
        assert abs(got - acc**0.5) / acc**0.5 < 1e-12

    def test_p_below_one_rejected(self):
        with pytest.raises(ShapeError):
            T.lp_norm(Tensor([1.0]), 0.5)

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
    def test_gradient(self, p):
        x = Tensor(np.random.default_rng(13).standard_normal(24) + 0.5, np.float64)
        check_op(lambda a, tape: T.lp_norm(a, p, None, tape), [x])

    def test_axis_reduced_gradient(self):
        x = rand((3, 4, 5), 14)
        check_op(lambda a, tape: T.lp_norm(a, 2, (1, 2), tape), [x])

    def test_zero_vector_gradient_is_zero(self):
        x = Tensor(np.zeros(4), np.float64)
        tape = GradTape()
        out = T.lp_norm(x, 2, None, tape)
        (g,) = tape.gradients(out, np.asarray(1.0), [x])
        np.testing.assert_array_equal(g, np.zeros(4))


class TestSmallPrimitives:
    def test_scale_gradient(self):
        check_op(lambda a, tape: T.scale(a, 2.5, tape), [rand((4, 3), 15)])

    def test_scale_by_vector(self):
        x = rand((3, 4), 16)
        f = np.array([[1.0], [2.0], [3.0]])
        check_op(lambda a, tape: T.scale(a, f, tape), [x])

    def test_concat_gradient(self):
        a, b = rand((2, 3, 2), 17), rand((2, 3, 4), 18)
        check_op(lambda x, y, tape: T.concat_channels(x, y, tape), [a, b])

    def test_mean_all_gradient(self):
        check_op(lambda a, tape: T.mean_all(a, tape), [rand((6, 2), 19)])


class TestTape:
    def test_reverse_order_replay(self):
        order = []
        tape = GradTape()
        a = Tensor([1.0], np.float64)

        def mk(tag, src):
            out = Tensor(src.numpy() * 2.0, np.float64)
            tape.record(out, (src,), lambda g, tag=tag: (order.append(tag), g * 2.0)[1:])
            return out

        b = mk("first", a)
        c = mk("second", b)
        tape.gradients(c, np.asarray([1.0]), [a])
        assert order == ["second", "first"]

    def test_untouched_tensor_gets_none(self):
        tape = GradTape()
        a, b = Tensor([1.0], np.float64), Tensor([2.0], np.float64)
        out = T.scale(a, 3.0, tape)
        grads = tape.gradients(out, np.asarray([1.0]), [a, b])
        assert grads[1] is None

    def test_fanout_accumulates(self):
        tape = GradTape()
        a = rand((3,), 20)
        out = T.elementwise_add(a, a, tape)
        (g,) = tape.gradients(out, np.ones(3), [a])
        np.testing.assert_array_equal(g, 2.0 * np.ones(3))

    def test_seed_shape_mismatch_rejected(self):
        tape = GradTape()
        a = rand((3,), 21)
        out = T.scale(a, 1.0, tape)
        with pytest.raises(ShapeError):
            tape.gradients(out, np.ones(4), [a])


class TestPurityAndFiniteness:
    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_chained_ops_leave_inputs_intact_and_finite(self, seed):
        rng = np.random.default_rng(seed)
        x_src = rng.standard_normal((4, 3, 2)).astype(np.float32)
        x = Tensor(x_src)
        w = Tensor(rng.standard_normal((2, 5)).astype(np.float32))
        b = Tensor(rng.standard_normal(5).astype(np.float32))
        out = T.gelu(T.channel_linear(T.pad_spatial(x, (1, 0)), w, b))
        np.testing.assert_array_equal(x.numpy(), x_src)
        assert np.isfinite(out.numpy()).all()

    def test_float32_gradcheck_loose_tolerance(self):
        x = Tensor(np.random.default_rng(3).standard_normal((4, 4)), np.float32)
        w = Tensor(np.random.default_rng(4).standard_normal((4, 4)), np.float32)
        b = Tensor(np.zeros(4), np.float32)
        tape = GradTape()
        out = T.gelu(T.channel_linear(x, w, b, tape), tape)
        up = np.ones(out.shape, np.float32)
        g = tape.gradients(out, up, [w])[0]
        num = numeric_grad(
            lambda a: T.gelu(
                T.channel_linear(x.astype(np.float64), Tensor(a, np.float64), b.astype(np.float64))
            ).numpy(),
            w.numpy().astype(np.float64),
            up.astype(np.float64),
        )
        assert rel_error(g, num) < 1e-3
