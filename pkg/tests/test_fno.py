import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from mfno.errors import ShapeError
from mfno.fno import FnoConfig, backward, forward, init_params, zero_params
from mfno.spectral import trig_interpolate
from mfno.tensor import GradTape, Tensor

TINY = FnoConfig(
    in_channels=2, width=3, n_layers=1, modes=(2, 2, 2), padding=1, precision="f64"
)


def rand_input(shape, seed=0, dtype=np.float64):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), dtype=dtype)


class TestInit:
    def test_same_seed_bitwise_identical(self):
        a = init_params(TINY, seed=42)
        b = init_params(TINY, seed=42)
        for (na, ta), (nb, tb) in zip(a.named_arrays(), b.named_arrays()):
            assert na == nb
            np.testing.assert_array_equal(ta, tb)

    def test_different_seeds_differ(self):
        a = init_params(TINY, seed=0)
        b = init_params(TINY, seed=1)
        assert not np.array_equal(a.lift_w.array, b.lift_w.array)

    def test_spectral_magnitudes_match_disc_distribution(self):
        # uniform on a disc of radius R: E|z| = 2R/3
        config = FnoConfig(
            in_channels=2, width=4, n_layers=2, modes=(5, 5, 4), padding=1
        )
        params = init_params(config, seed=7)
        mags = np.concatenate(
            [np.abs(l.spectral.values.array).ravel() for l in params.layers]
        )
        assert mags.size >= 10_000
        radius = 1.0 / (config.width * config.width)
        expected = 2.0 * radius / 3.0
        assert abs(mags.mean() - expected) / expected < 0.10

    def test_biases_start_at_zero(self):
        params = init_params(TINY, seed=3)
        assert not params.lift_b.array.any()
        assert not params.proj_b.array.any()


class TestForwardShapes:
    CONFIG = FnoConfig()  # width 16, 4 layers, modes (20, 20, 10), padding 6

    def test_reference_architecture_rows_low_res(self):
        params = init_params(self.CONFIG, seed=0)
        trace = []
        out = forward(params, rand_input((32, 32, 28, 4), dtype=np.float32), self.CONFIG, shape_trace=trace)
        assert out.shape == (32, 32, 28, 1)
        stages = dict(trace)
        assert stages["lift"] == (32, 32, 28, 16)
        assert stages["pad"] == (44, 44, 40, 16)
        for i in range(1, 5):
            assert stages[f"fourier{i}"] == (44, 44, 40, 16)
        assert stages["depad"] == (32, 32, 28, 16)
        assert stages["project"] == (32, 32, 28, 1)

    def test_reference_architecture_rows_high_res_same_params(self):
        params = init_params(self.CONFIG, seed=0)
        trace = []
        out = forward(params, rand_input((64, 64, 28, 4), dtype=np.float32), self.CONFIG, shape_trace=trace)
        assert out.shape == (64, 64, 28, 1)
        stages = dict(trace)
        assert stages["pad"] == (76, 76, 40, 16)
        assert stages["fourier4"] == (76, 76, 40, 16)

    def test_zero_params_give_zero_output(self):
        config = TINY
        out = forward(zero_params(config), rand_input((8, 8, 8, 2)), config)
        np.testing.assert_array_equal(out.numpy(), np.zeros(out.shape))

    def test_batched_forward_matches_per_sample(self):
        config = TINY
        params = init_params(config, seed=5)
        xb = rand_input((3, 8, 8, 8, 2), seed=6)
        got = forward(params, xb, config).numpy()
        for i in range(3):
            single = forward(params, Tensor(xb.numpy()[i], np.float64), config).numpy()
            np.testing.assert_allclose(got[i], single, rtol=1e-12, atol=1e-14)

    def test_modes_too_large_rejected_with_minimum(self):
        config = FnoConfig(in_channels=2, width=3, n_layers=1, modes=(8, 2, 2), padding=0)
        with pytest.raises(ShapeError, match="extent >= 16"):
            forward(init_params(config, 0), rand_input((8, 8, 8, 2)), config)

    def test_channel_mismatch_rejected(self):
        with pytest.raises(ShapeError, match="channels"):
            forward(init_params(TINY, 0), rand_input((8, 8, 8, 5)), TINY)

    def test_forward_deterministic(self):
        params = init_params(TINY, seed=1)
        x = rand_input((8, 8, 8, 2), seed=2)
        a = forward(params, x, TINY).numpy()
        b = forward(params, x, TINY).numpy()
        np.testing.assert_array_equal(a, b)


class TestGridInvariance:
    def test_structural_one_param_set_any_grid(self):
        params = init_params(TINY, seed=9)
        shapes = set()
        for grid in [(8, 8, 8), (12, 8, 8), (16, 16, 12)]:
            out = forward(params, rand_input(grid + (2,), seed=1), TINY)
            assert out.shape == grid + (1,)
            shapes.add(tuple(a.shape for _, a in params.named_arrays()))
        assert len(shapes) == 1  # parameter shapes never depend on the grid

    def test_functional_linearized(self):
        # identity activation, zeroed pointwise path, no padding: refining the
        # grid commutes with the operator on band-limited input
        config = FnoConfig(
            in_channels=2,
            width=3,
            n_layers=2,
            modes=(3, 3, 2),
            padding=0,
            activation="identity",
            precision="f64",
        )
        params = init_params(config, seed=11)
        zeros = {}
        for name, arr in params.named_arrays():
            if "linear" in name or name.endswith(".bias"):
                zeros[name] = np.zeros_like(arr)
        lift = params.lift_w.array.copy()
        lift[config.in_channels :] = 0.0  # coordinate rows are not band-limited
        zeros["lift.weight"] = lift
        params = params.replace_arrays(zeros)

        coarse = (12, 12, 8)
        fine = (24, 24, 16)
        rng = np.random.default_rng(12)
        # band-limited input: mirror-closed sub-band of the kept modes
        spec = np.zeros((12, 12, 5, 2), dtype=np.complex128)
        for sx in (slice(0, 3), slice(-2, None)):
            for sy in (slice(0, 3), slice(-2, None)):
                w = 3 if sx.start == 0 else 2
                h = 3 if sy.start == 0 else 2
                spec[sx, sy, :2, :] = rng.standard_normal(
                    (w, h, 2, 2)
                ) + 1j * rng.standard_normal((w, h, 2, 2))
        from mfno.spectral import dft_inverse
        from mfno.tensor import ComplexTensor

        x_coarse = dft_inverse(ComplexTensor(spec), axes=(0, 1, 2), extents=coarse)
        x_fine = trig_interpolate(x_coarse, fine, axes=(0, 1, 2))

        out_coarse = forward(params, x_coarse, config)
        out_fine = forward(params, x_fine, config)
        interp = trig_interpolate(out_coarse, fine, axes=(0, 1, 2))
        assert rel_error(interp.numpy(), out_fine.numpy()) < 1e-5


class TestBackward:
    def test_zero_upstream_gives_zero_grads(self):
        params = init_params(TINY, seed=13)
        x = rand_input((8, 8, 8, 2), seed=14)
        up = np.zeros((8, 8, 8, 1))
        grads, gx = backward(params, x, TINY, up)
        assert set(grads) == {name for name, _ in params.named_arrays()}
        for g in grads.values():
            assert not np.abs(g).any()
        assert not np.abs(gx).any()

    def test_frozen_names_absent(self):
        params = init_params(TINY, seed=15)
        x = rand_input((8, 8, 8, 2), seed=16)
        up = np.ones((8, 8, 8, 1))
        keep = {"project.weight", "project.bias"}
        grads, _ = backward(params, x, TINY, up, trainable=keep)
        assert set(grads) == keep

    def test_full_gradcheck_tiny_model(self):
        config = FnoConfig(
            in_channels=2, width=2, n_layers=1, modes=(2, 2, 1), padding=1, precision="f64"
        )
        params = init_params(config, seed=17)
        x = rand_input((4, 4, 4, 2), seed=18)
        rng = np.random.default_rng(19)
        up = rng.standard_normal((4, 4, 4, 1))
        grads, gx = backward(params, x, config, up)
        for name, tens in params.named_tensors():
            def f(arr, name=name):
                return forward(params.replace_arrays({name: arr}), x, config).numpy()

            num = numeric_grad(f, tens.numpy(), up)
            err = rel_error(grads[name], num)
            assert err < 1e-6, f"{name}: rel err {err:.2e}"
        num_x = numeric_grad(lambda a: forward(params, Tensor(a, np.float64), config).numpy(), x.numpy(), up)
        assert rel_error(gx, num_x) < 1e-6

    def test_param_shapes_survive_grid_change(self):
        params = init_params(TINY, seed=20)
        for grid in [(8, 8, 8), (16, 12, 8)]:
            up = np.ones(grid + (1,))
            grads, _ = backward(params, rand_input(grid + (2,), seed=3), TINY, up)
            for name, arr in params.named_arrays():
                assert grads[name].shape == arr.shape
