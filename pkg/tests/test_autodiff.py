"""Tape engine tests: frozen forward values, gradients vs central differences,
replay determinism, and algebraic invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffplan import autodiff as ad
from diffplan.autodiff import (
    ContractError,
    DimensionError,
    GradientMap,
    NumericError,
    Tape,
    TapeLookupError,
    Tensor,
    backward,
    grad_check,
)


def finite_diff(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Independent central-difference oracle, scalar fn of a flat vector."""
    g = np.empty_like(x)
    for i in range(x.size):
        hi = x.copy()
        hi[i] += h
        lo = x.copy()
        lo[i] -= h
        g[i] = (fn(hi) - fn(lo)) / (2 * h)
    return g


class TestTensor:
    def test_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_constructor_copies(self):
        src = np.array([1.0, 2.0])
        t = Tensor(src)
        src[0] = 9.0
        assert t.data[0] == 1.0

    def test_int_input_promotes_to_float64(self):
        t = Tensor([1, 2, 3])
        assert t.dtype == np.float64

    def test_float32_preserved(self):
        t = Tensor(np.zeros(3, dtype=np.float32))
        assert t.dtype == np.float32

    def test_item_rejects_vectors(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()


class TestForwardValues:
    def test_conv1d_identity_sum_kernel(self):
        # Hand-derived: same-padding, kernel of ones over [1,2,3] -> [3,6,5].
        x = Tensor(np.array([[1.0, 2.0, 3.0]]))
        w = Tensor(np.ones((1, 1, 3)))
        b = Tensor(np.zeros(1))
        out = ad.conv1d(x, w, b)
        assert np.array_equal(out.data, np.array([[3.0, 6.0, 5.0]]))

    def test_conv1d_matches_numpy_correlate(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 17))
        k = rng.standard_normal(5)
        want = np.correlate(np.pad(x[0], 2), k, mode="valid")
        got = ad.conv1d(Tensor(x), Tensor(k.reshape(1, 1, 5)), Tensor(np.zeros(1)))
        assert np.allclose(got.data[0], want, atol=1e-12)

    def test_conv1d_batched_equals_sequential_bitwise(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 3, 11))
        w = Tensor(rng.standard_normal((5, 3, 3)))
        b = Tensor(rng.standard_normal(5))
        batched = ad.conv1d(Tensor(x), w, b)
        for i in range(4):
            solo = ad.conv1d(Tensor(x[i]), w, b)
            assert np.array_equal(batched.data[i], solo.data)

    def test_affine_shapes(self):
        x = Tensor(np.ones((4, 3)))
        w = Tensor(np.ones((2, 3)))
        b = Tensor(np.array([1.0, -1.0]))
        out = ad.affine(x, w, b)
        assert out.shape == (4, 2)
        assert np.array_equal(out.data, np.array([[4.0, 2.0]] * 4))

    def test_mse_value(self):
        a = Tensor([1.0, 2.0, 3.0])
        b = Tensor([1.0, 0.0, 0.0])
        assert ad.mse(a, b).item() == pytest.approx((0 + 4 + 9) / 3)

    def test_shape_mismatch_names_axis(self):
        with pytest.raises(DimensionError):
            ad.affine(Tensor(np.ones((4, 3))), Tensor(np.ones((2, 5))), Tensor(np.zeros(2)))
        with pytest.raises(DimensionError):
            ad.mse(Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_even_kernel_rejected(self):
        with pytest.raises(ContractError):
            ad.conv1d(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 1, 4))), Tensor(np.zeros(1)))


class TestBackward:
    def test_quadratic_gradient(self):
        # d/dx sum(x^2) = 2x, exact in float64.
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            out = ad.reduce_sum(ad.square(x))
        g = backward(tape, out)[x]
        assert np.allclose(g.data, [2.0, -4.0, 6.0], atol=1e-12)

    def test_constant_output_gives_zero_gradients(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = ad.reduce_sum(ad.mul(x, 0.0))
        g = backward(tape, out)[x]
        assert np.array_equal(g.data, np.zeros(2))

    def test_fan_out_accumulates(self):
        # y = sum(x*x + x) uses x twice; gradient must sum both paths.
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            out = ad.reduce_sum(ad.add(ad.mul(x, x), x))
        g = backward(tape, out)[x]
        assert g.data[0] == pytest.approx(7.0)

    def test_non_scalar_output_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = ad.square(x)
        with pytest.raises(ContractError):
            backward(tape, out)

    def test_off_tape_output_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            ad.square(x)
        stray = Tensor(0.0)
        with pytest.raises(TapeLookupError):
            backward(tape, stray)

    def test_off_tape_wrt_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        other = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            out = ad.reduce_sum(ad.square(x))
        with pytest.raises(TapeLookupError):
            backward(tape, out, wrt=[other])

    def test_conv_gradient_vs_finite_diff(self):
        rng = np.random.default_rng(7)
        x0 = rng.standard_normal((2, 9))
        w0 = rng.standard_normal((3, 2, 5))
        b0 = rng.standard_normal(3)
        tgt = rng.standard_normal((3, 9))

        w = Tensor(w0, requires_grad=True)
        b = Tensor(b0, requires_grad=True)
        x = Tensor(x0, requires_grad=True)
        with Tape() as tape:
            out = ad.mse(ad.conv1d(x, w, b), Tensor(tgt))
        grads = backward(tape, out)

        def loss_wrt(part):
            def fn(flat):
                xx, ww, bb = x0, w0, b0
                if part == "x":
                    xx = flat.reshape(x0.shape)
                elif part == "w":
                    ww = flat.reshape(w0.shape)
                else:
                    bb = flat.reshape(b0.shape)
                y = ad.conv1d(Tensor(xx), Tensor(ww), Tensor(bb))
                return ad.mse(y, Tensor(tgt)).item()
            return fn

        for part, tensor in [("x", x), ("w", w), ("b", b)]:
            fd = finite_diff(loss_wrt(part), {"x": x0, "w": w0, "b": b0}[part].reshape(-1).copy())
            adg = grads[tensor].data.reshape(-1)
            assert np.max(np.abs(adg - fd) / (np.abs(fd) + 1e-8)) < 1e-6

    def test_affine_and_reduce_gradients_vs_finite_diff(self):
        rng = np.random.default_rng(11)
        x0 = rng.standard_normal((3, 4))
        w0 = rng.standard_normal((2, 4))
        b0 = rng.standard_normal(2)

        def build(xx, ww, bb):
            y = ad.affine(Tensor(xx), Tensor(ww), Tensor(bb))
            return ad.reduce_mean(ad.square(ad.silu(y)))

        w = Tensor(w0, requires_grad=True)
        with Tape() as tape:
            y = ad.affine(Tensor(x0), w, Tensor(b0))
            out = ad.reduce_mean(ad.square(ad.silu(y)))
        adg = backward(tape, out)[w].data.reshape(-1)
        fd = finite_diff(lambda f: build(x0, f.reshape(w0.shape), b0).item(), w0.reshape(-1).copy())
        assert np.max(np.abs(adg - fd) / (np.abs(fd) + 1e-8)) < 1e-6

    def test_concat_slice_reshape_gradients(self):
        rng = np.random.default_rng(13)
        a0 = rng.standard_normal((2, 3))
        b0 = rng.standard_normal((1, 3))

        a = Tensor(a0, requires_grad=True)
        b = Tensor(b0, requires_grad=True)
        with Tape() as tape:
            cat = ad.concat([a, b], axis=0)
            part = ad.slice_axis(cat, 0, 1, 3)
            out = ad.reduce_sum(ad.square(ad.reshape(part, (6,))))
        grads = backward(tape, out)
        # Row 0 of `a` is sliced away, so its gradient is zero.
        assert np.array_equal(grads[a].data[0], np.zeros(3))
        assert np.allclose(grads[a].data[1], 2 * a0[1], atol=1e-12)
        assert np.allclose(grads[b].data, 2 * b0, atol=1e-12)

    def test_broadcast_add_gradient(self):
        x = Tensor(np.ones((2, 3, 4)), requires_grad=True)
        c = Tensor(np.ones((3, 1)), requires_grad=True)
        with Tape() as tape:
            out = ad.reduce_sum(ad.add(x, c))
        grads = backward(tape, out)
        assert grads[x].shape == (2, 3, 4)
        assert np.array_equal(grads[c].data, np.full((3, 1), 8.0))


class TestLinearity:
    @given(
        a=st.floats(-3, 3, allow_nan=False),
        b=st.floats(-3, 3, allow_nan=False),
        seed=st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=25, deadline=None)
    def test_backward_is_linear_in_the_output(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x0 = rng.standard_normal(5)

        def grad_of(scale_f, scale_g):
            x = Tensor(x0, requires_grad=True)
            with Tape() as tape:
                f = ad.reduce_sum(ad.square(x))
                g = ad.reduce_sum(ad.silu(x))
                out = ad.add(ad.mul(f, scale_f), ad.mul(g, scale_g))
            return backward(tape, out)[x].data

        combined = grad_of(a, b)
        separate = a * grad_of(1.0, 0.0) + b * grad_of(0.0, 1.0)
        assert np.allclose(combined, separate, rtol=1e-10, atol=1e-10)


class TestTape:
    def test_replay_is_bit_exact(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.standard_normal((3, 7)), requires_grad=True)
        w = Tensor(rng.standard_normal((4, 3, 3)))
        b = Tensor(rng.standard_normal(4))
        with Tape() as tape:
            h = ad.silu(ad.conv1d(x, w, b))
            ad.reduce_mean(ad.square(h))
        assert tape.replay()

    def test_two_identical_passes_agree_bitwise(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 5)))
        w = Tensor(rng.standard_normal((2, 2, 3)))
        b = Tensor(rng.standard_normal(2))

        def run():
            return ad.reduce_sum(ad.silu(ad.conv1d(x, w, b))).data.copy()

        assert np.array_equal(run(), run())

    def test_nested_tapes_isolate_recording(self):
        x = Tensor([2.0], requires_grad=True)
        with Tape() as outer:
            ad.square(x)
            with Tape() as inner:
                ad.mul(x, 3.0)
            assert len(inner) == 1
        assert len(outer) == 1

    def test_no_active_tape_records_nothing(self):
        before = ad.active_tape()
        out = ad.square(Tensor([2.0]))
        assert np.array_equal(out.data, [4.0])
        assert ad.active_tape() is before


class TestGradCheck:
    def test_quadratic_tight(self):
        rng = np.random.default_rng(5)
        p = Tensor(rng.standard_normal(6))
        err = grad_check(lambda x: ad.reduce_sum(ad.square(x)), p)
        assert err < 1e-5

    def test_linear_is_near_exact(self):
        rng = np.random.default_rng(6)
        c = Tensor(rng.standard_normal(6))
        p = Tensor(rng.standard_normal(6))
        err = grad_check(lambda x: ad.reduce_sum(ad.mul(x, c)), p)
        assert err < 1e-7

    def test_non_finite_raises(self):
        p = Tensor([0.0])
        with pytest.raises(NumericError):
            grad_check(lambda x: ad.reduce_sum(ad.reciprocal(ad.square(x))), p)


class TestGradientMap:
    def test_lookup_by_identity(self):
        x = Tensor([1.0], requires_grad=True)
        y = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            out = ad.reduce_sum(ad.mul(x, y))
        grads = backward(tape, out)
        assert x in grads and y in grads
        twin = Tensor([1.0])
        assert twin not in grads
        with pytest.raises(TapeLookupError):
            grads[twin]

    def test_every_requested_tensor_has_entry(self):
        x = Tensor([1.0], requires_grad=True)
        unused = Tensor([5.0], requires_grad=True)
        with Tape() as tape:
            ad.mul(unused, 0.0)
            out = ad.reduce_sum(ad.square(x))
        grads = backward(tape, out, wrt=[x, unused])
        assert np.array_equal(grads[unused].data, np.zeros(1))
        assert len(grads) == 2
        assert isinstance(grads, GradientMap)
