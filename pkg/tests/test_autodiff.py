"""Tensor-graph unit tests.

Every differentiable operation is checked two ways: analytic gradients
against central finite differences of the same scalar loss, and the
convolution forward pass against an independent quadruple-loop oracle.
Worked examples with hand-computable answers pin the conventions (reduction
denominators, gate order, padding-free output sizes).
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import crnndenoise.autodiff as ad
from crnndenoise.autodiff import Graph, LstmParams, Tensor
from crnndenoise.errors import DimensionError

# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def finite_difference(loss_fn, tensors, h=1e-6):
    """Central-difference gradient of ``loss_fn()`` w.r.t. each tensor."""
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        g = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(loss_fn().data)
            flat[i] = orig - h
            lo = float(loss_fn().data)
            flat[i] = orig
            g[i] = (hi - lo) / (2.0 * h)
        grads.append(g.reshape(t.data.shape))
    return grads


def conv2d_reference(x, kernels, bias, stride, dilation):
    """Quadruple-loop valid cross-correlation; no shared code with the
    vectorized implementation under test."""
    c_in, in_h, in_w = x.shape
    c_out, _, k_h, k_w = kernels.shape
    s_h, s_w = stride
    d_h, d_w = dilation
    out_h = (in_h - ((k_h - 1) * d_h + 1)) // s_h + 1
    out_w = (in_w - ((k_w - 1) * d_w + 1)) // s_w + 1
    out = np.zeros((c_out, out_h, out_w))
    for co in range(c_out):
        for oy in range(out_h):
            for ox in range(out_w):
                acc = 0.0
                for ci in range(c_in):
                    for ky in range(k_h):
                        for kx in range(k_w):
                            acc += (
                                x[ci, oy * s_h + ky * d_h, ox * s_w + kx * d_w]
                                * kernels[co, ci, ky, kx]
                            )
                out[co, oy, ox] = acc + bias[co]
    return out


def leaf(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


def assert_matches_fd(loss_fn, tensors, tol=1e-6):
    """Backward pass once, then compare every leaf gradient to central
    finite differences."""
    for t in tensors:
        t.zero_grad()
    with Graph() as g:
        loss = loss_fn()
    ad.backward(loss, g)
    fd = finite_difference(loss_fn, tensors)
    for t, ref in zip(tensors, fd):
        assert t.grad is not None
        scale = max(1.0, float(np.abs(ref).max()))
        err = float(np.abs(t.grad - ref).max()) / scale
        assert err < tol, f"gradient mismatch {err:.3g}"


# ---------------------------------------------------------------------------
# elementwise and linear-algebra gradients
# ---------------------------------------------------------------------------


def test_square_at_three_has_gradient_six():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with Graph() as g:
        y = ad.sum_all(ad.mul(x, x))
    ad.backward(y, g)
    assert x.grad == pytest.approx([6.0])


@pytest.mark.parametrize(
    "name,op",
    [
        ("add", ad.add),
        ("sub", ad.sub),
        ("mul", ad.mul),
    ],
)
def test_binary_elementwise_gradients(rng, name, op):
    a = leaf(rng, 3, 4)
    b = leaf(rng, 3, 4)
    w = rng.standard_normal((3, 4))

    def loss():
        return ad.sum_all(ad.mul(op(a, b), Tensor(w)))

    assert_matches_fd(loss, [a, b])


@pytest.mark.parametrize(
    "name,op,shift",
    [
        ("neg", ad.neg, 0.0),
        ("relu", ad.relu, 0.5),  # keep inputs away from the kink
        ("sigmoid", ad.sigmoid, 0.0),
        ("tanh", ad.tanh, 0.0),
        ("softplus", ad.softplus, 0.0),
    ],
)
def test_unary_elementwise_gradients(rng, name, op, shift):
    base = rng.standard_normal((2, 5))
    base += np.sign(base) * shift
    a = Tensor(base, requires_grad=True, dtype=np.float64)
    w = rng.standard_normal((2, 5))

    def loss():
        return ad.sum_all(ad.mul(op(a), Tensor(w)))

    assert_matches_fd(loss, [a])


def test_scale_and_reshape_and_matmul_gradients(rng):
    a = leaf(rng, 2, 6)
    b = leaf(rng, 3, 4)
    w = rng.standard_normal((4, 4))

    def loss():
        prod = ad.matmul(ad.reshape(ad.scale(a, 1.7), (4, 3)), b)
        return ad.sum_all(ad.mul(prod, Tensor(w)))

    assert_matches_fd(loss, [a, b])


def test_row_narrow_stack_gradients(rng):
    m = leaf(rng, 4, 6)
    v = leaf(rng, 6)
    w = rng.standard_normal((2, 3))

    def loss():
        r0 = ad.narrow(ad.row(m, 1), 1, 3)
        r1 = ad.narrow(v, 2, 3)
        return ad.sum_all(ad.mul(ad.stack_rows([r0, r1]), Tensor(w)))

    assert_matches_fd(loss, [m, v])


def test_add_rowvec_gradients(rng):
    m = leaf(rng, 3, 5)
    v = leaf(rng, 5)
    w = rng.standard_normal((3, 5))

    def loss():
        return ad.sum_all(ad.mul(ad.add_rowvec(m, v), Tensor(w)))

    assert_matches_fd(loss, [m, v])


def test_softplus_is_strictly_positive(rng):
    a = Tensor(rng.standard_normal((3, 7)) * 20.0)
    out = ad.softplus(a)
    assert np.all(out.data > 0)
    assert np.all(np.isfinite(out.data))


def test_matmul_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_stack_rows_rejects_unequal_lengths():
    with pytest.raises(DimensionError):
        ad.stack_rows([Tensor(np.zeros(3)), Tensor(np.zeros(4))])


# ---------------------------------------------------------------------------
# reductions and losses
# ---------------------------------------------------------------------------


def test_mse_divides_by_leading_extent():
    # two scalar rows: (1 + 4) / 2
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Graph() as g:
        loss = ad.mse_loss(p, np.zeros(2))
    ad.backward(loss, g)
    assert float(loss.data) == pytest.approx(2.5)
    assert p.grad == pytest.approx([1.0, 2.0])


def test_mse_single_frame_sums_over_bins():
    loss = ad.mse_loss(Tensor(np.array([[1.0, 1.0]])), np.zeros((1, 2)))
    assert float(loss.data) == 2.0


def test_mse_zero_when_equal(rng):
    x = rng.standard_normal((5, 3))
    assert float(ad.mse_loss(Tensor(x), x.copy()).data) == 0.0


def test_mse_rejects_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.mse_loss(Tensor(np.zeros((2, 3))), np.zeros((3, 2)))


def test_mse_gradient_matches_fd(rng):
    p = leaf(rng, 4, 3)
    target = rng.standard_normal((4, 3))

    def loss():
        return ad.mse_loss(p, target)

    assert_matches_fd(loss, [p])


def test_cross_entropy_uniform_logits_is_log_vocab():
    logits = Tensor(np.zeros((3, 857)))
    ce = float(ad.cross_entropy(logits, [0, 17, 856]).data)
    assert ce == pytest.approx(math.log(857.0), abs=1e-12)


def test_cross_entropy_small_case_matches_hand_value():
    # softmax rows of [[1,0,0],[0,2,0]] scored at ids [0,1]
    logits = Tensor(np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]]))
    ce = float(ad.cross_entropy(logits, [0, 1]).data)
    assert ce == pytest.approx(0.39549474007696783, abs=1e-12)


def test_cross_entropy_large_margin_is_tiny():
    logits = np.zeros((4, 8))
    ids = [1, 2, 3, 4]
    logits[np.arange(4), ids] = 30.0
    ce = float(ad.cross_entropy(Tensor(logits), ids).data)
    assert 0.0 <= ce < 1e-9


def test_cross_entropy_is_shift_invariant(rng):
    raw = rng.standard_normal((5, 9))
    ids = [0, 3, 8, 1, 2]
    a = float(ad.cross_entropy(Tensor(raw), ids).data)
    b = float(ad.cross_entropy(Tensor(raw + 1000.0), ids).data)
    assert a == pytest.approx(b, abs=1e-9)
    assert math.isfinite(b)


def test_cross_entropy_rejects_out_of_range_ids():
    logits = Tensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ad.cross_entropy(logits, [0, 3])
    with pytest.raises(ValueError):
        ad.cross_entropy(logits, [-1, 0])


def test_cross_entropy_gradient_matches_fd(rng):
    logits = leaf(rng, 4, 6)
    ids = [5, 0, 2, 2]

    def loss():
        return ad.cross_entropy(logits, ids)

    assert_matches_fd(loss, [logits])


def test_losses_are_nonnegative(rng):
    p = Tensor(rng.standard_normal((6, 4)))
    t = rng.standard_normal((6, 4))
    assert float(ad.mse_loss(p, t).data) >= 0.0
    assert float(ad.cross_entropy(Tensor(rng.standard_normal((6, 9))), [1] * 6).data) >= 0.0


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def test_conv_identity_kernel_reproduces_input(rng):
    x = Tensor(rng.standard_normal((1, 5, 4)))
    kernel = Tensor(np.ones((1, 1, 1, 1)))
    bias = Tensor(np.zeros(1))
    out = ad.conv2d(x, kernel, bias)
    np.testing.assert_allclose(out.data, x.data)


def test_conv_zero_input_yields_bias_everywhere(rng):
    x = Tensor(np.zeros((2, 9, 6)))
    kernels = Tensor(rng.standard_normal((3, 2, 3, 3)))
    bias = Tensor(np.array([0.5, -1.0, 2.0]))
    out = ad.conv2d(x, kernels, bias)
    for c, b in enumerate([0.5, -1.0, 2.0]):
        np.testing.assert_allclose(out.data[c], b)


def test_conv_front_layer_output_shape():
    # 256x8 spectrogram patch, 16 filters of (7,5), stride (3,1), dilation (2,1)
    x = Tensor(np.zeros((1, 256, 8)))
    kernels = Tensor(np.zeros((16, 1, 7, 5)))
    bias = Tensor(np.zeros(16))
    out = ad.conv2d(x, kernels, bias, stride=(3, 1), dilation=(2, 1))
    assert out.data.shape == (16, 82, 4)


@pytest.mark.parametrize(
    "c_in,c_out,in_h,in_w,k_h,k_w,stride,dilation",
    [
        (1, 2, 8, 8, 3, 3, (1, 1), (1, 1)),
        (2, 3, 12, 7, 5, 3, (3, 1), (2, 1)),
        (3, 1, 10, 6, 3, 2, (2, 2), (1, 2)),
    ],
)
def test_conv_forward_matches_loop_oracle(rng, c_in, c_out, in_h, in_w, k_h, k_w, stride, dilation):
    x = rng.standard_normal((c_in, in_h, in_w))
    k = rng.standard_normal((c_out, c_in, k_h, k_w))
    b = rng.standard_normal(c_out)
    out = ad.conv2d(Tensor(x), Tensor(k), Tensor(b), stride=stride, dilation=dilation)
    ref = conv2d_reference(x, k, b, stride, dilation)
    np.testing.assert_allclose(out.data, ref, rtol=1e-12, atol=1e-12)


def test_conv_batched_forward_matches_per_item(rng):
    xs = rng.standard_normal((4, 2, 9, 6))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    batched = ad.conv2d(Tensor(xs), Tensor(k), Tensor(b), stride=(2, 1), dilation=(1, 1))
    for n in range(4):
        single = ad.conv2d(Tensor(xs[n]), Tensor(k), Tensor(b), stride=(2, 1), dilation=(1, 1))
        np.testing.assert_allclose(batched.data[n], single.data, rtol=1e-12, atol=1e-12)


def test_conv_gradients_match_fd(rng):
    x = leaf(rng, 2, 8, 7)
    k = leaf(rng, 3, 2, 3, 3)
    b = leaf(rng, 3)
    w = rng.standard_normal((3, 2, 5))

    def loss():
        out = ad.conv2d(x, k, b, stride=(3, 1), dilation=(2, 1))
        return ad.sum_all(ad.mul(out, Tensor(w)))

    assert_matches_fd(loss, [x, k, b])


def test_conv_rejects_oversized_kernel():
    x = Tensor(np.zeros((1, 4, 4)))
    kernels = Tensor(np.zeros((1, 1, 5, 1)))
    with pytest.raises(DimensionError):
        ad.conv2d(x, kernels, Tensor(np.zeros(1)))


def test_conv_rejects_channel_mismatch():
    x = Tensor(np.zeros((2, 6, 6)))
    kernels = Tensor(np.zeros((1, 3, 3, 3)))
    with pytest.raises(DimensionError):
        ad.conv2d(x, kernels, Tensor(np.zeros(1)))


def test_conv_output_size_examples():
    assert ad.conv_output_size(256, 7, 3, 2) == 82
    assert ad.conv_output_size(8, 5, 1, 1) == 4
    assert ad.conv_output_size(5, 5, 1, 1) == 1


@settings(max_examples=200, deadline=None)
@given(
    size=st.integers(1, 300),
    kernel=st.integers(1, 12),
    stride=st.integers(1, 4),
    dilation=st.integers(1, 4),
)
def test_conv_output_size_counts_valid_placements(size, kernel, stride, dilation):
    span = (kernel - 1) * dilation + 1
    placements = [
        start for start in range(0, size, stride) if start + span <= size
    ]
    if span > size:
        with pytest.raises(DimensionError):
            ad.conv_output_size(size, kernel, stride, dilation)
    else:
        assert ad.conv_output_size(size, kernel, stride, dilation) == len(placements)


# ---------------------------------------------------------------------------
# recurrent cell
# ---------------------------------------------------------------------------


def zero_lstm(n_in, hid):
    return LstmParams(
        w_x=Tensor(np.zeros((4 * hid, n_in))),
        w_h=Tensor(np.zeros((4 * hid, hid))),
        b=Tensor(np.zeros(4 * hid)),
    )


def random_lstm(rng, n_in, hid):
    return LstmParams(
        w_x=leaf(rng, 4 * hid, n_in),
        w_h=leaf(rng, 4 * hid, hid),
        b=leaf(rng, 4 * hid),
    )


def test_lstm_zero_parameters_halve_the_cell_state():
    # all gates sit at sigmoid(0) = 0.5 and the candidate at tanh(0) = 0
    c0 = np.array([0.4, -0.8])
    params = zero_lstm(3, 2)
    h1, c1 = ad.lstm_step(Tensor(np.ones(3)), Tensor(np.zeros(2)), Tensor(c0), params)
    np.testing.assert_allclose(c1.data, 0.5 * c0, atol=1e-12)
    np.testing.assert_allclose(h1.data, 0.5 * np.tanh(0.5 * c0), atol=1e-12)


def test_lstm_zero_everything_stays_zero():
    params = zero_lstm(4, 3)
    h1, c1 = ad.lstm_step(Tensor(np.zeros(4)), Tensor(np.zeros(3)), Tensor(np.zeros(3)), params)
    np.testing.assert_allclose(h1.data, 0.0)
    np.testing.assert_allclose(c1.data, 0.0)


def test_lstm_gradients_match_fd(rng):
    params = random_lstm(rng, 3, 4)
    x = leaf(rng, 3)
    h0 = leaf(rng, 4)
    c0 = leaf(rng, 4)
    wh = rng.standard_normal(4)
    wc = rng.standard_normal(4)

    def loss():
        h1, c1 = ad.lstm_step(x, h0, c0, params)
        h2, c2 = ad.lstm_step(x, h1, c1, params)
        return ad.sum_all(
            ad.add(ad.mul(h2, Tensor(wh)), ad.mul(c2, Tensor(wc)))
        )

    assert_matches_fd(loss, [x, h0, c0, params.w_x, params.w_h, params.b], tol=1e-5)


def test_lstm_rejects_inconsistent_shapes():
    params = zero_lstm(3, 2)
    with pytest.raises(DimensionError):
        ad.lstm_step(Tensor(np.zeros(5)), Tensor(np.zeros(2)), Tensor(np.zeros(2)), params)
    with pytest.raises(DimensionError):
        ad.lstm_step(Tensor(np.zeros(3)), Tensor(np.zeros(1)), Tensor(np.zeros(2)), params)


# ---------------------------------------------------------------------------
# tape mechanics
# ---------------------------------------------------------------------------


def test_backward_requires_scalar_loss():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with Graph() as g:
        y = ad.mul(x, x)
    with pytest.raises(DimensionError):
        ad.backward(y, g)


def test_leaf_gradients_accumulate_until_cleared():
    x = Tensor(np.array([3.0]), requires_grad=True)
    for expected in (6.0, 12.0):
        with Graph() as g:
            y = ad.sum_all(ad.mul(x, x))
        ad.backward(y, g)
        assert x.grad == pytest.approx([expected])
    x.zero_grad()
    with Graph() as g:
        y = ad.sum_all(ad.mul(x, x))
    ad.backward(y, g)
    assert x.grad == pytest.approx([6.0])


def test_shared_subexpression_gradient_sums_both_paths(rng):
    x = leaf(rng, 3)

    def loss():
        y = ad.tanh(x)
        return ad.sum_all(ad.add(ad.mul(y, y), y))

    assert_matches_fd(loss, [x])


def test_forward_is_deterministic(rng):
    x = rng.standard_normal((2, 6, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    a = ad.conv2d(Tensor(x), Tensor(k), Tensor(b)).data
    bb = ad.conv2d(Tensor(x.copy()), Tensor(k.copy()), Tensor(b.copy())).data
    assert np.array_equal(a, bb)


def test_finite_inputs_give_finite_outputs(rng):
    x = Tensor(rng.standard_normal((4, 4)) * 50.0)
    for op in (ad.relu, ad.sigmoid, ad.tanh, ad.softplus):
        assert np.all(np.isfinite(op(x).data))
