import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapflow import diffcore as dc
from gapflow.errors import DiffcoreError, ShapeError

from fdcheck import central_diff, rel_err

# e^-1 and e^-1.5 evaluated by an independent high-precision route (mpmath,
# 50 digits) and frozen here.
EXP_NEG_1 = 0.36787944117144232159552377016146086744581113103177
EXP_NEG_1_5 = 0.22313016014842982893328047076401252134217162936108


def _leafed(tape, arr):
    return tape.leaf(np.asarray(arr, dtype=np.float64))


def _scalarize(out, seed=0):
    """Project an op output to a scalar with a fixed random weighting."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return dc.reduce_sum(dc.mul(out, dc.Tensor.constant(r)))


def _check_op_grad(build, x0, seed=0, h=1e-5, tol=1e-6):
    """build(tensor) -> op output; compares tape gradient against central FD."""
    x0 = np.asarray(x0, dtype=np.float64)
    tape = dc.Tape()
    x = _leafed(tape, x0)
    loss = _scalarize(build(x), seed)
    store = dc.backward(tape, loss)
    got = store.grad(x)

    r = np.random.default_rng(seed).standard_normal(loss.shape if False else build(dc.Tensor.constant(x0)).shape)

    def f(xv):
        out = build(dc.Tensor.constant(xv))
        return float((out.value * r).sum())

    want = central_diff(f, x0, h=h)
    # the FD oracle has absolute noise ~eps*|loss|/2h, so components much
    # smaller than the gradient's own scale are compared on that scale
    floor = max(1e-8, 1e-3 * float(np.max(np.abs(want))))
    assert rel_err(got, want, floor=floor) < tol, f"gradient mismatch: {got} vs {want}"


# ---------------------------------------------------------------------------
# spec'd examples
# ---------------------------------------------------------------------------


def test_add_example():
    out = dc.add(dc.Tensor.constant([1.0, 2.0]), dc.Tensor.constant([3.0, 4.0]))
    np.testing.assert_array_equal(out.value, [4.0, 6.0])


def test_matmul_identity_example():
    rng = np.random.default_rng(3)
    r = rng.standard_normal((3, 3))
    out = dc.matmul(dc.Tensor.constant(np.eye(3)), dc.Tensor.constant(r))
    np.testing.assert_allclose(out.value, r, rtol=0, atol=0)


def test_norm_backward_example():
    # backward of norm(v) at v=[3,4] is v/5; checked against central FD too
    tape = dc.Tape()
    v = _leafed(tape, [3.0, 4.0])
    store = dc.backward(tape, dc.norm(v))
    np.testing.assert_allclose(store.grad(v), [0.6, 0.8], atol=1e-12)
    fd = central_diff(lambda x: float(np.sqrt((x * x).sum())), np.array([3.0, 4.0]))
    assert rel_err(store.grad(v), fd) < 1e-8


def test_stop_gradient_forward_identity():
    out = dc.stop_gradient(dc.Tensor.constant([1.5]))
    np.testing.assert_array_equal(out.value, [1.5])


def test_stop_gradient_partial_product():
    # d(sg(x) * x)/dx at x=2 is 2: only the undetached factor contributes
    tape = dc.Tape()
    x = _leafed(tape, [2.0])
    loss = dc.reduce_sum(dc.mul(dc.stop_gradient(x), x))
    store = dc.backward(tape, loss)
    np.testing.assert_allclose(store.grad(x), [2.0], atol=0)


def test_stop_gradient_alone_is_zero():
    tape = dc.Tape()
    x = _leafed(tape, [0.7, -1.2])
    loss = dc.reduce_sum(dc.stop_gradient(x))
    store = dc.backward(tape, loss)
    assert store.get(x) is None
    np.testing.assert_array_equal(store.grad(x), np.zeros(2))


def test_backward_sum_gradient():
    tape = dc.Tape()
    theta = _leafed(tape, [1.0, 2.0, 3.0, 4.0])
    store = dc.backward(tape, dc.reduce_sum(theta))
    np.testing.assert_array_equal(store.grad(theta), np.ones(4))


def test_five_step_scalar_chain():
    # x <- a*x per step, loss = x5: dloss/dx0 = a^5
    tape = dc.Tape()
    x0 = _leafed(tape, [1.3])
    x = x0
    for _ in range(5):
        x = dc.mul(x, 0.9)
    store = dc.backward(tape, dc.reduce_sum(x))
    np.testing.assert_allclose(store.grad(x0), [0.9 ** 5], rtol=1e-15)


# ---------------------------------------------------------------------------
# step-boundary decay
# ---------------------------------------------------------------------------


def _decayed_chain_grad(alpha, dt, steps):
    tape = dc.Tape()
    x0 = _leafed(tape, [1.0])
    x = x0
    for _ in range(steps):
        x = dc.mul(x, 0.8)
        dc.mark_step_boundary(tape, [x], alpha, dt)
    store = dc.backward(tape, dc.reduce_sum(x))
    return store.grad(x0)[0]


def test_decay_alpha_zero_is_plain_bptt():
    assert _decayed_chain_grad(0.0, 0.1, 4) == pytest.approx(0.8 ** 4, rel=1e-15)


def test_decay_single_boundary():
    # alpha*dt = 1 -> one crossed boundary scales by e^-1
    got = _decayed_chain_grad(10.0, 0.1, 1)
    assert got == pytest.approx(0.8 * EXP_NEG_1, rel=1e-14)


def test_decay_three_boundaries_cumulative():
    # alpha*dt = 0.5 over 3 boundaries -> cumulative e^-1.5 on the earliest state
    got = _decayed_chain_grad(5.0, 0.1, 3)
    assert got == pytest.approx(0.8 ** 3 * EXP_NEG_1_5, rel=1e-14)


def test_decay_consistency_on_linear_chain():
    # gradients with decay differ from alpha=0 exactly by the product of the
    # per-boundary factors along the path
    plain = _decayed_chain_grad(0.0, 1.0 / 30.0, 6)
    alpha = 3.7
    decayed = _decayed_chain_grad(alpha, 1.0 / 30.0, 6)
    np.testing.assert_allclose(decayed, plain * math.exp(-alpha * 6 / 30.0), rtol=1e-13)


def test_double_mark_is_an_error():
    tape = dc.Tape()
    x = _leafed(tape, [1.0])
    y = dc.mul(x, 2.0)
    dc.mark_step_boundary(tape, [y], 0.5, 0.1)
    with pytest.raises(DiffcoreError):
        dc.mark_step_boundary(tape, [y], 0.5, 0.1)


def test_mark_constant_is_an_error():
    tape = dc.Tape()
    with pytest.raises(DiffcoreError):
        dc.mark_step_boundary(tape, [dc.Tensor.constant([1.0])], 0.5, 0.1)


# ---------------------------------------------------------------------------
# per-primitive gradients vs central finite differences
# ---------------------------------------------------------------------------


def test_elementwise_binary_grads():
    rng = np.random.default_rng(0)
    a0 = rng.standard_normal((2, 3))
    b0 = rng.standard_normal((2, 3)) + 3.0  # keep divisors away from 0
    for name, fn in [("add", dc.add), ("sub", dc.sub), ("mul", dc.mul), ("div", dc.div)]:
        for side in (0, 1):
            def build(x, fn=fn, side=side):
                other = dc.Tensor.constant(b0 if side == 0 else a0)
                return fn(x, other) if side == 0 else fn(other, x)
            _check_op_grad(build, a0 if side == 0 else b0, seed=hash(name) % 1000)


def test_broadcast_grads():
    rng = np.random.default_rng(1)
    a0 = rng.standard_normal((4, 3))
    b0 = rng.standard_normal((3,))
    _check_op_grad(lambda x: dc.mul(x, dc.Tensor.constant(a0)), b0)
    _check_op_grad(lambda x: dc.add(dc.Tensor.constant(b0), x), a0)
    c0 = rng.standard_normal((4, 1))
    _check_op_grad(lambda x: dc.mul(dc.Tensor.constant(a0), x), c0)


def test_matmul_grads():
    rng = np.random.default_rng(2)
    a0 = rng.standard_normal((3, 4))
    b0 = rng.standard_normal((4, 2))
    _check_op_grad(lambda x: dc.matmul(x, dc.Tensor.constant(b0)), a0)
    _check_op_grad(lambda x: dc.matmul(dc.Tensor.constant(a0), x), b0)
    # batched against broadcast
    ab = rng.standard_normal((5, 3, 4))
    _check_op_grad(lambda x: dc.matmul(dc.Tensor.constant(ab), x), b0)
    _check_op_grad(lambda x: dc.matmul(x, dc.Tensor.constant(b0)), ab)


def test_matvec_grads():
    rng = np.random.default_rng(3)
    a0 = rng.standard_normal((5, 3, 3))
    v0 = rng.standard_normal((5, 3))
    _check_op_grad(lambda x: dc.matvec(x, dc.Tensor.constant(v0)), a0)
    _check_op_grad(lambda x: dc.matvec(dc.Tensor.constant(a0), x), v0)


def test_unary_grads():
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((3, 4)) * 0.8
    cases = [
        (lambda x: dc.tanh(x), x0),
        (lambda x: dc.sigmoid(x), x0),
        (lambda x: dc.exp(x), x0),
        (lambda x: dc.sqrt(x), np.abs(x0) + 0.5),
        (lambda x: dc.log(x), np.abs(x0) + 0.5),
        (lambda x: dc.powc(x, 2.0), x0),
        (lambda x: dc.powc(x, 3.0), x0),
        (lambda x: dc.leaky_relu(x, 0.01), x0 + 0.05),
        (lambda x: dc.maximum_const(x, 0.0), x0 + 0.05),
        (lambda x: dc.absolute(x), x0 + 0.05),
        (lambda x: dc.arccos(x), np.clip(x0, -0.9, 0.9)),
        (lambda x: dc.reshape(x, (12,)), x0),
        (lambda x: dc.transpose_last(x), x0),
        (lambda x: dc.reduce_sum(x, axis=1), x0),
        (lambda x: dc.reduce_mean(x, axis=0), x0),
        (lambda x: dc.reduce_mean(x), x0),
        (lambda x: dc.norm(x, axis=-1), x0),
        (lambda x: dc.norm(x), x0),
        (lambda x: dc.take(x, (slice(None), 2)), x0),
        (lambda x: dc.take(x, (1, slice(1, 3))), x0),
    ]
    for i, (build, x) in enumerate(cases):
        _check_op_grad(build, x, seed=100 + i)


def test_concat_grad():
    rng = np.random.default_rng(5)
    a0 = rng.standard_normal((2, 3))
    b0 = rng.standard_normal((2, 2))
    _check_op_grad(lambda x: dc.concat([x, dc.Tensor.constant(b0)], axis=1), a0)
    _check_op_grad(lambda x: dc.concat([dc.Tensor.constant(a0), x], axis=1), b0)


def test_cross_grad():
    rng = np.random.default_rng(6)
    a0 = rng.standard_normal((4, 3))
    b0 = rng.standard_normal((4, 3))
    _check_op_grad(lambda x: dc.cross(x, dc.Tensor.constant(b0)), a0)
    _check_op_grad(lambda x: dc.cross(dc.Tensor.constant(a0), x), b0)


def test_exp_so3_grad():
    rng = np.random.default_rng(7)
    for scale in (1.0, 1e-3, 1e-5):
        w0 = rng.standard_normal((3,)) * scale
        _check_op_grad(lambda x: dc.exp_so3(x), w0, h=max(1e-7, scale * 1e-4), tol=2e-6)
    wb = rng.standard_normal((6, 3))
    _check_op_grad(lambda x: dc.exp_so3(x), wb)


def test_linear_grads():
    rng = np.random.default_rng(8)
    x0 = rng.standard_normal((4, 5))
    w0 = rng.standard_normal((3, 5))
    b0 = rng.standard_normal((3,))
    _check_op_grad(lambda t: dc.linear(t, dc.Tensor.constant(w0), dc.Tensor.constant(b0)), x0)
    _check_op_grad(lambda t: dc.linear(dc.Tensor.constant(x0), t, dc.Tensor.constant(b0)), w0)
    _check_op_grad(lambda t: dc.linear(dc.Tensor.constant(x0), dc.Tensor.constant(w0), t), b0)


def _conv_reference(x, w, b, stride, padding):
    """Direct-loop convolution oracle."""
    bsz, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo))
    for n in range(bsz):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[n, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[n, o, i, j] = (patch * w[o]).sum() + (b[o] if b is not None else 0.0)
    return out


def test_conv2d_forward_matches_loop_oracle():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((2, 3, 6, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal((4,))
    got = dc.conv2d(dc.Tensor.constant(x), dc.Tensor.constant(w), dc.Tensor.constant(b), 1, 1)
    np.testing.assert_allclose(got.value, _conv_reference(x, w, b, 1, 1), atol=1e-12)
    got2 = dc.conv2d(dc.Tensor.constant(x), dc.Tensor.constant(w[:, :, :2, :2]),
                     dc.Tensor.constant(b), 2, 0)
    np.testing.assert_allclose(got2.value, _conv_reference(x, w[:, :, :2, :2], b, 2, 0), atol=1e-12)


def test_conv2d_grads():
    rng = np.random.default_rng(10)
    x0 = rng.standard_normal((2, 2, 4, 5))
    w0 = rng.standard_normal((3, 2, 3, 3))
    b0 = rng.standard_normal((3,))
    wc, bc, xc = dc.Tensor.constant(w0), dc.Tensor.constant(b0), dc.Tensor.constant(x0)
    _check_op_grad(lambda t: dc.conv2d(t, wc, bc, 1, 1), x0, seed=31)
    _check_op_grad(lambda t: dc.conv2d(xc, t, bc, 1, 1), w0, seed=32)
    _check_op_grad(lambda t: dc.conv2d(xc, wc, t, 1, 1), b0, seed=33)
    w2, b2 = dc.Tensor.constant(w0[:, :, :2, :2]), dc.Tensor.constant(b0)
    _check_op_grad(lambda t: dc.conv2d(t, w2, b2, 2, 0), x0, seed=34)


def test_bce_with_logits():
    rng = np.random.default_rng(11)
    z0 = rng.standard_normal((8,)) * 3
    y0 = (rng.random(8) > 0.5).astype(np.float64)
    got = dc.bce_with_logits(dc.Tensor.constant(z0), dc.Tensor.constant(y0))
    p = 1.0 / (1.0 + np.exp(-z0))
    want = -(y0 * np.log(p) + (1 - y0) * np.log(1 - p)).mean()
    np.testing.assert_allclose(got.value, want, rtol=1e-12)

    tape = dc.Tape()
    z = tape.leaf(z0)
    store = dc.backward(tape, dc.bce_with_logits(z, dc.Tensor.constant(y0)))
    fd = central_diff(
        lambda zz: float((np.maximum(zz, 0) - zz * y0 + np.log1p(np.exp(-np.abs(zz)))).mean()), z0)
    assert rel_err(store.grad(z), fd) < 1e-7


# ---------------------------------------------------------------------------
# randomized composite tapes
# ---------------------------------------------------------------------------


def test_random_small_tapes_match_fd():
    # chains of mixed primitives, <= 200 nodes, rel err < 1e-6
    rng = np.random.default_rng(12)
    for trial in range(10):
        x0 = rng.standard_normal((3, 3)) * 0.5

        def f_build(x):
            y = dc.tanh(dc.matmul(x, dc.Tensor.constant(np.eye(3) * 0.7 + 0.1)))
            y = dc.add(dc.mul(y, y), 0.3)
            y = dc.sqrt(y)
            z = dc.norm(y, axis=-1)
            z = dc.sigmoid(z)
            return dc.concat([z.reshape((3, 1)), y], axis=1)

        _check_op_grad(f_build, x0, seed=200 + trial, tol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_sg_nilpotence_bitwise(vals):
    # gradient of f(stop_gradient(g(x))) w.r.t. x is exactly absent/zero
    tape = dc.Tape()
    x = tape.leaf(np.asarray(vals))
    inner = dc.tanh(dc.mul(x, 2.0))
    blocked = dc.stop_gradient(inner)
    loss = dc.reduce_sum(dc.mul(blocked, blocked))
    store = dc.backward(tape, loss)
    assert store.get(x) is None
    assert store.get(inner) is None
    assert np.all(store.grad(x) == 0.0)


def test_backward_determinism():
    rng = np.random.default_rng(13)
    tape = dc.Tape()
    x = tape.leaf(rng.standard_normal((4, 4)))
    y = dc.reduce_sum(dc.tanh(dc.matmul(x, x)))
    s1 = dc.backward(tape, y)
    s2 = dc.backward(tape, y)
    assert s1.ids() == s2.ids()
    for nid in s1.ids():
        np.testing.assert_array_equal(s1.by_id(nid), s2.by_id(nid))


# ---------------------------------------------------------------------------
# errors
# ---------------------------------------------------------------------------


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError) as exc:
        dc.add(dc.Tensor.constant(np.ones((2, 3))), dc.Tensor.constant(np.ones((4,))))
    assert "add" in str(exc.value)
    assert "(2, 3)" in str(exc.value) and "(4,)" in str(exc.value)
    with pytest.raises(ShapeError):
        dc.matmul(dc.Tensor.constant(np.ones((2, 3))), dc.Tensor.constant(np.ones((2, 3))))


def test_nonfinite_creation_rejected():
    with pytest.raises(DiffcoreError):
        dc.Tensor.constant([1.0, np.nan])
    with pytest.raises(DiffcoreError):
        dc.Tape().leaf([np.inf])


def test_non_scalar_loss_rejected():
    tape = dc.Tape()
    x = tape.leaf([1.0, 2.0])
    with pytest.raises(DiffcoreError):
        dc.backward(tape, dc.mul(x, 2.0))


def test_loss_not_on_tape_rejected():
    tape = dc.Tape()
    tape.leaf([1.0])
    with pytest.raises(DiffcoreError):
        dc.backward(tape, dc.Tensor.constant([1.0]))
    other = dc.Tape()
    y = other.leaf([2.0])
    with pytest.raises(DiffcoreError):
        dc.backward(tape, dc.reduce_sum(y))


def test_cross_tape_mixing_rejected():
    t1, t2 = dc.Tape(), dc.Tape()
    a = t1.leaf([1.0])
    b = t2.leaf([2.0])
    with pytest.raises(DiffcoreError):
        dc.add(a, b)


def test_arccos_backward_is_clamped():
    tape = dc.Tape()
    x = tape.leaf([1.0])  # exact alignment: unclamped gradient would be -inf
    store = dc.backward(tape, dc.reduce_sum(dc.arccos(x)))
    g = store.grad(x)
    assert np.isfinite(g).all()
    np.testing.assert_allclose(g, -1.0 / np.sqrt(1.0 - (1.0 - dc.ARCCOS_EPS) ** 2))


def test_norm_backward_at_zero_is_zero():
    tape = dc.Tape()
    x = tape.leaf([0.0, 0.0, 0.0])
    store = dc.backward(tape, dc.norm(x))
    np.testing.assert_array_equal(store.grad(x), np.zeros(3))


def test_eager_mode_returns_constants():
    out = dc.tanh(dc.Tensor.constant([0.3]))
    assert out.tape is None and out.nid is None
