import math
import zlib

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dave import autodiff as ad
from dave.autodiff import RMSProp, ShapeError, Tensor, clip_global_norm, no_grad
from dave.gradcheck import check_directional, check_gradients, numerical_gradient
from dave.nn import GRUCell


def param(rng, *shape, scale=1.0):
    return Tensor(scale * rng.standard_normal(shape), requires_grad=True)


# matmul

def test_matmul_identity():
    out = ad.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])


def test_matmul_projector():
    out = Tensor([[1.0, 0.0], [0.0, 0.0]]) @ Tensor([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(out.data, [[5, 6], [0, 0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_grad_matches_finite_differences():
    rng = np.random.default_rng(0)
    a, b = param(rng, 3, 4), param(rng, 4, 2)
    assert check_gradients(lambda: (a @ b).sum(), [a, b]) < 1e-6


def test_ndarray_left_operand_defers_to_tensor():
    rng = np.random.default_rng(1)
    w = param(rng, 3, 2)
    x = rng.standard_normal((4, 3))
    out = x @ w
    assert isinstance(out, Tensor)
    np.testing.assert_allclose(out.data, x @ w.data)


# softmax / softmin

def test_softmax_softmin_uniform():
    p, q = ad.softmax_and_softmin(Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(p.data, [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(q.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_softmin_closed_form():
    p, q = ad.softmax_and_softmin(Tensor([math.log(2), 0.0]))
    np.testing.assert_allclose(p.data, [2 / 3, 1 / 3], atol=1e-15)
    np.testing.assert_allclose(q.data, [1 / 3, 2 / 3], atol=1e-15)


def test_softmax_large_logits_stay_finite():
    p, q = ad.softmax_and_softmin(Tensor([1000.0, -1000.0, 0.0]))
    assert np.all(np.isfinite(p.data)) and np.all(np.isfinite(q.data))
    assert p.data[0] == pytest.approx(1.0) and q.data[1] == pytest.approx(1.0)


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite), st.randoms(use_true_random=False))
def test_softmax_sums_to_one_and_is_permutation_equivariant(x, rnd):
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    p, q = ad.softmax_and_softmin(Tensor(x))
    assert abs(p.data.sum() - 1) < 1e-12 and abs(q.data.sum() - 1) < 1e-12
    pp, _ = ad.softmax_and_softmin(Tensor(x[perm]))
    np.testing.assert_allclose(pp.data, p.data[perm], rtol=1e-12, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 8), elements=finite, unique=True))
def test_softmin_reverses_the_argmax(x):
    top = np.sort(x)[-2:]
    assume(top[1] - top[0] > 1e-9)
    p, q = ad.softmax_and_softmin(Tensor(x))
    assert np.argmax(p.data) == np.argmin(q.data) == np.argmax(x)


# cross-entropy, mse

def test_cross_entropy_examples():
    assert ad.cross_entropy(Tensor([0.0, 0.0, 0.0]), 1).item() == pytest.approx(math.log(3), abs=1e-12)
    assert ad.cross_entropy(Tensor([10.0, -10.0]), 0).item() == pytest.approx(2.061153622e-9, rel=1e-6)
    assert ad.cross_entropy(Tensor([0.0, math.log(3)]), 0).item() == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_index_out_of_range():
    with pytest.raises(IndexError):
        ad.cross_entropy(Tensor([0.0, 0.0]), 2)
    with pytest.raises(IndexError):
        ad.cross_entropy(Tensor([0.0, 0.0]), -1)


def test_cross_entropy_batched_reductions():
    logits = Tensor([[0.0, 0.0], [0.0, math.log(3)]])
    per = ad.cross_entropy(logits, np.array([0, 0]), reduction="none").data
    np.testing.assert_allclose(per, [math.log(2), math.log(4)])
    assert ad.cross_entropy(logits, np.array([0, 0])).item() == pytest.approx(per.mean())
    assert ad.cross_entropy(logits, np.array([0, 0]), reduction="sum").item() == pytest.approx(per.sum())


def test_mse_examples():
    assert ad.mse(Tensor([1.0, 2.0]), Tensor([1.0, 2.0])).item() == 0.0
    assert ad.mse(Tensor([1.0, 2.0]), Tensor([1.0, 4.0])).item() == 2.0
    with pytest.raises(ShapeError):
        ad.mse(Tensor([1.0, 2.0]), Tensor([1.0]))


def test_mse_gradcheck():
    rng = np.random.default_rng(2)
    a, b = param(rng, 5), param(rng, 5)
    assert check_gradients(lambda: ad.mse(a, b), [a, b]) < 1e-6


# per-op finite-difference sweep

def _positive(rng, *shape):
    return Tensor(rng.uniform(0.5, 2.0, shape), requires_grad=True)


def _away_from_kink(rng, *shape):
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + x, x)
    return Tensor(x, requires_grad=True)


UNARY = {
    "neg": (lambda x: -x, param),
    "exp": (ad.exp, param),
    "log": (ad.log, _positive),
    "tanh": (ad.tanh, param),
    "sigmoid": (ad.sigmoid, param),
    "relu": (ad.relu, _away_from_kink),
    "elu": (ad.elu, _away_from_kink),
    "abs": (ad.tabs, _away_from_kink),
    "pow": (lambda x: x ** 3, param),
    "sqrt": (lambda x: x ** 0.5, _positive),
    "sum_axis": (lambda x: ad.tsum(x, axis=0), param),
    "mean_axis": (lambda x: ad.mean(x, axis=1, keepdims=True), param),
    "reshape": (lambda x: x.reshape(-1), param),
    "slice": (lambda x: x[1:, ::2], param),
    "fancy_index": (lambda x: x[np.array([0, 0, 2]), np.array([1, 1, 0])], param),
    "log_softmax": (ad.log_softmax, param),
    "softmax": (ad.softmax, param),
    "softmin": (lambda x: ad.softmax_and_softmin(x)[1], param),
}

BINARY = {
    "add_broadcast": (lambda a, b: a + b, (3, 4), (4,)),
    "sub_broadcast": (lambda a, b: a - b, (3, 4), (3, 1)),
    "mul_broadcast": (lambda a, b: a * b, (3, 4), (1, 4)),
    "div": (lambda a, b: a / (b * b + 1.0), (3, 4), (3, 4)),
    "matmul_batched": (lambda a, b: a @ b, (2, 3, 4), (4, 5)),
    "concat": (lambda a, b: ad.concat([a, b], axis=-1), (3, 4), (3, 2)),
    "stack": (lambda a, b: ad.stack([a, b], axis=1), (3, 4), (3, 4)),
}

POINTS = 100


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_ops_gradcheck_at_random_points(name):
    fn, make = UNARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(POINTS):
        x = make(rng, 3, 4)
        w = rng.standard_normal(fn(x).shape)
        worst = max(worst, check_gradients(lambda: (fn(x) * w).sum(), [x]))
    assert worst < 1e-4


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_ops_gradcheck_at_random_points(name):
    fn, sa, sb = BINARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    worst = 0.0
    for _ in range(POINTS):
        a, b = param(rng, *sa), param(rng, *sb)
        w = rng.standard_normal(fn(a, b).shape)
        worst = max(worst, check_gradients(lambda: (fn(a, b) * w).sum(), [a, b]))
    assert worst < 1e-4


def test_cross_entropy_gradcheck_at_random_points():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(POINTS):
        logits = param(rng, 4, 3, scale=3.0)
        target = rng.integers(0, 3, size=4)
        worst = max(worst, check_gradients(lambda: ad.cross_entropy(logits, target), [logits]))
    assert worst < 1e-4


def test_gradients_accumulate_across_reuse():
    x = Tensor([1.5, -2.0], requires_grad=True)
    (x * x + x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)


def test_every_reachable_parameter_gets_a_gradient_of_its_shape():
    rng = np.random.default_rng(4)
    a, b, unused = param(rng, 2, 3), param(rng, 3), param(rng, 7)
    ((a + b) * (a + b)).sum().backward()
    assert a.grad.shape == a.shape and b.grad.shape == b.shape
    assert unused.grad is None


def test_no_grad_builds_no_graph():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = (x * 2.0).sum()
    assert y._parents == ()


def test_two_layer_network_matches_hand_computed_chain_rule():
    """y = sum(w2 . tanh(W1 x + b1)); gradients by hand."""
    rng = np.random.default_rng(5)
    x = rng.standard_normal(3)
    W1, b1, w2 = param(rng, 3, 4), param(rng, 4), param(rng, 4)
    y = (ad.tanh(Tensor(x[None]) @ W1 + b1) * w2).sum()
    y.backward()
    z = x @ W1.data + b1.data
    h = np.tanh(z)
    dz = w2.data * (1 - h**2)
    np.testing.assert_allclose(w2.grad, h, rtol=1e-13)
    np.testing.assert_allclose(b1.grad, dz, rtol=1e-13)
    np.testing.assert_allclose(W1.grad, np.outer(x, dz), rtol=1e-13)


# GRU

def _gru_params(rng, n_in, hid, scale=0.5):
    names = ["w_ir", "w_iz", "w_in", "w_hr", "w_hz", "w_hn", "b_ir", "b_iz", "b_in", "b_hr", "b_hz", "b_hn"]
    shapes = [(n_in, hid)] * 3 + [(hid, hid)] * 3 + [(hid,)] * 6
    return {n: param(rng, *s, scale=scale) for n, s in zip(names, shapes)}


def test_gru_all_zero_gives_zero_hidden():
    p = {k: Tensor(np.zeros_like(v.data)) for k, v in _gru_params(np.random.default_rng(0), 3, 4).items()}
    out = ad.gru_step(np.zeros(3), np.zeros(4), p)
    np.testing.assert_array_equal(out.data, np.zeros(4))


def test_gru_saturated_update_gate_keeps_hidden():
    rng = np.random.default_rng(6)
    p = _gru_params(rng, 3, 4)
    p["b_iz"] = Tensor(np.full(4, 100.0))
    h = rng.standard_normal(4)
    out = ad.gru_step(rng.standard_normal(3), h, p)
    np.testing.assert_allclose(out.data, h, atol=1e-12)


def test_gru_shape_error():
    p = _gru_params(np.random.default_rng(0), 3, 4)
    with pytest.raises(ShapeError):
        ad.gru_step(np.zeros(5), np.zeros(4), p)


def test_gru_gradcheck_all_params():
    rng = np.random.default_rng(7)
    p = _gru_params(rng, 3, 4)
    x, h = param(rng, 2, 3), param(rng, 2, 4)
    w = rng.standard_normal((2, 4))
    tensors = list(p.values()) + [x, h]
    assert check_gradients(lambda: (ad.gru_step(x, h, p) * w).sum(), tensors) < 1e-5


def test_gru_cell_module_unrolled_gradcheck():
    rng = np.random.default_rng(8)
    cell = GRUCell(3, 5, rng)
    xs = rng.standard_normal((4, 2, 3))

    def f():
        h = Tensor(np.zeros((2, 5)))
        for t in range(4):
            h = cell(xs[t], h)
        return (h * h).sum()

    assert check_gradients(f, cell.parameters()) < 1e-5


# clipping

def test_clip_small_norm_unchanged():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([3.0, 4.0])
    assert clip_global_norm([p], 10.0) == pytest.approx(5.0)
    np.testing.assert_array_equal(p.grad, [3.0, 4.0])


def test_clip_scales_to_max_norm():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.array([30.0, 40.0])
    assert clip_global_norm([p], 10.0) == pytest.approx(50.0)
    np.testing.assert_allclose(p.grad, [6.0, 8.0])


def test_clip_contract_random():
    rng = np.random.default_rng(9)
    for _ in range(100):
        ps = [Tensor(np.zeros(s), requires_grad=True) for s in [(3,), (2, 2), (5,)]]
        for p in ps:
            p.grad = rng.standard_normal(p.shape) * rng.uniform(0, 20)
        before = [p.grad.copy() for p in ps]
        clip_global_norm(ps, 10.0)
        total = math.sqrt(sum(float((p.grad**2).sum()) for p in ps))
        assert total <= 10.0 + 1e-9
        # direction preserved
        scale = ps[0].grad[0] / before[0][0]
        for p, b in zip(ps, before):
            np.testing.assert_allclose(p.grad, b * scale)


# RMSProp

def test_rmsprop_zero_grad_keeps_params():
    p = Tensor([1.0, -2.0], requires_grad=True)
    opt = RMSProp([p])
    p.grad = np.zeros(2)
    opt.step()
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_rmsprop_first_step_closed_form():
    p = Tensor([0.0], requires_grad=True)
    opt = RMSProp([p], lr=0.0005, alpha=0.99, eps=1e-5)
    p.grad = np.array([1.0])
    opt.step()
    assert opt.square_avg[0][0] == pytest.approx(0.01)
    assert p.data[0] == pytest.approx(-0.0005 / (0.1 + 1e-5), rel=1e-12)
    assert p.data[0] == pytest.approx(-0.0049995, rel=1e-6)


def test_rmsprop_second_identical_step_is_smaller():
    p = Tensor([0.0], requires_grad=True)
    opt = RMSProp([p])
    p.grad = np.array([1.0])
    opt.step()
    d1 = -p.data[0]
    p.grad = np.array([1.0])
    opt.step()
    d2 = -p.data[0] - d1
    assert 0 < d2 < d1


def test_rmsprop_state_nonnegative_and_aligned():
    rng = np.random.default_rng(10)
    ps = [param(rng, 3), param(rng, 2, 2)]
    opt = RMSProp(ps)
    for _ in range(5):
        for p in ps:
            p.grad = rng.standard_normal(p.shape)
        opt.step()
    assert all(np.all(v >= 0) for v in opt.square_avg)
    with pytest.raises(ValueError):
        opt.load_state_dict({"square_avg": opt.state_dict()["square_avg"][:1]})
    opt.square_avg = opt.square_avg[:1]
    with pytest.raises(ValueError):
        opt.step()


def test_gradcheck_helpers_agree_on_a_quadratic():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    num = numerical_gradient(lambda: (x * x).sum(), [x])[0]
    np.testing.assert_allclose(num, 2 * x.data, rtol=1e-8)
    assert check_directional(lambda: (x * x).sum(), [x], np.random.default_rng(0)) < 1e-8
