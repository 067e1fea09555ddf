"""Autodiff substrate: gradients vs central differences, plus backend parity."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypalign.errors import ContractError, NumericalError, ShapeError
from hypalign.tensor import (
    NUMPY_OPS,
    TENSOR_OPS,
    Adam,
    LayerNorm,
    Linear,
    MLP,
    Tensor,
    absolute,
    atan2,
    concat,
    grad_check,
    grad_enabled,
    matmul,
    no_grad,
    normalize_lastaxis,
    relu,
    smooth_l1,
    softmax,
    sqrt,
    stack,
    take,
    tanh,
    tmean,
    tsum,
    where,
)


def leaf(rng, *shape):
    return Tensor(rng.normal(0.0, 1.0, shape), requires_grad=True)


# -- elementwise gradients -----------------------------------------------------------


def test_quadratic_gradient_matches_slope():
    w = Tensor(np.array(3.0), requires_grad=True)
    loss = w * w
    loss.backward()
    assert abs(float(w.grad) - 6.0) < 1e-12
    assert grad_check(lambda: w * w, [w]) < 1e-6


@pytest.mark.parametrize("op", [
    lambda a, b: a + b,
    lambda a, b: a - b,
    lambda a, b: a * b,
    lambda a, b: a / (b * b + 1.0),
    lambda a, b: tanh(a) * b,
    lambda a, b: (a * a + b * b + 0.5).apply(sqrt) if False else sqrt(a * a + b * b + 0.5),
    lambda a, b: absolute(a + 0.3) * b,
    lambda a, b: atan2(a + 2.0, b + 3.0),
])
def test_binary_elementwise_gradients(op):
    rng = np.random.default_rng(7)
    a, b = leaf(rng, 4, 5), leaf(rng, 4, 5)
    assert grad_check(lambda: op(a, b).sum(), [a, b]) < 1e-6


def test_broadcast_gradients_unbroadcast_correctly():
    rng = np.random.default_rng(3)
    a = leaf(rng, 3, 4)
    b = leaf(rng, 4)       # broadcast over rows
    c = Tensor(np.array(2.5), requires_grad=True)
    assert grad_check(lambda: ((a + b) * c).sum(), [a, b, c]) < 1e-6


def test_sqrt_zero_subgradient():
    x = Tensor(np.array([0.0, 4.0]), requires_grad=True)
    y = sqrt(x).sum()
    y.backward()
    assert x.grad[0] == 0.0          # subgradient convention at the kink
    assert abs(x.grad[1] - 0.25) < 1e-12


def test_where_masks_gradient_not_values():
    rng = np.random.default_rng(9)
    a, b = leaf(rng, 6), leaf(rng, 6)
    mask = np.array([True, False, True, True, False, False])
    out = where(mask, a, b).sum()
    out.backward()
    assert np.array_equal(a.grad, mask.astype(float))
    assert np.array_equal(b.grad, (~mask).astype(float))


def test_where_safe_denominator_idiom():
    # convention used throughout predict(): divide by where-substituted
    # denominators, never raw ones, so no branch ever evaluates x/0
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    denom = Tensor(np.array([1.0, 0.0]), requires_grad=True)
    mask = np.array([True, False])
    safe_denom = where(mask, denom, Tensor(np.ones(2)))
    out = where(mask, a / safe_denom, a * 2.0)
    tsum(out).backward()
    assert np.isfinite(a.grad).all()
    assert np.isfinite(denom.grad).all()
    assert np.array_equal(a.grad, [1.0, 2.0])   # 1/denom, then fallback slope 2


def test_relu_gradient_gate():
    x = Tensor(np.array([-1.0, 2.0, -0.5, 3.0]), requires_grad=True)
    relu(x).sum().backward()
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0, 1.0])


# -- matmul ---------------------------------------------------------------------------


def loop_matmul(a, b):
    if a.ndim == 2 and b.ndim == 2:
        out = np.zeros((a.shape[0], b.shape[1]))
        for i in range(a.shape[0]):
            for j in range(b.shape[1]):
                out[i, j] = sum(a[i, k] * b[k, j] for k in range(a.shape[1]))
        return out
    raise AssertionError


def test_matmul_matches_loop_oracle():
    rng = np.random.default_rng(17)
    a, b = rng.normal(0, 1, (3, 4)), rng.normal(0, 1, (4, 2))
    got = matmul(Tensor(a), Tensor(b)).data
    assert np.allclose(got, loop_matmul(a, b), atol=1e-12)


@pytest.mark.parametrize("sa,sb", [
    ((3, 4), (4, 5)),
    ((2, 3, 4), (2, 4, 5)),   # batched
    ((2, 3, 4), (4, 5)),      # broadcast rhs
    ((3, 4), (2, 4, 5)),      # broadcast lhs
])
def test_matmul_gradients_all_rank_combinations(sa, sb):
    rng = np.random.default_rng(23)
    a, b = leaf(rng, *sa), leaf(rng, *sb)
    assert grad_check(lambda: matmul(a, b).sum(), [a, b]) < 1e-6


def test_matmul_batch_mismatch_rejected():
    a = Tensor(np.zeros((2, 3, 4)))
    b = Tensor(np.zeros((3, 4, 5)))
    with pytest.raises(ShapeError):
        matmul(a, b)


# -- shape ops ------------------------------------------------------------------------


def test_take_scatter_backward():
    x = Tensor(np.arange(12.0).reshape(3, 4), requires_grad=True)
    take(x, (slice(None), 1)).sum().backward()
    expected = np.zeros((3, 4))
    expected[:, 1] = 1.0
    assert np.array_equal(x.grad, expected)


def test_concat_stack_reshape_swapaxes_gradients():
    rng = np.random.default_rng(31)
    a, b = leaf(rng, 2, 3), leaf(rng, 2, 3)

    def f():
        c = concat([a, b], axis=-1)            # (2, 6)
        s = stack([a, b], axis=0)              # (2, 2, 3)
        return (c.reshape(12) * c.reshape(12)).sum() + s.swapaxes(0, 1).sum()

    assert grad_check(f, [a, b]) < 1e-6


# -- reductions and composites --------------------------------------------------------


def test_sum_mean_axes():
    rng = np.random.default_rng(5)
    x = leaf(rng, 3, 4)
    assert grad_check(lambda: tsum(x, axis=0).sum(), [x]) < 1e-6
    assert grad_check(lambda: tmean(x, axis=1, keepdims=True).sum(), [x]) < 1e-6


def test_softmax_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(41)
    x = Tensor(rng.normal(0, 5, (8, 6)))
    s = softmax(x, axis=-1).data
    assert np.all(s > 0)
    assert np.abs(s.sum(axis=-1) - 1.0).max() < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=-60, max_value=60), min_size=2, max_size=8))
def test_softmax_row_sums_property(logits):
    s = softmax(Tensor(np.array([logits])), axis=-1).data
    assert np.all(s > 0)
    assert abs(s.sum() - 1.0) < 1e-12


def test_softmax_gradient():
    rng = np.random.default_rng(43)
    x = leaf(rng, 3, 5)
    w = Tensor(rng.normal(0, 1, (3, 5)))
    assert grad_check(lambda: (softmax(x, axis=-1) * w).sum(), [x]) < 1e-6


def test_normalize_lastaxis_standardizes_and_gradient():
    rng = np.random.default_rng(47)
    x = leaf(rng, 4, 3)
    n = normalize_lastaxis(x).data
    assert np.abs(n.mean(axis=-1)).max() < 1e-12
    assert np.abs(n.std(axis=-1) - 1.0).max() < 1e-3   # eps-regularized variance
    assert grad_check(lambda: (normalize_lastaxis(x) * x).sum(), [x]) < 1e-6


def test_smooth_l1_branches():
    pred = Tensor(np.array([0.0, 0.3, 5.0]), requires_grad=True)
    target = Tensor(np.array([0.0, 0.0, 0.0]))
    vals = smooth_l1(pred, target).data
    assert vals[0] == 0.0
    assert abs(vals[1] - 0.5 * 0.09) < 1e-12        # quadratic zone
    assert abs(vals[2] - (5.0 - 0.5)) < 1e-12       # linear zone
    assert grad_check(lambda: smooth_l1(pred, target).sum(), [pred]) < 1e-6


# -- learned blocks -------------------------------------------------------------------


def test_toy_net_full_pipeline_gradient():
    rng = np.random.default_rng(20240613)
    net = MLP([6, 8, 4], rng)
    ln = LayerNorm(4)
    head = Linear(4, 3, rng)
    x = Tensor(rng.normal(0, 1, (5, 6)))
    params = [p for m in (net, ln, head) for p in m.parameters()]

    def f():
        return tsum(softmax(head(ln(net(x))), axis=-1) * x[:, :3])

    assert grad_check(f, params, step=1e-5) < 1e-4


def test_learned_block_gradients_many_trials():
    # linear + LN + relu + softmax chain over fresh random inputs
    worst = 0.0
    for trial in range(100):
        rng = np.random.default_rng(1000 + trial)
        lin = Linear(4, 4, rng)
        ln = LayerNorm(4)
        x = Tensor(rng.normal(0, 1, (2, 4)))

        def f():
            return tsum(softmax(relu(ln(lin(x))), axis=-1) * x)

        worst = max(worst, grad_check(f, lin.parameters() + ln.parameters()))
    assert worst < 1e-4, f"worst over 100 trials {worst:.3e}"


def test_grad_check_negative_control():
    rng = np.random.default_rng(53)
    w = leaf(rng, 3, 3)

    def corrupt(params):
        params[0].grad[0, 0] += 1.0

    err = grad_check(lambda: (w * w).sum(), [w], mutate_grads=corrupt)
    assert err > 1e-2


def test_grad_check_rejects_nonfinite_objective():
    w = Tensor(np.array(np.inf), requires_grad=True)
    with pytest.raises(NumericalError):
        grad_check(lambda: w * 1.0, [w])


def test_backward_requires_scalar_root():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        (x * x).backward()


def test_rank_cap_enforced():
    with pytest.raises(ShapeError):
        Tensor(np.zeros((1, 1, 1, 1)))


# -- optimizer ------------------------------------------------------------------------


def test_adam_single_step_reference():
    # one step by hand: m=(1-b1)g, v=(1-b2)g^2, mhat=g, vhat=g^2
    # step = lr * g / (|g| + eps)
    w = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam([w], lr=0.1)
    (w * w).backward()          # grad = 4
    opt.step()
    expected = 2.0 - 0.1 * 4.0 / (np.sqrt(16.0) + 1e-8)
    assert abs(float(w.data[0]) - expected) < 1e-12


def test_adam_deterministic_across_runs():
    def run():
        rng = np.random.default_rng(71)
        w = Tensor(rng.normal(0, 1, (4, 4)), requires_grad=True)
        opt = Adam([w], lr=1e-2)
        for _ in range(25):
            opt.zero_grad()
            loss = ((w - 0.5) * (w - 0.5)).sum()
            loss.backward()
            opt.step()
        return w.data.copy()

    assert np.array_equal(run(), run())


def test_adam_zero_grad_clears():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([w])
    (w * w).backward()
    opt.zero_grad()
    assert w.grad is None


# -- backend parity and no_grad -------------------------------------------------------


def test_no_grad_suppresses_graph():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    with no_grad():
        assert not grad_enabled()
        y = x * x
    assert not y.requires_grad
    assert y._backward is None


def test_backends_bitwise_identical_on_learned_blocks():
    rng = np.random.default_rng(83)
    net = MLP([6, 8, 4], rng)
    ln = LayerNorm(8)
    lin = Linear(6, 8, rng)
    x = rng.normal(0, 1, (5, 6))
    t = TENSOR_OPS.mlp(TENSOR_OPS.const(x), net).data
    n = NUMPY_OPS.mlp(NUMPY_OPS.const(x), net)
    assert np.array_equal(t, n)
    t = TENSOR_OPS.layernorm(TENSOR_OPS.linear(TENSOR_OPS.const(x), lin), ln).data
    n = NUMPY_OPS.layernorm(NUMPY_OPS.linear(NUMPY_OPS.const(x), lin), ln)
    assert np.array_equal(t, n)


def test_backends_bitwise_identical_on_primitives():
    rng = np.random.default_rng(89)
    a = rng.normal(0, 1, (3, 4, 5))
    b = rng.normal(0, 1, (3, 5, 2))
    assert np.array_equal(TENSOR_OPS.matmul(TENSOR_OPS.const(a), TENSOR_OPS.const(b)).data,
                          NUMPY_OPS.matmul(a, b))
    assert np.array_equal(TENSOR_OPS.softmax(TENSOR_OPS.const(a), axis=-1).data,
                          NUMPY_OPS.softmax(a, axis=-1))


def test_linear_init_deterministic_by_seed():
    w1 = Linear(5, 7, np.random.default_rng(123)).weight.data
    w2 = Linear(5, 7, np.random.default_rng(123)).weight.data
    assert np.array_equal(w1, w2)
