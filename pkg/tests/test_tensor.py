import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prix.errors import ContractError, DomainError, ShapeError
from prix.tensor import functional as F
from prix.tensor.gradcheck import check_gradients
from prix.tensor.nn import Linear
from prix.tensor.optim import AdamW, ParamGroup
from prix.tensor.tensor import Tensor, no_grad, tsum

from gradcases import CASES


# ------------------------------------------------------------------ create


def test_create_zeros_ones():
    assert np.array_equal(F.zeros([2, 2]).data, [[0, 0], [0, 0]])
    assert np.array_equal(F.ones([3]).data, [1, 1, 1])


def test_gaussian_deterministic_per_seed():
    a, b = F.gaussian([4], seed=7), F.gaussian([4], seed=7)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, F.gaussian([4], seed=8).data)


@pytest.mark.parametrize("shape", [[0], [2, -1], [3, 0, 2]])
def test_create_rejects_bad_dims(shape):
    with pytest.raises(ShapeError):
        F.create(shape)


def test_random_init_needs_seed():
    with pytest.raises(ValueError):
        F.create([2], "uniform")


def test_default_dtype_is_f32():
    assert F.zeros([2]).dtype == np.float32
    assert F.zeros([2], dtype="f64").dtype == np.float64


# ------------------------------------------------------------------ matmul


def test_matmul_identity_and_hand_values():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    assert np.array_equal((Tensor(np.eye(2)) @ x).data, x.data)
    out = Tensor([[1.0, 2.0], [3.0, 4.0]]) @ Tensor([[5.0, 6.0], [7.0, 8.0]])
    assert np.array_equal(out.data, [[19, 22], [43, 50]])


def test_matmul_grad_is_ones_times_bT():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True, dtype="f64")
    b = Tensor(rng.normal(size=(4, 2)), dtype="f64")
    tsum(a @ b).backward()
    assert np.allclose(a.grad, np.ones((3, 2)) @ b.data.T)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


# -------------------------------------------------------------------- conv


def test_conv_identity_kernel():
    x = Tensor(np.random.default_rng(1).normal(size=(2, 3, 5, 5)))
    k = np.zeros((3, 3, 1, 1), dtype=np.float32)
    k[np.arange(3), np.arange(3)] = 1.0
    assert np.allclose(F.conv2d(x, Tensor(k), None, 1, 0).data, x.data)


def test_conv_all_ones_center_is_nine():
    out = F.conv2d(Tensor(np.ones((1, 1, 5, 5))), Tensor(np.ones((1, 1, 3, 3))), None, 1, 1)
    assert out.data[0, 0, 2, 2] == 9.0
    assert out.data[0, 0, 0, 0] == 4.0


@pytest.mark.parametrize("H,k,s,p", [(7, 3, 2, 1), (8, 3, 1, 0), (9, 5, 2, 2), (6, 1, 3, 0)])
def test_conv_output_size_formula(H, k, s, p):
    out = F.conv2d(Tensor(np.zeros((1, 2, H, H))), Tensor(np.zeros((3, 2, k, k))), None, s, p)
    assert out.shape == (1, 3, (H + 2 * p - k) // s + 1, (H + 2 * p - k) // s + 1)


def test_conv_kernel_too_large():
    with pytest.raises(ShapeError):
        F.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), None, 1, 0)


# ------------------------------------------------------------ pool / resize


def test_adaptive_avg_window_means():
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 1, 4))
    assert np.allclose(F.adaptive_avg_pool(x, (1, 2)).data.ravel(), [1.5, 3.5])


@pytest.mark.parametrize("mode", ["adaptive_avg", "upsample_bilinear", "upsample_nearest"])
@pytest.mark.parametrize("out_hw", [(1, 1), (3, 5), (8, 2), (11, 13)])
def test_resize_constant_invariance(mode, out_hw):
    x = Tensor(np.full((1, 2, 4, 6), 2.5))
    assert np.allclose(F.pool_resize(x, mode, out_hw).data, 2.5)


def test_upsample_then_pool_back_constant():
    x = Tensor(np.full((1, 1, 3, 4), -1.25))
    up = F.upsample(x, (9, 16))
    assert np.allclose(F.adaptive_avg_pool(up, (3, 4)).data, x.data)


def test_resize_rejects_empty_output():
    with pytest.raises(ShapeError):
        F.pool_resize(Tensor(np.zeros((1, 1, 2, 2))), "adaptive_avg", (0, 2))


# --------------------------------------------------------------- primitives


def test_softmax_closed_forms():
    assert np.allclose(F.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])
    assert np.allclose(F.softmax(Tensor([math.log(2.0), 0.0], dtype="f64")).data, [2 / 3, 1 / 3])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 7))
def test_softmax_rows_sum_to_one_and_positive(seed, rows, cols):
    x = Tensor(np.random.default_rng(seed).normal(scale=10, size=(rows, cols)))
    p = F.softmax(x, axis=1).data
    assert np.all(p > 0)
    assert np.allclose(p.sum(1), 1.0, atol=1e-6)


def test_softmax_invalid_axis():
    with pytest.raises(ShapeError):
        F.softmax(Tensor(np.zeros((2, 3))), axis=2)


def test_layer_norm_moments():
    x = Tensor(np.random.default_rng(3).normal(3.0, 5.0, size=(4, 16)), dtype="f64")
    y = F.layer_norm(x, eps=0.0).data
    assert np.allclose(y.mean(-1), 0.0, atol=1e-12)
    assert np.allclose(y.var(-1), 1.0, atol=1e-10)


def test_dropout_eval_is_identity_and_train_uses_mask():
    x = Tensor(np.ones((50, 50)))
    assert F.dropout(x, 0.1, 0, train=False) is x
    y = F.dropout(x, 0.1, 0, train=True).data
    assert set(np.unique(y).round(6)) <= {0.0, round(1 / 0.9, 6)}
    with pytest.raises(ValueError):
        F.dropout(x, 1.0, 0)


def test_concat_and_stack_values():
    a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])
    from prix.tensor.tensor import concat, stack
    assert np.array_equal(concat([a, b], axis=0).data, [[1, 2], [3, 4]])
    assert stack([a, b], axis=0).shape == (2, 1, 2)


def test_gelu_relu_values():
    from prix.tensor.tensor import gelu, relu
    x = Tensor([-1.0, 0.0, 2.0], dtype="f64")
    assert np.array_equal(relu(x).data, [0, 0, 2])
    assert gelu(x).data[1] == 0.0 and 1.9 < gelu(x).data[2] < 2.0


# ------------------------------------------------------------------- losses


def test_l1_identical_zero():
    x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
    assert F.l1_loss(x, x.data).item() == 0.0


def test_ce_perfect_prediction_zero():
    logits = Tensor(np.array([[100.0, 0.0, 0.0]]), dtype="f64")
    assert F.cross_entropy(logits, np.array([0])).item() < 1e-12


def test_focal_matches_definition_at_p_0_9():
    p = 0.9
    logits = Tensor(np.log(np.array([[p, 1 - p]])), dtype="f64")
    ce = F.cross_entropy(logits, np.array([0])).item()
    assert np.isclose(ce, -math.log(p))
    focal = F.focal_loss(logits, np.array([0]), gamma=2.0, alpha=1.0).item()
    assert np.isclose(focal, (1 - p) ** 2 * ce, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_focal_gamma0_alpha1_equals_ce(seed):
    rng = np.random.default_rng(seed)
    logits = Tensor(rng.normal(scale=3, size=(6, 5)), dtype="f64")
    target = rng.integers(0, 5, size=6)
    a = F.focal_loss(logits, target, gamma=0.0, alpha=1.0).item()
    b = F.cross_entropy(logits, target).item()
    assert abs(a - b) <= 1e-12 * max(1.0, abs(b))


def test_class_index_out_of_range():
    with pytest.raises(DomainError):
        F.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


# ----------------------------------------------------------------- backward


def test_backward_linear_and_square():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    tsum(x).backward()
    assert np.array_equal(x.grad, [1, 1, 1])
    y = Tensor(np.array([3.0]), requires_grad=True)
    tsum(y * y).backward()
    assert y.grad[0] == 6.0


def test_backward_accumulates_without_reset():
    x = Tensor(np.array([2.0]), requires_grad=True)
    tsum(x * 3.0).backward()
    tsum(x * 3.0).backward()
    assert x.grad[0] == 6.0


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_no_grad_builds_no_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


@pytest.mark.parametrize("name", sorted(CASES))
def test_gradcheck_f64(name):
    worst = max(check_gradients(*CASES[name](s), max_probes=12, seed=s) for s in range(3))
    assert worst < 1e-4


@pytest.mark.parametrize("name", ["matmul", "softmax", "layer_norm", "conv2d", "gelu"])
def test_gradcheck_f32_loose(name):
    fn, inputs = CASES[name](0)
    for t in inputs:
        t.data = t.data.astype(np.float32)
    assert check_gradients(fn, inputs, eps=1e-2, max_probes=12) < 1e-2


# --------------------------------------------------------------- optimizer


def test_adamw_zero_grad_zero_decay_is_noop():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = AdamW([p], lr=0.1, weight_decay=0.0)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.0, -2.0])


def test_adamw_descends_on_square():
    w = Tensor(np.array([1.0]), requires_grad=True, dtype="f64")
    opt = AdamW([w], lr=0.1, weight_decay=1e-3)
    tsum(w * w).backward()
    opt.step()
    assert abs(w.data[0]) < 1.0


def test_multistep_lr_and_group_multiplier():
    enc, head = Tensor(np.ones(1), requires_grad=True), Tensor(np.ones(1), requires_grad=True)
    groups = [ParamGroup([enc], 0.5), ParamGroup([head], 1.0)]
    opt = AdamW(groups, lr=1e-3, milestones=(2, 4), gamma=0.1)
    assert opt.lr(groups[0]) == pytest.approx(5e-4)
    opt.epoch_step()
    opt.epoch_step()
    assert opt.lr(groups[1]) == pytest.approx(1e-4)
    assert opt.lr(groups[0]) == pytest.approx(5e-5)
    opt.epoch_step()
    opt.epoch_step()
    assert opt.lr(groups[1]) == pytest.approx(1e-5)


def test_adamw_decoupled_decay_matches_closed_form():
    # first step: m_hat = g, v_hat = g^2, so the update is lr * sign(g) plus decay lr*wd*w
    w = Tensor(np.array([2.0]), requires_grad=True, dtype="f64")
    opt = AdamW([w], lr=0.1, weight_decay=0.5, eps=0.0)
    w.grad = np.array([3.0])
    opt.step()
    assert w.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.5) - 0.1)


def test_adamw_nan_grad_aborts_with_name():
    lin = Linear(2, 2, np.random.default_rng(0))
    opt = AdamW([ParamGroup(lin.parameters(), 1.0, ["weight", "bias"])])
    lin.weight.grad = np.full((2, 2), np.nan)
    before = lin.weight.data.copy()
    with pytest.raises(FloatingPointError, match="weight"):
        opt.step()
    assert np.array_equal(lin.weight.data, before)


def test_training_steps_are_deterministic():
    def run():
        lin = Linear(3, 2, np.random.default_rng(5))
        opt = AdamW(lin.parameters(), lr=1e-2)
        x = Tensor(np.random.default_rng(6).normal(size=(4, 3)))
        for _ in range(3):
            opt.zero_grad()
            tsum(lin(x) * lin(x)).backward()
            opt.step()
        return lin.weight.data.copy()

    assert np.array_equal(run(), run())
