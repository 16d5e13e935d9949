import numpy as np
import pytest

from prix.backbone import (
    FPN, AttentionStack, BackboneConfig, CaRT, CaRTConfig, MultiHeadSelfAttention, Stage, VisualEncoder,
    cart_recalibrate, count_params, fpn_topdown, shared_attention,
)
from prix.errors import ConfigError, ShapeError
from prix.tensor.gradcheck import check_gradients
from prix.tensor.optim import AdamW
from prix.tensor.tensor import Tensor, tsum


def _tiny(**cart) -> BackboneConfig:
    return BackboneConfig(channels=(4, 6), stem_channels=4, blocks_per_stage=1, num_cameras=2,
                          image_hw=(8, 8), fpn_dim=4,
                          cart=CaRTConfig(dim=8, pooled_hw=(2, 2), num_heads=2, dropout=0.0, **cart))


def _x(rng, *shape, dtype="f64"):
    return Tensor(rng.normal(size=shape), dtype=dtype)


# ------------------------------------------------------------------- stages


def test_stage_halves_spatial_dims():
    rng = np.random.default_rng(0)
    out = Stage(3, 5, 2, rng)(_x(rng, 2, 3, 10, 12))
    assert out.shape == (2, 5, 5, 6)


def test_stage_zero_residual_is_shortcut_projection():
    rng = np.random.default_rng(1)
    st = Stage(3, 5, 2, rng).astype("f64")
    for b in st.blocks:
        b.conv2.weight.data[:] = 0.0
        b.conv2.bias.data[:] = 0.0
    x = Tensor(np.full((1, 3, 6, 6), 0.7), dtype="f64")
    assert np.array_equal(st(x).data, st.blocks[0].shortcut(x).data)


def test_stage_channel_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        Stage(3, 5, 1, rng)(_x(rng, 1, 4, 6, 6))


def test_stage_gradcheck():
    rng = np.random.default_rng(2)
    st = Stage(2, 3, 1, rng).astype("f64")
    x = Tensor(rng.normal(size=(1, 2, 6, 6)), requires_grad=True, dtype="f64")
    w = rng.normal(size=(1, 3, 3, 3))
    assert check_gradients(lambda: tsum(st(x) * w), [x] + st.parameters(), max_probes=12) < 1e-4


# ---------------------------------------------------------------- attention


def test_single_token_attention_is_value_projection():
    rng = np.random.default_rng(3)
    attn = MultiHeadSelfAttention(8, 2, rng, fused=False).astype("f64")
    x = _x(rng, 2, 1, 8)
    assert np.allclose(attn(x).data, attn.out(attn.v(x)).data, atol=1e-12)


def test_zero_query_gives_mean_of_values():
    rng = np.random.default_rng(4)
    attn = MultiHeadSelfAttention(8, 2, rng, fused=False).astype("f64")
    attn.q.weight.data[:] = 0.0
    attn.q.bias.data[:] = 0.0
    x = _x(rng, 1, 5, 8)
    mean_v = attn.v(x).data.mean(axis=1, keepdims=True)
    expected = attn.out(Tensor(np.broadcast_to(mean_v, (1, 5, 8)).copy())).data
    assert np.allclose(attn(x).data, expected, atol=1e-12)


@pytest.mark.parametrize("fused", [True, False])
def test_attention_token_permutation_equivariance(fused):
    rng = np.random.default_rng(5)
    stack = AttentionStack(CaRTConfig(dim=8, num_heads=2, dropout=0.0, fused_qkv=fused), rng).astype("f64")
    x = rng.normal(size=(2, 6, 8))
    perm = rng.permutation(6)
    a = shared_attention(Tensor(x, dtype="f64"), stack).data
    b = shared_attention(Tensor(x[:, perm], dtype="f64"), stack).data
    assert np.max(np.abs(a[:, perm] - b)) < 1e-6


def test_fused_and_split_qkv_agree_with_copied_weights():
    rng = np.random.default_rng(6)
    fused = MultiHeadSelfAttention(8, 2, rng, fused=True).astype("f64")
    split = MultiHeadSelfAttention(8, 2, rng, fused=False).astype("f64")
    W, b = fused.qkv.weight.data, fused.qkv.bias.data
    for i, lin in enumerate((split.q, split.k, split.v)):
        lin.weight.data[:] = W[:, 8 * i:8 * (i + 1)]
        lin.bias.data[:] = b[8 * i:8 * (i + 1)]
    split.out.weight.data[:] = fused.out.weight.data
    split.out.bias.data[:] = fused.out.bias.data
    x = _x(rng, 2, 4, 8)
    assert np.allclose(fused(x).data, split(x).data, atol=1e-12)


def test_shared_attention_rejects_bad_rank():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        shared_attention(_x(rng, 4, 8), AttentionStack(CaRTConfig(dim=8, num_heads=2), rng))


def test_heads_must_divide_dim():
    with pytest.raises(ConfigError):
        CaRTConfig(dim=10, num_heads=4).validate()


# --------------------------------------------------------------------- CaRT


def test_dead_branch_add_merge_is_identity():
    rng = np.random.default_rng(7)
    cart = CaRT((4, 6), CaRTConfig(dim=8, pooled_hw=(2, 2), num_heads=2, merge_mode="add"), rng).astype("f64")
    for p in cart.out_proj:
        p.weight.data[:] = 0.0
        p.bias.data[:] = 0.0
    x = _x(rng, 2, 6, 5, 7)
    assert np.array_equal(cart_recalibrate(x, cart, 1).data, x.data)


@pytest.mark.parametrize("pooled", [(1, 1), (2, 3), (4, 8), (7, 9)])
@pytest.mark.parametrize("merge", ["add", "concat_project"])
def test_recalibration_preserves_shape(pooled, merge):
    rng = np.random.default_rng(8)
    cart = CaRT((4, 6), CaRTConfig(dim=8, pooled_hw=pooled, num_heads=2, merge_mode=merge), rng)
    x = _x(rng, 1, 4, 5, 6, dtype="f32")
    assert cart_recalibrate(x, cart, 0).shape == x.shape


def test_recalibrate_stage_index_checked():
    rng = np.random.default_rng(0)
    cart = CaRT((4,), CaRTConfig(dim=8, pooled_hw=(2, 2), num_heads=2), rng)
    with pytest.raises(ConfigError):
        cart_recalibrate(_x(rng, 1, 4, 4, 4), cart, 1)


def test_shared_attention_parameters_are_one_object():
    rng = np.random.default_rng(9)
    cart = CaRT((4, 6, 8, 10), CaRTConfig(dim=8, pooled_hw=(2, 2), num_heads=2), rng)
    assert all(a is cart.attention[0] for a in cart.attention)
    sep = CaRT((4, 6, 8, 10), CaRTConfig(dim=8, pooled_hw=(2, 2), num_heads=2, weight_sharing="separate"), rng)
    assert len({id(a) for a in sep.attention}) == 4


def test_shared_step_changes_every_level():
    rng = np.random.default_rng(10)
    cfg = CaRTConfig(dim=8, pooled_hw=(2, 2), num_heads=2, dropout=0.0, merge_mode="add")
    cart = CaRT((4, 4), cfg, rng).astype("f64")
    x = _x(rng, 1, 4, 4, 4)
    before = [cart.recalibrate(x, i)[1].data.copy() for i in range(2)]
    opt = AdamW(cart.parameters(), lr=1e-2)
    # gradient only from level 0; the shared block still moves level 1 too
    tsum(cart.recalibrate(x, 0)[1] * 1.0).backward()
    for p in cart.in_proj[1].parameters() + cart.out_proj[1].parameters():
        p.grad = None
    opt.step()
    after = [cart.recalibrate(x, i)[1].data for i in range(2)]
    assert not np.allclose(before[0], after[0])
    assert not np.allclose(before[1], after[1])


def test_disabled_cart_has_no_attention():
    rng = np.random.default_rng(0)
    cart = CaRT((4,), CaRTConfig(enabled=False), rng)
    assert cart.attention_blocks() == []
    x = _x(rng, 1, 4, 6, 6, dtype="f32")
    out, attn = cart.recalibrate(x, 0)
    assert attn is None and out.shape == x.shape


# ---------------------------------------------------------------------- FPN


def test_fpn_single_level_is_lateral_then_smooth():
    rng = np.random.default_rng(11)
    fpn = FPN((5,), 4, rng).astype("f64")
    x = _x(rng, 1, 5, 6, 6)
    assert np.array_equal(fpn_topdown(fpn, [x], [None]).data, fpn.smooth[0](fpn.lateral[0](x)).data)


def test_fpn_dead_shallow_lateral_keeps_deep_path_only():
    rng = np.random.default_rng(12)
    fpn = FPN((3, 5), 4, rng).astype("f64")
    fpn.lateral[0].weight.data[:] = 0.0
    fpn.lateral[0].bias.data[:] = 0.0
    shallow, deep = _x(rng, 1, 3, 8, 8), _x(rng, 1, 5, 4, 4)
    from prix.tensor.functional import upsample
    deep_path = upsample(fpn.smooth[1](fpn.lateral[1](deep)), (8, 8), "nearest")
    expected = fpn.smooth[0](deep_path).data
    assert np.allclose(fpn_topdown(fpn, [shallow, deep], [None, None]).data, expected, atol=1e-12)
    # changing the shallow input changes nothing
    other = fpn_topdown(fpn, [_x(rng, 1, 3, 8, 8), deep], [None, None]).data
    assert np.allclose(other, expected, atol=1e-12)


def test_fpn_level_count_checked():
    rng = np.random.default_rng(0)
    with pytest.raises(ShapeError):
        FPN((3, 5), 4, rng)([_x(rng, 1, 3, 4, 4)])


# ------------------------------------------------------------------ encoder


def test_encoder_shapes_default_config():
    rng = np.random.default_rng(13)
    enc = VisualEncoder(BackboneConfig(), rng)
    pyr, cv = enc(Tensor(rng.uniform(size=(1, 3, 3, 64, 64))))
    assert pyr.fused.shape == (1, 64, 16, 48)
    assert cv.shape == (1, 64)
    assert [s.shape[2] for s in pyr.stages] == [16, 8, 4, 2]


def test_encoder_deterministic_and_brightness_sensitive():
    rng = np.random.default_rng(14)
    enc = VisualEncoder(_tiny(), rng).eval()
    img = rng.uniform(size=(2, 2, 3, 8, 8))
    a = enc(Tensor(img))[1].data
    assert np.array_equal(a, enc(Tensor(img))[1].data)
    assert not np.allclose(a, enc(Tensor(2 * img))[1].data)


def test_encoder_camera_count_checked():
    enc = VisualEncoder(_tiny(), np.random.default_rng(0))
    with pytest.raises(ConfigError):
        enc(Tensor(np.zeros((1, 3, 3, 8, 8))))


def test_every_parameter_receives_gradient():
    rng = np.random.default_rng(15)
    enc = VisualEncoder(_tiny(), rng).astype("f64")
    pyr, cv = enc(Tensor(rng.uniform(size=(2, 2, 3, 8, 8)), dtype="f64"))
    tsum(pyr.fused * rng.normal(size=pyr.fused.shape)).backward()
    for name, p in enc.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_end_to_end_gradcheck_tiny():
    rng = np.random.default_rng(16)
    enc = VisualEncoder(_tiny(), rng).astype("f64")
    img = Tensor(rng.uniform(size=(1, 2, 3, 8, 8)), requires_grad=True, dtype="f64")
    w = rng.normal(size=(1, 4))
    assert check_gradients(lambda: tsum(enc(img)[1] * w), [img] + enc.parameters(), max_probes=4) < 1e-4


# ------------------------------------------------------------------- counts


def test_separate_attention_is_four_times_shared():
    shared = count_params(BackboneConfig())
    sep = count_params(BackboneConfig(cart=CaRTConfig(weight_sharing="separate")))
    assert sep["cart.attention"] == 4 * shared["cart.attention"]
    for k in ("stem", "stages", "cart.projections", "cart.merge", "fpn"):
        assert sep[k] == shared[k]


def test_counts_increase_with_width_and_cart():
    totals = [count_params(BackboneConfig(cart=CaRTConfig(dim=d)))["total"] for d in (32, 64, 96)]
    assert totals[0] < totals[1] < totals[2]
    assert count_params(BackboneConfig(cart=CaRTConfig(enabled=False)))["total"] < totals[0]
