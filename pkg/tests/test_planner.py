import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prix.errors import ConfigError, DomainError, ShapeError
from prix.planner import (
    AnchorSet, DiffusionPlanner, PlannerConfig, TrajectoryNormalizer, closed_form_zero_noise, denoise_step,
    ego_features, forward_diffuse, inference_timesteps, make_anchors, make_planner, make_schedule,
    plan_variant, select_candidate, timestep_embedding,
)
from prix.planner.diffusion import GATE_GAIN
from prix.tensor.gradcheck import check_gradients
from prix.tensor.tensor import Tensor, tsum

SMALL = dict(horizon=4, num_anchors=5, hidden=16, num_blocks=2, time_embed_dim=8)


def _planner(seed=0, dtype="f64", **kw) -> DiffusionPlanner:
    rng = np.random.default_rng(seed)
    p = DiffusionPlanner(PlannerConfig(**{**SMALL, **kw}), 6, rng).astype(dtype)
    trajs = rng.normal(size=(40, 4, 3)) * [5.0, 1.0, 0.1] + [10.0, 0.0, 0.0]
    p.set_anchors(make_anchors(trajs, 5, seed), TrajectoryNormalizer.fit(trajs))
    return p


def _ctx(B, seed=1):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(B, 6)), ego_features(rng.uniform(0, 10, B), rng.normal(size=B), rng.integers(0, 3, B))


def _randomize_heads(p, seed=2):
    rng = np.random.default_rng(seed)
    for t in (p.eps_head.weight, p.eps_head.bias, p.conf_head.fc2.weight, p.conf_head.fc2.bias, p.anchor_gate):
        t.data[:] = rng.normal(scale=0.3, size=t.shape)


# ----------------------------------------------------------------- schedule


def test_constant_beta_closed_form():
    s = make_schedule(3, "constant", beta=0.1)
    assert np.allclose(s.alpha_bars, [0.9, 0.81, 0.729])


def test_linear_schedule_endpoints_and_monotone():
    s = make_schedule(50, "linear", 1e-4, 2e-2)
    assert s.betas[0] == pytest.approx(1e-4) and s.betas[-1] == pytest.approx(2e-2)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert np.all((s.alpha_bars > 0) & (s.alpha_bars < 1))


def test_zero_beta_keeps_signal():
    assert np.all(make_schedule(4, "constant", beta=0.0).alpha_bars == 1.0)


@pytest.mark.parametrize("kw", [dict(n=0), dict(n=3, kind="constant", beta=1.0), dict(n=3, kind="cosine"),
                                dict(n=3, kind="explicit", beta=[0.1, 0.2])])
def test_schedule_rejects_bad_input(kw):
    with pytest.raises(DomainError):
        make_schedule(**kw)


def test_forward_diffuse_limits():
    tau0 = np.random.default_rng(0).normal(size=(4, 3))
    s = make_schedule(3, "constant", beta=0.0)
    assert np.array_equal(forward_diffuse(tau0, 2, s, np.ones_like(tau0)), tau0)
    s = make_schedule(10)
    assert np.allclose(forward_diffuse(tau0, 5, s, np.zeros_like(tau0)), np.sqrt(s.alpha_bar(5)) * tau0)
    with pytest.raises(DomainError):
        forward_diffuse(tau0, 0, s, tau0)
    with pytest.raises(DomainError):
        forward_diffuse(tau0, 11, s, tau0)


def test_denoise_oracle_recovers_clean():
    rng = np.random.default_rng(1)
    s = make_schedule(50)
    tau0, eps = rng.normal(size=(8, 3)), rng.normal(size=(8, 3))
    tau = forward_diffuse(tau0, 30, s, eps)
    assert np.allclose(denoise_step(tau, eps, 30, 0, s), tau0, atol=1e-12)
    assert np.allclose(denoise_step(tau, np.zeros_like(tau), 30, 0, s), tau / np.sqrt(s.alpha_bar(30)))
    mid = denoise_step(forward_diffuse(tau0, 50, s, eps), eps, 50, 25, s)
    assert np.max(np.abs(denoise_step(mid, eps, 25, 0, s) - tau0)) < 1e-6
    with pytest.raises(DomainError):
        denoise_step(tau, eps, 3, 3, s)


def test_inference_grid():
    assert inference_timesteps(25, 2) == [25, 12, 0] or inference_timesteps(25, 2) == [25, 13, 0]
    assert inference_timesteps(25, 25) == list(range(25, -1, -1))
    with pytest.raises(DomainError):
        inference_timesteps(5, 6)


def test_timestep_embedding_shape_and_distinct():
    e = timestep_embedding([1, 2, 25], 32)
    assert e.shape == (3, 32)
    assert not np.allclose(e[0], e[1])


# ---------------------------------------------------------------- condition


def test_ego_features_and_validation():
    f = ego_features([5.0], [1.5], [2])
    assert np.allclose(f, [[0.5, 0.5, 0, 0, 1]])
    with pytest.raises(DomainError):
        ego_features([np.nan], [0.0], [0])
    with pytest.raises(DomainError):
        ego_features([1.0], [0.0], [3])


def test_condition_deterministic_shape_and_command_sensitive():
    p = _planner()
    cv, ego = _ctx(2)
    a, b = p.build_condition(cv, ego), p.build_condition(cv, ego)
    assert a.fused.shape == (2, 5, 16) and a.num_candidates == 5
    assert np.array_equal(a.fused.data, b.fused.data)
    ego2 = ego.copy()
    ego2[:, 2:] = np.roll(ego2[:, 2:], 1, axis=1)
    assert not np.allclose(a.fused.data, p.build_condition(cv, ego2).fused.data)


def test_condition_shape_errors():
    p = _planner()
    cv, ego = _ctx(2)
    with pytest.raises(ShapeError):
        p.build_condition(cv[:, :5], ego)
    with pytest.raises(ShapeError):
        p.build_condition(cv, ego[:, :4])


# ------------------------------------------------------------ noise network


def test_zero_init_output_gives_zero_noise_and_logits():
    p = _planner()
    cv, ego = _ctx(3)
    tau = np.random.default_rng(0).normal(size=(3, 5, 4, 3))
    eps, logits = p(tau, 7, cv, ego)
    assert np.all(eps.data == 0) and np.all(logits.data == 0)


def test_candidate_permutation_equivariance():
    p = _planner()
    _randomize_heads(p)
    cv, ego = _ctx(2)
    rng = np.random.default_rng(3)
    tau = rng.normal(size=(2, 5, 4, 3))
    anchors = p.start_candidates()
    perm = rng.permutation(5)
    e1, l1 = p.predict_noise(tau, 9, p.build_condition(cv, ego, anchors))
    e2, l2 = p.predict_noise(tau[:, perm], 9, p.build_condition(cv, ego, anchors[perm]))
    assert np.allclose(e1.data[:, perm], e2.data, atol=1e-10)
    assert np.allclose(l1.data[:, perm], l2.data, atol=1e-10)


def test_noise_gradcheck_wrt_candidates_and_params():
    p = _planner()
    _randomize_heads(p)
    cv, ego = _ctx(2)
    rng = np.random.default_rng(4)
    tau = Tensor(rng.normal(size=(2, 5, 4, 3)), requires_grad=True, dtype="f64")
    w_e, w_l = rng.normal(size=(2, 5, 4, 3)), rng.normal(size=(2, 5))

    def fn():
        eps, logits = p.predict_noise(tau, np.array([3, 20]), p.build_condition(cv, ego))
        return tsum(eps * w_e) + tsum(logits * w_l)

    assert check_gradients(fn, [tau] + p.parameters(), max_probes=10) < 1e-4


def test_open_gate_reduces_clean_estimate_to_anchor_minus_head():
    # with the gate at 1/GATE_GAIN the implied clean trajectory is anchor - head(h)
    p = _planner()
    p.anchor_gate.data[:] = 1.0 / GATE_GAIN
    cv, ego = _ctx(2)
    tau = np.random.default_rng(5).normal(size=(2, 5, 4, 3))
    cond = p.build_condition(cv, ego)
    eps, _ = p.predict_noise(tau, 10, cond)
    x0 = denoise_step(tau, eps.data, 10, 0, p.sched)
    assert np.allclose(x0, cond.anchors, atol=1e-10)


# ------------------------------------------------------------------- plan


def test_zero_network_matches_closed_form():
    p = _planner()
    cv, ego = _ctx(2)
    noise = np.random.default_rng(6).normal(size=(2, 5, 4, 3))
    out = p.plan(cv, ego, noise=noise, steps=2)
    start = np.broadcast_to(p.start_candidates(), (2, 5, 4, 3))
    expected = p.normalizer.denormalize(closed_form_zero_noise(start, noise, 25, p.sched))
    assert np.allclose(out.candidates, expected, atol=1e-10)
    assert np.allclose(out.confidences, 0.2)


def test_plan_deterministic_and_step_sensitive():
    p = _planner()
    _randomize_heads(p)
    cv, ego = _ctx(2)
    a, b = p.plan(cv, ego, rng=3), p.plan(cv, ego, rng=3)
    assert np.array_equal(a.candidates, b.candidates) and np.array_equal(a.selected, b.selected)
    one = p.plan(cv, ego, rng=3, steps=1)
    assert one.candidates.shape == a.candidates.shape == (2, 5, 4, 3)
    assert not np.allclose(one.candidates, a.candidates)
    assert np.array_equal(a.trajectory, a.candidates[np.arange(2), a.selected])


def test_plan_rejects_bad_steps_and_noise():
    p = _planner()
    cv, ego = _ctx(1)
    with pytest.raises(DomainError):
        p.plan(cv, ego, steps=0)
    with pytest.raises(DomainError):
        p.plan(cv, ego, steps=51)
    with pytest.raises(ShapeError):
        p.plan(cv, ego, noise=np.zeros((1, 4, 4, 3)))


def test_select_candidate():
    assert select_candidate([0.1, 0.9, 0.3]) == 1
    with pytest.raises(ConfigError):
        select_candidate(np.zeros((2, 0)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_selection_invariant_to_monotone_transform(seed):
    logits = np.random.default_rng(seed).normal(size=(3, 7))
    for f in (np.exp, lambda x: 3 * x + 1, np.tanh, lambda x: x ** 3):
        assert np.array_equal(select_candidate(logits), select_candidate(f(logits)))


def test_empty_anchor_set_is_config_error():
    p = _planner()
    with pytest.raises(ConfigError):
        p.set_anchors(AnchorSet(np.zeros((0, 4, 3))), TrajectoryNormalizer.identity(4))


def test_planner_config_validation():
    for kw in (dict(head="gru"), dict(truncation=0), dict(inference_steps=0), dict(train_steps=2)):
        with pytest.raises(ConfigError):
            PlannerConfig(**kw).validate()


def test_training_loss_runs_and_backprops():
    p = _planner()
    cv, ego = _ctx(3)
    gt = np.random.default_rng(7).normal(size=(3, 4, 3)) + [10.0, 0.0, 0.0]
    loss, info = p.loss(cv, ego, gt, np.random.default_rng(0))
    loss.backward()
    assert np.isfinite(loss.item()) and info["conf_ce"] == pytest.approx(np.log(5))
    assert np.any(p.eps_head.weight.grad != 0) and np.any(p.anchor_gate.grad != 0)


# ---------------------------------------------------------------- anchors


def test_single_anchor_is_mean():
    trajs = np.random.default_rng(0).normal(size=(30, 4, 3))
    assert np.allclose(make_anchors(trajs, 1).anchors[0], trajs.mean(0))


def test_saturated_anchors_are_the_inputs():
    trajs = np.random.default_rng(1).normal(size=(6, 4, 3))
    a = make_anchors(trajs, 6).anchors.reshape(6, -1)
    assert sorted(map(tuple, a.round(12))) == sorted(map(tuple, trajs.reshape(6, -1).round(12)))


def test_two_bundles_recover_bundle_means():
    rng = np.random.default_rng(2)
    b1 = rng.normal(size=(20, 4, 3)) * 0.1
    b2 = rng.normal(size=(30, 4, 3)) * 0.1 + 50.0
    a = make_anchors(np.concatenate([b1, b2]), 2, seed=3).anchors
    a = a[np.argsort(a[:, 0, 0])]
    assert np.max(np.abs(a[0] - b1.mean(0))) < 1e-6
    assert np.max(np.abs(a[1] - b2.mean(0))) < 1e-6


def test_anchor_errors_and_determinism():
    trajs = np.random.default_rng(3).normal(size=(10, 4, 3))
    with pytest.raises(ConfigError):
        make_anchors(trajs, 11)
    with pytest.raises(ConfigError):
        make_anchors(trajs[:0], 1)
    assert np.array_equal(make_anchors(trajs, 4, 9).anchors, make_anchors(trajs, 4, 9).anchors)


# --------------------------------------------------------------- variants


@pytest.mark.parametrize("head", ["mlp", "transformer", "lstm", "ego_mlp"])
def test_variant_output_shape(head):
    p = make_planner(PlannerConfig(head=head, **SMALL), 6, np.random.default_rng(0))
    cv, ego = _ctx(2)
    assert plan_variant(cv, ego, p).shape == (2, 4, 3)


def test_ego_mlp_ignores_visual_features():
    p = make_planner(PlannerConfig(head="ego_mlp", **SMALL), 6, np.random.default_rng(0))
    cv, ego = _ctx(2)
    assert np.array_equal(plan_variant(cv, ego, p), plan_variant(cv * 100 + 3, ego, p))


def test_lstm_recurrence_matters():
    p = make_planner(PlannerConfig(head="lstm", **SMALL), 6, np.random.default_rng(0))
    cv, ego = _ctx(2)
    before = plan_variant(cv, ego, p)
    p.w_h.weight.data[:] = 0.0
    after = plan_variant(cv, ego, p)
    # the first waypoint sees the initial hidden state only through the recurrent weights too
    assert not np.allclose(before[:, 1:], after[:, 1:])
