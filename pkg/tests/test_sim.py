import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prix.errors import ConfigError, ContractError, DataError, DomainError
from prix.sim.geometry import box_overlap, points_in_polygon, time_to_collision
from prix.sim.render import COLORS, CameraRig, agent_targets, render_inputs, semantic_map
from prix.sim.scenes import (
    CLASS_VEHICLE, KINDS, Agent, EgoState, Light, Scene, generate_scene, generate_split, read_scenes,
    write_scenes,
)
from prix.sim.scoring import (
    MetricConfig, epdms_aggregate, extended_submetrics, min_time_to_collision, pdms_aggregate, score_scene,
    score_submetrics,
)

ALL = ("NC", "DAC", "TTC", "EP", "C", "DDC", "TL", "LK", "HC", "EC")


def straight_scene(agents=(), lights=(), v=5.0) -> Scene:
    """Hand-built two-lane straight road, ego cruising at ``v`` along y=0."""
    drivable = np.array([[-30.0, -1.75], [120.0, -1.75], [120.0, 5.25], [-30.0, 5.25]])
    ego_lane = np.stack([np.linspace(-30, 120, 301), np.zeros(301)], axis=1)
    opp_lane = np.stack([np.linspace(120, -30, 301), np.full(301, 3.5)], axis=1)
    t = 0.5 * np.arange(1, 9)
    gt = np.stack([v * t, np.zeros(8), np.zeros(8)], axis=1)
    return Scene("straight", 0, drivable, [ego_lane, opp_lane], list(agents), gt, EgoState(v, 0.0, 1),
                 list(lights))


def parked(x, y, w=1.9, l=4.5) -> Agent:
    return Agent(np.array([x, y, w, l, 0.0]), CLASS_VEHICLE, np.tile([x, y, 0.0], (8, 1)))


# ----------------------------------------------------------------- geometry


def test_box_overlap_examples():
    a = np.array([0.0, 0.0, 2.0, 2.0, 0.0])
    assert box_overlap(a, a)
    assert not box_overlap(a, [100.0, 0.0, 2.0, 2.0, 0.0])
    # unit squares rotated 45 degrees; corner of one touches the corner of the other
    h = math.sqrt(2) / 2
    assert box_overlap([0.0, 0.0, 1.0, 1.0, math.pi / 4], [2 * h, 0.0, 1.0, 1.0, math.pi / 4])
    with pytest.raises(DomainError):
        box_overlap([0, 0, 0, 1, 0], a)


def test_time_to_collision_closing_agent():
    ego = [0.0, 0.0, 2.0, 4.0, 0.0]
    agent = [14.0, 0.0, 2.0, 4.0, 0.0]  # 10 m gap between facing bumpers
    assert time_to_collision(ego, [0, 0], agent, [-5.0, 0.0]) == pytest.approx(2.0)
    assert math.isinf(time_to_collision(ego, [0, 0], agent, [5.0, 0.0]))


def test_points_in_polygon_square():
    sq = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    inside = points_in_polygon(np.array([[0.5, 0.5], [2.0, 0.5], [1.0, 0.5]]), sq)
    assert inside.tolist() == [True, False, True]


# ------------------------------------------------------------------- scenes


@pytest.mark.parametrize("kind", KINDS)
def test_generate_is_deterministic(kind):
    a, b = generate_scene(kind, 11), generate_scene(kind, 11)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())


@pytest.mark.parametrize("kind", KINDS)
def test_scene_invariants(kind):
    for seed in range(3):
        s = generate_scene(kind, seed)
        assert points_in_polygon(s.ego_gt[:, :2], s.drivable).all()
        assert all(a.script.shape == s.ego_gt.shape for a in s.agents)


def test_straight_gt_stays_in_lane():
    for seed in range(5):
        s = generate_scene("straight", seed)
        assert np.all(np.abs(s.ego_gt[:, 1]) <= 1.75)


def test_jam_has_two_agents_ahead():
    for seed in range(5):
        s = generate_scene("jam", seed)
        ahead = [a for a in s.agents if 0 < a.box[0] <= 15.0 and abs(a.box[1]) < 1.75]
        assert len(ahead) >= 2


def test_unknown_kind_is_data_error():
    with pytest.raises(DataError):
        generate_scene("roundabout", 0)


def test_scene_file_round_trip(tmp_path):
    scenes = generate_split(8, 3)
    path = tmp_path / "s.jsonl"
    write_scenes(path, scenes)
    back = read_scenes(path)
    assert [json.dumps(s.to_dict()) for s in back] == [json.dumps(s.to_dict()) for s in scenes]


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.pop("lights"), "fields mismatch"),
    (lambda d: d.update(extra=1), "fields mismatch"),
    (lambda d: d.update(kind="moon"), "unknown scene kind"),
    (lambda d: d.update(ego_gt=[[0, 0]]), "ego_gt"),
    (lambda d: d["ego_state"].update(v=float("nan")), "finite"),
])
def test_scene_file_validation(tmp_path, mutate, match):
    d = generate_scene("straight", 0).to_dict()
    mutate(d)
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(generate_scene("curve", 0).to_dict()) + "\n" + json.dumps(d) + "\n")
    with pytest.raises(DataError, match=f"bad.jsonl:2:.*{match}"):
        read_scenes(path)


def test_missing_scene_file_is_data_error(tmp_path):
    with pytest.raises(DataError):
        read_scenes(tmp_path / "nope.jsonl")


# ------------------------------------------------------------------- render


def test_render_deterministic_and_shaped():
    s = generate_scene("intersection", 4)
    a, b = render_inputs(s), render_inputs(s)
    assert a.images.shape == (3, 3, 64, 64) and a.images.dtype == np.float32
    assert np.array_equal(a.images, b.images) and np.array_equal(a.semantic, b.semantic)
    assert a.images.min() >= 0.0 and a.images.max() <= 1.0


def _agent_pixels(images) -> np.ndarray:
    base = np.array(COLORS[CLASS_VEHICLE])
    px = images.transpose(0, 2, 3, 1)
    # vehicle faces are the base colour scaled by a shade factor in (0, 1]
    ratio = px / base
    return np.all(np.abs(ratio - ratio[..., :1]) < 1e-4, axis=-1) & (ratio[..., 0] > 0.5)


def test_empty_scene_has_no_agent_pixels():
    assert not _agent_pixels(render_inputs(straight_scene()).images).any()


def test_agent_ahead_lands_in_front_view_center_band():
    imgs = render_inputs(straight_scene([parked(12.0, 0.0)])).images
    mask = _agent_pixels(imgs)
    assert not mask[0].any() and not mask[2].any()
    cols = np.nonzero(mask[1].any(axis=0))[0]
    assert cols.size and cols.min() >= 16 and cols.max() < 48
    u, _ = CameraRig().project(np.array([12.0 - 2.25, 0.0, 0.75]), 1)
    assert cols.min() <= u <= cols.max()


def test_semantic_and_box_targets():
    s = straight_scene([parked(12.0, 0.0)])
    sem = semantic_map(s)
    assert sem.shape == (64, 64) and sem.min() >= 0 and sem.max() < 7
    assert (sem == CLASS_VEHICLE).any()
    assert agent_targets(s).shape == (1, 5)


# ------------------------------------------------------------------ scoring


def test_gt_on_clean_scene_scores_all_ones():
    r = score_scene(straight_scene(), straight_scene().ego_gt)
    assert all(r.scores[m] == 1.0 for m in ALL)
    assert r.pdms == 1.0 and r.epdms == 1.0


def test_driving_into_stopped_agent_collides():
    s = straight_scene([parked(7.25, 0.0)])  # rear bumper 5 m ahead of the front bumper
    assert score_submetrics(s.ego_gt, s)["NC"] == 0.0


def test_projected_ttc_two_seconds():
    agent = Agent(np.array([14.5, 0.0, 1.9, 4.5, 0.0]), CLASS_VEHICLE,
                  np.array([[14.5 - 2.5 * k, 0.0, 0.0] for k in range(1, 9)]))
    s = straight_scene([agent])
    ego0 = [0.0, 0.0, 1.9, 4.5, 0.0]
    assert time_to_collision(ego0, [0.0, 0.0], agent.box_at(0), agent.velocity_at(0)) == pytest.approx(2.0)
    # over the plan the gap shrinks 2.5 m per step; the last non-overlapping step is 0.5 s away
    assert min_time_to_collision(np.zeros((8, 3)), s, MetricConfig()) == pytest.approx(0.5)


def test_red_light_and_reverse_driving():
    light = Light(np.array([[10.0, -1.75], [10.0, 1.75]]), "red")
    s = straight_scene(lights=[light])
    assert extended_submetrics(s.ego_gt, s)["TL"] == 0.0
    back = s.ego_gt.copy()
    back[:, 0] *= -1
    assert extended_submetrics(back, s)["DDC"] == 0.0


def test_standing_still_has_no_progress():
    s = straight_scene()
    assert score_submetrics(np.zeros((8, 3)), s)["EP"] == 0.0


def test_horizon_mismatch_is_contract_error():
    with pytest.raises(ContractError):
        score_submetrics(np.zeros((5, 3)), straight_scene())


def test_missing_centerlines_is_config_error():
    s = straight_scene()
    s.centerlines = []
    with pytest.raises(ConfigError):
        extended_submetrics(s.ego_gt, s)


def test_pdms_examples():
    ones = {m: 1.0 for m in ALL}
    assert pdms_aggregate(ones) == 1.0
    assert pdms_aggregate({**ones, "NC": 0.0}) == 0.0
    assert abs(pdms_aggregate({**ones, "EP": 0.8}) - 11 / 12) < 1e-12
    with pytest.raises(ContractError):
        pdms_aggregate({"NC": 1.0})


def test_epdms_examples():
    ones = {m: 1.0 for m in ALL}
    assert epdms_aggregate({**ones, "EP": 0.8}, ones) == pytest.approx(0.9375, abs=1e-12)
    # the human fails DAC too, so DAC is neutral
    assert epdms_aggregate({**ones, "DAC": 0.0}, {**ones, "DAC": 0.0}) == 1.0
    # every averaged metric filtered out
    assert epdms_aggregate(ones, {m: 0.0 for m in ALL}) == 0.0


def _random_report(rng) -> dict:
    r = {m: float(rng.integers(0, 2)) for m in ALL}
    r["EP"] = float(rng.uniform())
    return r


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from(ALL), st.floats(0, 1))
def test_aggregates_bounded_and_monotone(seed, metric, bump):
    rng = np.random.default_rng(seed)
    a, h = _random_report(rng), _random_report(rng)
    better = dict(a)
    better[metric] = max(a[metric], bump if metric == "EP" else 1.0)
    for f in (lambda r: pdms_aggregate(r), lambda r: epdms_aggregate(r, h)):
        assert 0.0 <= f(a) <= 1.0
        assert f(better) >= f(a) - 1e-12


def test_metric_config_validation():
    with pytest.raises(ConfigError):
        MetricConfig(penalty=("NC", "EP")).validate()
    with pytest.raises(ConfigError):
        MetricConfig(weights={"EP": 0.0}).validate()
