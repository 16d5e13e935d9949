"""Flat-ground pinhole rendering of scenes and BEV semantic / box targets."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..planner.diffusion import ego_features
from .geometry import offset_polyline, point_segment_distance, points_in_polygon, polyline_distance, project_to_polyline
from .scenes import CLASS_PEDESTRIAN, CLASS_STATIC, CLASS_VEHICLE, LANE_WIDTH, Scene

SEM_BACKGROUND, SEM_DRIVABLE, SEM_DIVIDER, SEM_CROSSWALK = 0, 1, 2, 3
BEV_RES = 0.5
BEV_X = (-8.0, 24.0)
BEV_Y = (-16.0, 16.0)

AGENT_HEIGHT = {CLASS_VEHICLE: 1.5, CLASS_PEDESTRIAN: 1.7, CLASS_STATIC: 0.8}
COLORS = {
    "sky": (0.65, 0.80, 0.95),
    "offroad": (0.35, 0.55, 0.30),
    "road": (0.45, 0.45, 0.47),
    "divider": (0.95, 0.95, 0.85),
    "crosswalk": (0.90, 0.90, 0.90),
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.85, 0.20),
    CLASS_VEHICLE: (0.20, 0.30, 0.85),
    CLASS_PEDESTRIAN: (0.95, 0.55, 0.10),
    CLASS_STATIC: (0.60, 0.35, 0.15),
}
MAX_RANGE = 80.0


@dataclass(frozen=True)
class CameraRig:
    """Three cameras at the ego origin: left, front, right (canvas order)."""

    image_hw: tuple = (64, 64)
    fov_deg: float = 60.0
    height: float = 1.6
    pitch_deg: float = -10.0
    yaws_deg: tuple = (60.0, 0.0, -60.0)

    def rays(self) -> np.ndarray:
        return _rays(self)

    def project(self, point: np.ndarray, cam: int) -> tuple[float, float] | None:
        """Pixel (u, v) of an ego-frame 3D point in camera ``cam``, None if behind."""
        fwd, right, down = _basis(self, cam)
        rel = np.asarray(point, dtype=np.float64) - np.array([0.0, 0.0, self.height])
        z = rel @ fwd
        if z <= 0:
            return None
        H, W = self.image_hw
        f = (W / 2) / math.tan(math.radians(self.fov_deg) / 2)
        return W / 2 + f * (rel @ right) / z, H / 2 + f * (rel @ down) / z


def _basis(rig: CameraRig, cam: int):
    yaw, pitch = math.radians(rig.yaws_deg[cam]), math.radians(rig.pitch_deg)
    fwd = np.array([math.cos(pitch) * math.cos(yaw), math.cos(pitch) * math.sin(yaw), math.sin(pitch)])
    right = np.array([math.sin(yaw), -math.cos(yaw), 0.0])
    down = np.cross(fwd, right)
    return fwd, right, down


@lru_cache(maxsize=8)
def _rays(rig: CameraRig) -> np.ndarray:
    H, W = rig.image_hw
    f = (W / 2) / math.tan(math.radians(rig.fov_deg) / 2)
    u = (np.arange(W) + 0.5 - W / 2) / f
    v = (np.arange(H) + 0.5 - H / 2) / f
    out = np.zeros((len(rig.yaws_deg), H, W, 3))
    for c in range(len(rig.yaws_deg)):
        fwd, right, down = _basis(rig, c)
        d = fwd[None, None] + u[None, :, None] * right[None, None] + v[:, None, None] * down[None, None]
        out[c] = d / np.linalg.norm(d, axis=-1, keepdims=True)
    out.setflags(write=False)
    return out


# ------------------------------------------------------------ ground layers


def _junction_mask(pts: np.ndarray, lanes: list[np.ndarray]) -> np.ndarray:
    near, dirs = [], []
    for lane in lanes:
        _, dist, tan = project_to_polyline(pts, lane)
        near.append(dist <= LANE_WIDTH / 2 + 0.3)
        dirs.append(tan)
    mask = np.zeros(len(pts), dtype=bool)
    for i in range(len(lanes)):
        for j in range(i + 1, len(lanes)):
            perpendicular = np.abs((dirs[i] * dirs[j]).sum(-1)) < 0.5
            mask |= near[i] & near[j] & perpendicular
    return mask


def ground_layers(pts: np.ndarray, scene: Scene, line_halfwidth: float = 0.3) -> dict:
    """Boolean masks per ground layer for [N, 2] ego-frame points."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    drivable = points_in_polygon(pts, scene.drivable, tol=None)
    lanes = scene.centerlines[1:] if len(scene.centerlines) > 1 else scene.centerlines
    divider = np.zeros(len(pts), dtype=bool)
    for lane in lanes:
        line = offset_polyline(lane, LANE_WIDTH / 2)
        divider |= polyline_distance(pts, line) <= line_halfwidth
    divider &= drivable
    if divider.any() and len(lanes) > 2:
        idx = np.flatnonzero(divider)
        divider[idx[_junction_mask(pts[idx], lanes)]] = False
    crosswalk = np.zeros(len(pts), dtype=bool)
    stripes = np.zeros(len(pts), dtype=bool)
    stop = {"red": np.zeros(len(pts), dtype=bool), "green": np.zeros(len(pts), dtype=bool)}
    for light in scene.lights:
        right_end = light.stopline[0]
        fwd = light.travel_direction()
        lat = np.array([-fwd[1], fwd[0]])
        rel = pts - right_end
        along, across = rel @ fwd, rel @ lat
        band = (along >= 0.5) & (along <= 3.0) & (across >= 0) & (across <= 2 * LANE_WIDTH)
        crosswalk |= band
        stripes |= band & ((across % 1.0) < 0.5)
        seg = light.stopline
        stop[light.state] |= point_segment_distance(pts, seg[:1], seg[1:])[:, 0] <= 0.25
    return {"drivable": drivable, "divider": divider, "crosswalk": crosswalk, "stripes": stripes,
            "stop_red": stop["red"], "stop_green": stop["green"]}


def agent_footprint_class(pts: np.ndarray, scene: Scene) -> np.ndarray:
    """Semantic class of the agent covering each point at t=0 (0 where none)."""
    out = np.zeros(len(pts), dtype=np.int64)
    for a in scene.agents:
        x, y, w, l, yaw = a.box
        c, s = math.cos(yaw), math.sin(yaw)
        rel = pts - np.array([x, y])
        along = rel @ np.array([c, s])
        across = rel @ np.array([-s, c])
        out[(np.abs(along) <= l / 2) & (np.abs(across) <= w / 2)] = a.class_id
    return out


# ----------------------------------------------------------------- targets


def bev_grid() -> np.ndarray:
    """[Hx, Wy, 2] cell centres: row i is x = -8 + (i + 0.5) * 0.5, column j likewise in y."""
    xs = BEV_X[0] + (np.arange(int((BEV_X[1] - BEV_X[0]) / BEV_RES)) + 0.5) * BEV_RES
    ys = BEV_Y[0] + (np.arange(int((BEV_Y[1] - BEV_Y[0]) / BEV_RES)) + 0.5) * BEV_RES
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def semantic_map(scene: Scene) -> np.ndarray:
    grid = bev_grid()
    pts = grid.reshape(-1, 2)
    layers = ground_layers(pts, scene)
    sem = np.zeros(len(pts), dtype=np.int64)
    sem[layers["drivable"]] = SEM_DRIVABLE
    sem[layers["crosswalk"]] = SEM_CROSSWALK
    sem[layers["divider"]] = SEM_DIVIDER
    agents = agent_footprint_class(pts, scene)
    sem[agents > 0] = agents[agents > 0]
    return sem.reshape(grid.shape[:2])


def agent_targets(scene: Scene) -> np.ndarray:
    """[G, 5] boxes (x, y, w, l, yaw) at t=0 with centres inside the BEV window."""
    boxes = [a.box for a in scene.agents
             if BEV_X[0] <= a.box[0] < BEV_X[1] and BEV_Y[0] <= a.box[1] < BEV_Y[1]]
    return np.array(boxes, dtype=np.float64).reshape(-1, 5)


# --------------------------------------------------------------- cameras


def _ray_box_hits(origin: np.ndarray, dirs: np.ndarray, box: np.ndarray, height: float):
    """Entry distance and a face-shade factor for rays against an upright cuboid."""
    x, y, w, l, yaw = box
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    o = rot @ (origin - np.array([x, y, 0.0]))
    d = dirs @ rot.T
    lo = np.array([-l / 2, -w / 2, 0.0])
    hi = np.array([l / 2, w / 2, height])
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (lo - o) / d
        t2 = (hi - o) / d
    tmin = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    tmax = np.where(np.isnan(t2), np.inf, np.maximum(t1, t2))
    near = tmin.max(-1)
    far = tmax.min(-1)
    hit = (near <= far) & (far > 0)
    face = tmin.argmax(-1)
    shade = np.array([1.0, 0.75, 0.55])[face]  # front/back, sides, top
    return np.where(hit, np.maximum(near, 0.0), np.inf), shade


def render_views(scene: Scene, rig: CameraRig = CameraRig()) -> np.ndarray:
    """[Ncam, 3, H, W] float32 images with values in [0, 1]."""
    rays = rig.rays()
    ncam, H, W, _ = rays.shape
    dirs = rays.reshape(-1, 3)
    origin = np.array([0.0, 0.0, rig.height])
    img = np.tile(np.array(COLORS["sky"]), (len(dirs), 1))
    down = dirs[:, 2] < -1e-6
    t_ground = np.full(len(dirs), np.inf)
    t_ground[down] = rig.height / -dirs[down, 2]
    ground_pts = (origin[None, :2] + t_ground[:, None] * dirs[:, :2])
    on_ground = down & (np.linalg.norm(ground_pts, axis=1) <= MAX_RANGE)
    gp = ground_pts[on_ground]
    layers = ground_layers(gp, scene, line_halfwidth=0.2)
    col = np.tile(np.array(COLORS["offroad"]), (len(gp), 1))
    col[layers["drivable"]] = COLORS["road"]
    col[layers["stripes"]] = COLORS["crosswalk"]
    col[layers["divider"]] = COLORS["divider"]
    col[layers["stop_red"]] = COLORS["red"]
    col[layers["stop_green"]] = COLORS["green"]
    img[on_ground] = col
    depth = np.where(on_ground, t_ground, np.inf)
    for a in scene.agents:
        t_hit, shade = _ray_box_hits(origin, dirs, a.box, AGENT_HEIGHT.get(a.class_id, 1.5))
        closer = t_hit < depth
        if closer.any():
            img[closer] = np.array(COLORS.get(a.class_id, COLORS[CLASS_VEHICLE]))[None] * shade[closer, None]
            depth = np.where(closer, t_hit, depth)
    return img.reshape(ncam, H, W, 3).transpose(0, 3, 1, 2).astype(np.float32)


@dataclass
class RenderedScene:
    images: np.ndarray  # [Ncam, 3, H, W]
    ego: np.ndarray  # [5]
    semantic: np.ndarray  # [64, 64]
    boxes: np.ndarray  # [G, 5]


def render_inputs(scene: Scene, rig: CameraRig = CameraRig()) -> RenderedScene:
    ego = ego_features(scene.ego_state.v, scene.ego_state.a, scene.ego_state.command)[0]
    return RenderedScene(render_views(scene, rig), ego, semantic_map(scene), agent_targets(scene))
