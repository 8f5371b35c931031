"""Synthetic driving scenes with fully known ground truth.

Everything is analytic: the surface z*(x, y), the albedo texture, and the
semantic layout are closed-form functions, so rendered frames, labels,
trajectory and Lidar are exact. Per-camera photometric transfer
c -> clamp(g * c^gamma) emulates luminosity differences between cameras.

The route is an S-shaped arc (heading amplitude `curve`, radians); with
curve = 0 it degenerates to a straight line along +x. A gently curved
route makes trajectory-interpolated elevation genuinely imperfect away
from the centerline, which is what the elevation-residual net corrects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from . import fileio
from .scene import (
    BACKGROUND_CLASS,
    DYNAMIC_LABEL_START,
    Camera,
    Frame,
    LidarCloud,
    Pose,
    Trajectory,
)
from .transforms import RigidTransform, matrix_to_quat, rotation_yaw_pitch_roll

LANE_WIDTH = 3.0
CURB_WIDTH = 0.35
MANHOLE_RADIUS = 0.45
MANHOLE_EVERY = 23.0  # meters of arc between manhole centers
DASH_PERIOD = 4.0
DASH_ON = 2.0
SKY_RGB = (0.55, 0.7, 0.9)
MAX_RAY_RANGE = 300.0
ROUTE_STEP = 0.25

PROFILES = ("flat", "ramp", "sine")


@dataclass
class CameraSpec:
    """Camera intrinsics, photometric response and vehicle mount."""

    id: int
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    gain: float = 1.0
    gamma: float = 1.0
    position: tuple = (1.5, 0.0, 1.6)  # vehicle frame: x fwd, y left, z up
    yaw_deg: float = 0.0
    pitch_deg: float = 15.0  # positive pitches the view down
    roll_deg: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("camera gamma must be positive")

    def camera(self):
        return Camera.from_params(
            self.id, self.fx, self.fy, self.cx, self.cy, self.width, self.height
        )

    def mount(self):
        """vehicle_from_camera transform."""
        # canonical camera: optical +z forward, +x right, +y down
        base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
        R = (
            rotation_yaw_pitch_roll(
                np.deg2rad(self.yaw_deg), np.deg2rad(self.pitch_deg), np.deg2rad(self.roll_deg)
            )
            @ base
        )
        return RigidTransform(R, np.asarray(self.position, dtype=np.float64))


def default_cameras():
    return [
        CameraSpec(0, 400.0, 400.0, 320.0, 240.0, 640, 480, position=(1.5, 0.5, 1.6)),
        CameraSpec(1, 400.0, 400.0, 320.0, 240.0, 640, 480, position=(1.5, -0.5, 1.6)),
    ]


@dataclass
class SceneSpec:
    route_length: float = 100.0
    profile: str = "flat"
    slope: float = 0.05
    amplitude: float = 0.3
    wavelength: float = 30.0
    curve: float = 0.0
    lane_count: int = 2
    marking_width: float = 0.4
    cameras: list = field(default_factory=default_cameras)
    lidar_density: float = 2.0
    lidar_sigma: float = 0.0
    frame_spacing: float = 5.0
    dynamic_objects: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")
        if not np.isfinite(self.slope):
            raise ValueError("slope must be finite")
        if self.profile == "sine" and self.wavelength <= 0:
            raise ValueError("sine profile needs a positive wavelength")
        if self.route_length <= 0 or self.frame_spacing <= 0:
            raise ValueError("route_length and frame_spacing must be positive")
        if self.lidar_sigma < 0:
            raise ValueError("lidar noise sigma must be nonnegative")
        if self.lane_count < 1:
            raise ValueError("need at least one lane")

    @property
    def road_half_width(self):
        return self.lane_count * LANE_WIDTH / 2.0

    @property
    def ground_half_width(self):
        """Road plus curbs: the Lidar-sampled footprint."""
        return self.road_half_width + CURB_WIDTH


class Route:
    """S-shaped centerline: heading = curve * sin(2 pi s / L), arc length s."""

    def __init__(self, length, curve, surface_z):
        s = np.arange(0.0, length + ROUTE_STEP, ROUTE_STEP)
        s[-1] = length
        heading = curve * np.sin(2.0 * np.pi * s / length)
        # midpoint integration of the unit tangent
        mid = 0.5 * (heading[1:] + heading[:-1])
        dx = np.cos(mid) * np.diff(s)
        dy = np.sin(mid) * np.diff(s)
        x = np.concatenate([[0.0], np.cumsum(dx)])
        y = np.concatenate([[0.0], np.cumsum(dy)])
        self.s = s
        self.xy = np.stack([x, y], axis=1)
        self.heading = heading
        self.tangent = np.stack([np.cos(heading), np.sin(heading)], axis=1)
        self.z = surface_z(x, y)
        self.length = float(length)
        self._tree = cKDTree(self.xy)

    def point_at(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        x = np.interp(s, self.s, self.xy[:, 0])
        y = np.interp(s, self.s, self.xy[:, 1])
        return np.stack([x, y], axis=-1)

    def heading_at(self, s):
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        return np.interp(s, self.s, self.heading)

    def to_frame(self, xy):
        """World (x,y) -> (arc position s, signed lateral offset)."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        _, idx = self._tree.query(xy)
        rel = xy - self.xy[idx]
        t = self.tangent[idx]
        s = self.s[idx] + rel[:, 0] * t[:, 0] + rel[:, 1] * t[:, 1]
        lat = -rel[:, 0] * t[:, 1] + rel[:, 1] * t[:, 0]
        return s, lat


@dataclass
class GroundTruthScene:
    spec: SceneSpec
    route: Route
    trajectory: Trajectory
    cameras: list
    mounts: dict
    gains: dict
    gammas: dict
    frames: list
    lidar: LidarCloud

    def surface_z(self, x, y):
        return _surface_z(self.spec, x, y)

    def albedo(self, x, y):
        return _albedo(self.spec, self.route, x, y)

    def labels(self, x, y):
        return _labels(self.spec, self.route, x, y)


def _surface_z(spec, x, y):
    x = np.asarray(x, dtype=np.float64)
    if spec.profile == "flat":
        return np.zeros_like(x)
    if spec.profile == "ramp":
        return spec.slope * x
    return spec.amplitude * np.sin(2.0 * np.pi * x / spec.wavelength)


def _surface_dzdx(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if spec.profile == "flat":
        return np.zeros_like(x)
    if spec.profile == "ramp":
        return np.full_like(x, spec.slope)
    w = 2.0 * np.pi / spec.wavelength
    return spec.amplitude * w * np.cos(w * x)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _manhole_centers(spec):
    """Deterministic manhole placements (arc position, lateral offset)."""
    rng = np.random.default_rng([spec.seed, 77])
    n = max(int(spec.route_length / MANHOLE_EVERY), 0)
    s = (np.arange(n) + 0.5) * MANHOLE_EVERY + rng.uniform(-3.0, 3.0, n)
    lat = rng.uniform(-0.6, 0.6, n) * (spec.road_half_width - 2 * MANHOLE_RADIUS)
    return s, lat


def _marking_offsets(spec):
    """Lateral positions of lane boundary lines (edges and interior)."""
    return -spec.road_half_width + LANE_WIDTH * np.arange(spec.lane_count + 1)


def _labels(spec, route, x, y):
    """Exact semantic class per world point (crisp analytic boundaries)."""
    pts = np.stack(np.broadcast_arrays(x, y), axis=-1).reshape(-1, 2)
    s, lat = route.to_frame(pts)
    shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
    out = np.full(pts.shape[0], BACKGROUND_CLASS, dtype=np.int32)

    on_route = (s >= 0.0) & (s <= route.length)
    abs_lat = np.abs(lat)
    road = on_route & (abs_lat <= spec.road_half_width)
    curb = on_route & (abs_lat > spec.road_half_width) & (
        abs_lat <= spec.road_half_width + CURB_WIDTH
    )
    out[curb] = 1
    out[road] = 3

    half_mark = spec.marking_width / 2.0
    offsets = _marking_offsets(spec)
    marking = np.zeros(pts.shape[0], dtype=bool)
    for i, off in enumerate(offsets):
        near = np.abs(lat - off) <= half_mark
        if 0 < i < len(offsets) - 1:
            near &= (s % DASH_PERIOD) < DASH_ON
        marking |= near
    out[road & marking] = 0

    mh_s, mh_lat = _manhole_centers(spec)
    if mh_s.size:
        d2 = (s[:, None] - mh_s[None, :]) ** 2 + (lat[:, None] - mh_lat[None, :]) ** 2
        in_manhole = (d2 <= MANHOLE_RADIUS**2).any(axis=1)
        out[road & in_manhole] = 2
    return out.reshape(shape)


def _albedo(spec, route, x, y):
    """Smooth RGB albedo in (0,1); class transitions blend over ~0.25 m so
    vertex colors can match pixel samples closely."""
    pts = np.stack(np.broadcast_arrays(x, y), axis=-1).reshape(-1, 2)
    s, lat = route.to_frame(pts)
    xf = pts[:, 0]
    yf = pts[:, 1]
    abs_lat = np.abs(lat)

    base = 0.25 + 0.05 * np.sin(2 * np.pi * xf / 7.3) * np.sin(2 * np.pi * yf / 5.1)
    base += 0.03 * np.sin(2 * np.pi * (xf + yf) / 13.7 + 1.0)
    rgb = np.stack([base, base * 1.02, base * 1.05], axis=1)

    blend = 0.25

    def mix(rgb, target, w):
        return rgb + (np.asarray(target)[None, :] - rgb) * w[:, None]

    # curb / background bands
    w_curb = _smoothstep((abs_lat - spec.road_half_width) / blend) * _smoothstep(
        (spec.road_half_width + CURB_WIDTH + blend - abs_lat) / blend
    )
    rgb = mix(rgb, (0.48, 0.46, 0.44), w_curb)
    w_bg = _smoothstep((abs_lat - spec.road_half_width - CURB_WIDTH) / blend)
    off_route = np.clip((0.0 - s) / blend, 0.0, 1.0) + np.clip((s - route.length) / blend, 0.0, 1.0)
    w_bg = np.maximum(w_bg, _smoothstep(off_route))
    rgb = mix(rgb, (0.22, 0.38, 0.2), w_bg)

    # lane markings (soft)
    half_mark = spec.marking_width / 2.0
    offsets = _marking_offsets(spec)
    w_mark = np.zeros_like(base)
    for i, off in enumerate(offsets):
        w = _smoothstep((half_mark - np.abs(lat - off)) / blend + 0.5)
        if 0 < i < len(offsets) - 1:
            w = w * _smoothstep(((DASH_ON - (s % DASH_PERIOD)) / blend) + 0.5)
        w_mark = np.maximum(w_mark, w)
    w_mark = w_mark * (1.0 - w_bg) * (1.0 - w_curb)
    rgb = mix(rgb, (0.85, 0.85, 0.82), w_mark)

    mh_s, mh_lat = _manhole_centers(spec)
    if mh_s.size:
        d = np.sqrt(
            (s[:, None] - mh_s[None, :]) ** 2 + (lat[:, None] - mh_lat[None, :]) ** 2
        ).min(axis=1)
        w_mh = _smoothstep((MANHOLE_RADIUS - d) / blend + 0.5) * (1.0 - w_bg) * (1.0 - w_curb)
        rgb = mix(rgb, (0.14, 0.13, 0.13), w_mh)

    shape = np.broadcast(np.asarray(x), np.asarray(y)).shape
    return np.clip(rgb, 0.01, 0.99).reshape(shape + (3,))


def apply_photometric(rgb, gain, gamma):
    """Per-camera transfer c -> clamp(g * c^gamma, 0, 1)."""
    return np.clip(gain * np.power(np.clip(rgb, 0.0, 1.0), gamma), 0.0, 1.0)


def build_trajectory(spec, route):
    """One pose per frame position, z exactly on the surface, orientation
    following the route tangent (yaw) and grade (pitch)."""
    n = int(np.floor(route.length / spec.frame_spacing + 1e-9)) + 1
    s = np.arange(n) * spec.frame_spacing
    xy = route.point_at(s)
    z = _surface_z(spec, xy[:, 0], xy[:, 1])
    yaw = route.heading_at(s)
    dzds = _surface_dzdx(spec, xy[:, 0]) * np.cos(yaw)
    pitch = -np.arctan(dzds)
    poses = []
    for k in range(n):
        R = rotation_yaw_pitch_roll(yaw[k], pitch[k], 0.0)
        q = matrix_to_quat(R)
        poses.append(Pose(float(k), (xy[k, 0], xy[k, 1], z[k]), q))
    return Trajectory(poses)


def _ray_surface_hits(spec, origin, dirs):
    """Ray-surface intersection t per ray; nan when there is no hit in range."""
    ox, oy, oz = origin
    dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    if spec.profile == "flat":
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -oz / dz
    elif spec.profile == "ramp":
        denom = dz - spec.slope * dx
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (spec.slope * ox - oz) / denom
    else:
        # Newton iterations from the mean-plane solution
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -oz / dz
        t = np.where(np.isfinite(t) & (t > 0), t, MAX_RAY_RANGE)
        for _ in range(25):
            x = ox + t * dx
            f = oz + t * dz - _surface_z(spec, x, oy + t * dy)
            fp = dz - _surface_dzdx(spec, x) * dx
            step = np.where(np.abs(fp) > 1e-9, f / fp, 0.0)
            t = t - np.clip(step, -20.0, 20.0)
        x = ox + t * dx
        miss = np.abs(oz + t * dz - _surface_z(spec, x, oy + t * dy)) > 1e-6
        t = np.where(miss, np.nan, t)
    bad = ~np.isfinite(t) | (t <= 0.1) | (t > MAX_RAY_RANGE)
    return np.where(bad, np.nan, t)


def _render_ground_truth_frame(spec, route, cam, world_from_camera, gain, gamma, frame_rng):
    """Exact frame: per-pixel ray to the analytic surface, then photometric
    transfer, then dynamic-object patches stamped in image space."""
    H, W = cam.height, cam.width
    us, vs = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    d_cam = np.stack(
        [
            (us.ravel() - cam.K[0, 2]) / cam.K[0, 0],
            (vs.ravel() - cam.K[1, 2]) / cam.K[1, 1],
            np.ones(H * W),
        ],
        axis=1,
    )
    d_world = d_cam @ world_from_camera.R.T
    origin = world_from_camera.t
    t = _ray_surface_hits(spec, origin, d_world)
    hit = np.isfinite(t)
    pts = origin[None, :] + np.nan_to_num(t)[:, None] * d_world

    rgb = np.empty((H * W, 3))
    rgb[:] = SKY_RGB
    labels = np.full(H * W, BACKGROUND_CLASS, dtype=np.int32)
    if np.any(hit):
        alb = _albedo(spec, route, pts[hit, 0], pts[hit, 1])
        rgb[hit] = apply_photometric(alb, gain, gamma)
        labels[hit] = _labels(spec, route, pts[hit, 0], pts[hit, 1])

    rgb = rgb.reshape(H, W, 3)
    labels = labels.reshape(H, W)
    for i in range(spec.dynamic_objects):
        cu = frame_rng.uniform(0.2 * W, 0.8 * W)
        cv = frame_rng.uniform(0.5 * H, 0.9 * H)
        au = frame_rng.uniform(0.04 * W, 0.09 * W)
        av = au * frame_rng.uniform(0.5, 0.9)
        shade = frame_rng.uniform(0.3, 0.7)
        ell = ((us - cu) / au) ** 2 + ((vs - cv) / av) ** 2 <= 1.0
        rgb[ell] = np.array([shade, shade * 0.95, shade * 1.05]).clip(0, 1)
        labels[ell] = DYNAMIC_LABEL_START + (i % 11)
    return rgb, labels


def generate_scene(spec):
    """Deterministic synthetic scene: trajectory, frames, labels and Lidar.

    Frame RGB is quantized to 8 bits at creation so in-memory training and
    training from a written scene directory see identical data.
    """
    route = Route(spec.route_length, spec.curve, lambda x, y: _surface_z(spec, x, y))
    trajectory = build_trajectory(spec, route)
    cameras = [cs.camera() for cs in spec.cameras]
    mounts = {cs.id: cs.mount() for cs in spec.cameras}
    gains = {cs.id: cs.gain for cs in spec.cameras}
    gammas = {cs.id: cs.gamma for cs in spec.cameras}

    frames = []
    for k, pose in enumerate(trajectory.poses):
        world_from_vehicle = pose.world_from_vehicle()
        for cs in spec.cameras:
            cam = cameras[[c.id for c in cameras].index(cs.id)]
            world_from_camera = world_from_vehicle.compose(mounts[cs.id])
            frame_rng = np.random.default_rng([spec.seed, 1000 + k, cs.id])
            rgb, labels = _render_ground_truth_frame(
                spec, route, cam, world_from_camera, cs.gain, cs.gamma, frame_rng
            )
            rgb = np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5) / 255.0
            frames.append(
                Frame(
                    camera_id=cs.id,
                    world_from_camera=world_from_camera,
                    rgb=rgb,
                    sem_labels=labels,
                    traj_index=k,
                )
            )

    scene = GroundTruthScene(
        spec=spec,
        route=route,
        trajectory=trajectory,
        cameras=cameras,
        mounts=mounts,
        gains=gains,
        gammas=gammas,
        frames=frames,
        lidar=LidarCloud(np.zeros((0, 3))),
    )
    scene.lidar = sample_lidar(scene, spec.lidar_density, spec.lidar_sigma, spec.seed)
    return scene


def sample_lidar(scene, density, sigma, seed):
    """Uniform ground samples over the road+curb footprint with vertical
    Gaussian noise of the given sigma."""
    if density <= 0:
        raise ValueError("lidar density must be positive")
    spec = scene.spec
    route = scene.route
    half = spec.ground_half_width
    area = route.length * 2.0 * half
    n = int(round(density * area))
    rng = np.random.default_rng([seed, 4242])
    s = rng.uniform(0.0, route.length, n)
    lat = rng.uniform(-half, half, n)
    center = route.point_at(s)
    heading = route.heading_at(s)
    normal = np.stack([-np.sin(heading), np.cos(heading)], axis=1)
    xy = center + lat[:, None] * normal
    z = _surface_z(spec, xy[:, 0], xy[:, 1])
    if sigma > 0:
        z = z + rng.normal(0.0, sigma, n)
    return LidarCloud(np.column_stack([xy, z]))


# ---------------------------------------------------------------------------
# scene spec file and scene directory round-trip


SPEC_SCALAR_FIELDS = (
    "route_length",
    "profile",
    "slope",
    "amplitude",
    "wavelength",
    "curve",
    "lane_count",
    "marking_width",
    "lidar_density",
    "lidar_sigma",
    "frame_spacing",
    "dynamic_objects",
    "seed",
)


def scene_spec_text(spec):
    lines = []
    for name in SPEC_SCALAR_FIELDS:
        lines.append(f"{name} = {getattr(spec, name)}")
    for cs in spec.cameras:
        vals = [
            cs.id, cs.fx, cs.fy, cs.cx, cs.cy, cs.width, cs.height, cs.gain, cs.gamma,
            cs.position[0], cs.position[1], cs.position[2],
            cs.yaw_deg, cs.pitch_deg, cs.roll_deg,
        ]
        lines.append("camera = " + " ".join(str(v) for v in vals))
    return "\n".join(lines) + "\n"


def parse_scene_spec(text):
    """Parse the key = value scene spec format (camera lines repeatable)."""
    kwargs = {}
    cameras = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad spec line {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "camera":
            parts = value.split()
            if len(parts) != 15:
                raise ValueError("camera line needs 15 fields: id fx fy cx cy w h "
                                 "gain gamma px py pz yaw pitch roll")
            cameras.append(
                CameraSpec(
                    id=int(parts[0]),
                    fx=float(parts[1]),
                    fy=float(parts[2]),
                    cx=float(parts[3]),
                    cy=float(parts[4]),
                    width=int(parts[5]),
                    height=int(parts[6]),
                    gain=float(parts[7]),
                    gamma=float(parts[8]),
                    position=(float(parts[9]), float(parts[10]), float(parts[11])),
                    yaw_deg=float(parts[12]),
                    pitch_deg=float(parts[13]),
                    roll_deg=float(parts[14]),
                )
            )
        elif key in ("lane_count", "dynamic_objects", "seed"):
            kwargs[key] = int(value)
        elif key == "profile":
            kwargs[key] = value
        elif key in SPEC_SCALAR_FIELDS:
            kwargs[key] = float(value)
        else:
            raise ValueError(f"unknown spec key {key!r}")
    if cameras:
        kwargs["cameras"] = cameras
    return SceneSpec(**kwargs)


def read_scene_spec(path):
    return parse_scene_spec(Path(path).read_text(encoding="utf-8"))


def write_scene_dir(scene, out_dir):
    """Write trajectory.csv, cameras.txt, frames/, labels/, lidar.ply, spec.txt."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "labels").mkdir(parents=True, exist_ok=True)
    fileio.write_trajectory_csv(out / "trajectory.csv", scene.trajectory)
    fileio.write_cameras_txt(
        out / "cameras.txt", scene.cameras, scene.mounts, scene.gains, scene.gammas
    )
    fileio.write_lidar_ply(out / "lidar.ply", scene.lidar)
    (out / "spec.txt").write_text(scene_spec_text(scene.spec), encoding="utf-8")
    for frame in scene.frames:
        stem = f"{frame.camera_id}_{frame.traj_index:05d}.png"
        fileio.save_rgb_png(out / "frames" / stem, frame.rgb)
        fileio.save_label_png(out / "labels" / stem, frame.sem_labels)


@dataclass
class LoadedScene:
    """A scene read back from disk: what training and evaluation consume."""

    trajectory: Trajectory
    cameras: list
    mounts: dict
    gains: dict
    gammas: dict
    frames: list
    lidar: LidarCloud
    spec: SceneSpec = None


def load_scene_dir(scene_dir):
    d = Path(scene_dir)
    trajectory = fileio.read_trajectory_csv(d / "trajectory.csv")
    cameras, mounts, gains, gammas = fileio.read_cameras_txt(d / "cameras.txt")
    lidar = fileio.read_lidar_ply(d / "lidar.ply")
    spec = read_scene_spec(d / "spec.txt") if (d / "spec.txt").exists() else None
    frames = []
    for png in sorted((d / "frames").glob("*.png")):
        cam_id_s, k_s = png.stem.split("_")
        cam_id, k = int(cam_id_s), int(k_s)
        rgb = fileio.load_rgb_png(png)
        labels = fileio.load_label_png(d / "labels" / png.name)
        pose = trajectory.poses[k]
        frames.append(
            Frame(
                camera_id=cam_id,
                world_from_camera=pose.world_from_vehicle().compose(mounts[cam_id]),
                rgb=rgb,
                sem_labels=labels,
                traj_index=k,
            )
        )
    frames.sort(key=lambda f: (f.traj_index, f.camera_id))
    return LoadedScene(trajectory, cameras, mounts, gains, gammas, frames, lidar, spec)
