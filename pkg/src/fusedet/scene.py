"""Deterministic scene simulator.

Targets follow piecewise-linear waypoint trajectories in a world frame with
x to the right, y forward (range direction), z up; the sensors sit at the
origin.  Each frame yields full ground truth: 3D position and velocity, a
3D bounding box, its camera projection, and an occlusion fraction computed
from projected-box overlap with nearer targets.  Radar returns come either
as point clouds (fast, the pipeline default) or as synthesized ADC cubes
that exercise the full DSP front end.

Everything is seeded per frame through numpy SeedSequence, so identical
scene files reproduce identical sensor data byte for byte.
"""

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .camera import Box2D, CameraModel, camera_depth, project_box
from .clustering import ClusterBox
from .dsp import RadarConfig, RadarPoint, synthesize_adc
from .errors import BehindCameraError, ConfigError

SCENE_SCHEMA_VERSION = 1

MODE_POINTS = "points"
MODE_ADC = "adc"

# per-frame random stream salts, one per sensor
_SALT_RADAR = 101
_SALT_IMAGE = 202

MAX_SPEED_DEFAULT = 26.0 / 3.6  # m/s


@dataclass
class TargetSpec:
    target_id: int
    waypoints: list  # of (time_s, x, y, z)
    extent: tuple = (0.5, 1.7, 0.4)  # (w, h, t) m: x, z, y spans
    reflectivity: float = 1.0

    def position_at(self, time_s: float) -> np.ndarray:
        """Piecewise-linear interpolation, clamped at the endpoints."""
        times = [w[0] for w in self.waypoints]
        coords = np.array([w[1:] for w in self.waypoints], dtype=float)
        return np.array([
            np.interp(time_s, times, coords[:, k]) for k in range(3)
        ])


@dataclass
class SceneSpec:
    duration: int = 100
    frame_rate: float = 10.0
    seed: int = 0
    targets: list = field(default_factory=list)
    lighting: list = field(default_factory=lambda: [(0.0, 0.9)])
    noise_std: float = 0.05
    point_rate: float = 20.0
    clutter_rate: float = 2.0
    position_jitter_std: float = 0.02
    velocity_jitter_std: float = 0.05
    clutter_velocity_std: float = 0.5
    clutter_bounds: tuple = ((-5.0, 5.0), (0.5, 10.0), (0.0, 2.5))
    max_range: float = 10.0
    max_speed: float = MAX_SPEED_DEFAULT

    def validate(self) -> None:
        if self.duration < 0:
            raise ConfigError("duration must be >= 0 frames")
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")
        for name in ("point_rate", "clutter_rate", "position_jitter_std",
                     "velocity_jitter_std", "clutter_velocity_std",
                     "noise_std"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.lighting or self.lighting[0][0] != 0.0:
            raise ConfigError("lighting schedule must start at time 0")
        last = -math.inf
        for t, level in self.lighting:
            if t <= last:
                raise ConfigError("lighting times must be strictly increasing")
            if not 0 <= level <= 1:
                raise ConfigError(f"lighting level {level} outside [0, 1]")
            last = t
        seen = set()
        for target in self.targets:
            if target.target_id in seen:
                raise ConfigError(f"duplicate target id {target.target_id}")
            seen.add(target.target_id)
            self._validate_target(target)

    def _validate_target(self, target: TargetSpec) -> None:
        tid = target.target_id
        if len(target.waypoints) < 1:
            raise ConfigError(f"target {tid}: needs at least one waypoint")
        if min(target.extent) <= 0:
            raise ConfigError(f"target {tid}: extent must be positive")
        if target.reflectivity < 0:
            raise ConfigError(f"target {tid}: reflectivity must be >= 0")
        prev_t = -math.inf
        prev_p = None
        for wp in target.waypoints:
            t, p = wp[0], np.array(wp[1:], dtype=float)
            if t <= prev_t:
                raise ConfigError(f"target {tid}: waypoint times must be "
                                  "strictly increasing")
            if np.linalg.norm(p) > self.max_range:
                raise ConfigError(
                    f"target {tid}: waypoint at t={t} is "
                    f"{np.linalg.norm(p):.2f} m from the sensor, beyond the "
                    f"{self.max_range} m range"
                )
            if prev_p is not None:
                speed = float(np.linalg.norm(p - prev_p) / (t - prev_t))
                if speed > self.max_speed + 1e-9:
                    raise ConfigError(
                        f"target {tid}: segment speed {speed:.2f} m/s exceeds "
                        f"{self.max_speed:.2f} m/s"
                    )
            prev_t, prev_p = t, p

    def lighting_at(self, time_s: float) -> float:
        level = self.lighting[0][1]
        for t, value in self.lighting:
            if t <= time_s:
                level = value
            else:
                break
        return float(level)


@dataclass
class TargetTruth:
    target_id: int
    position: tuple
    velocity: tuple
    box: ClusterBox
    box2d: Box2D | None
    occlusion: float


@dataclass
class FrameTruth:
    frame: int
    time: float
    lighting: float
    targets: list


def _radial_velocity(position, velocity) -> float:
    r = float(np.linalg.norm(position))
    if r == 0:
        return 0.0
    return float(np.dot(position, velocity) / r)


def _union_area(rects) -> float:
    """Area of the union of axis-aligned rectangles (u0, v0, u1, v1)."""
    rects = [r for r in rects if r[2] > r[0] and r[3] > r[1]]
    if not rects:
        return 0.0
    xs = sorted({r[0] for r in rects} | {r[2] for r in rects})
    total = 0.0
    for x0, x1 in zip(xs, xs[1:]):
        spans = sorted(
            (r[1], r[3]) for r in rects if r[0] <= x0 and r[2] >= x1
        )
        covered = 0.0
        cur_lo = cur_hi = None
        for lo, hi in spans:
            if cur_hi is None or lo > cur_hi:
                if cur_hi is not None:
                    covered += cur_hi - cur_lo
                cur_lo, cur_hi = lo, hi
            else:
                cur_hi = max(cur_hi, hi)
        if cur_hi is not None:
            covered += cur_hi - cur_lo
        total += covered * (x1 - x0)
    return total


def generate_frame(spec: SceneSpec, frame: int, cam: CameraModel | None = None) -> FrameTruth:
    """Ground truth for one frame: kinematics, 3D boxes, projections, occlusion."""
    if not 0 <= frame < spec.duration:
        raise IndexError(f"frame {frame} outside scene duration {spec.duration}")
    if cam is None:
        cam = CameraModel()
    dt = 1.0 / spec.frame_rate
    time_s = frame * dt

    entries = []
    for target in spec.targets:
        p = target.position_at(time_s)
        if frame == 0:
            v = (target.position_at(dt) - p) / dt
        else:
            v = (p - target.position_at(time_s - dt)) / dt
        w, h, t = target.extent
        box = ClusterBox(
            x=float(p[0]), y=float(p[1]), z=float(p[2]),
            v_z=_radial_velocity(p, v), w=w, h=h, t=t,
        )
        try:
            box2d = project_box(box, cam)
        except BehindCameraError:
            box2d = None
        depth = camera_depth((box.x, box.y, box.z), cam)
        entries.append((target, p, v, box, box2d, depth))

    targets = []
    for i, (target, p, v, box, box2d, depth) in enumerate(entries):
        if box2d is None or box2d.area() <= 0:
            occlusion = 1.0
        else:
            overlaps = []
            for j, (_, _, _, _, other2d, other_depth) in enumerate(entries):
                if j == i or other2d is None or other_depth >= depth:
                    continue
                u0 = max(box2d.u_min, other2d.u_min)
                v0 = max(box2d.v_min, other2d.v_min)
                u1 = min(box2d.u_max, other2d.u_max)
                v1 = min(box2d.v_max, other2d.v_max)
                if u1 > u0 and v1 > v0:
                    overlaps.append((u0, v0, u1, v1))
            occlusion = min(1.0, _union_area(overlaps) / box2d.area())
        targets.append(TargetTruth(
            target_id=target.target_id,
            position=tuple(float(x) for x in p),
            velocity=tuple(float(x) for x in v),
            box=box, box2d=box2d, occlusion=occlusion,
        ))
    return FrameTruth(frame=frame, time=time_s,
                      lighting=spec.lighting_at(time_s), targets=targets)


def frame_rng(spec: SceneSpec, frame: int, salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([spec.seed, frame, salt]))


def image_seed(spec: SceneSpec, frame: int) -> np.random.SeedSequence:
    """Seed for the image detector's per-frame stream."""
    return np.random.SeedSequence([spec.seed, frame, _SALT_IMAGE])


def emit_radar(truth: FrameTruth, spec: SceneSpec, mode: str = MODE_POINTS,
               radar_config: RadarConfig | None = None):
    """Radar returns for one frame of truth.

    Point mode samples Poisson(point_rate x reflectivity) scatterers uniform
    over each target's 3D extent with truncated Gaussian position jitter,
    plus uniform clutter.  Occlusion never gates radar returns: the radar
    sees through targets that block the camera.  ADC mode synthesizes the
    raw cube from each target's (range, azimuth, radial velocity).
    """
    rng = frame_rng(spec, truth.frame, _SALT_RADAR)
    if mode == MODE_ADC:
        cfg = radar_config if radar_config is not None else RadarConfig()
        scatterers = []
        for t in truth.targets:
            p = np.array(t.position)
            r = float(np.linalg.norm(p))
            azimuth = math.atan2(t.position[0], t.position[1])
            spec_target = next(s for s in spec.targets
                               if s.target_id == t.target_id)
            scatterers.append((r, azimuth, t.box.v_z, spec_target.reflectivity))
        seed = int(np.random.SeedSequence(
            [spec.seed, truth.frame, _SALT_RADAR]).generate_state(1)[0])
        return synthesize_adc(scatterers, cfg, noise_std=spec.noise_std,
                              seed=seed)
    if mode != MODE_POINTS:
        raise ConfigError(f"unknown radar mode {mode!r}")

    points = []
    jitter_clip = 3.0 * spec.position_jitter_std
    for t in truth.targets:
        spec_target = next(s for s in spec.targets if s.target_id == t.target_id)
        n = rng.poisson(spec.point_rate * spec_target.reflectivity)
        if n == 0:
            continue
        w, h, depth_t = spec_target.extent
        center = np.array(t.position)
        velocity = np.array(t.velocity)
        offsets = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array([w, depth_t, h])
        jitter = np.clip(rng.normal(0.0, spec.position_jitter_std, size=(n, 3)),
                         -jitter_clip, jitter_clip)
        positions = center + offsets + jitter
        v_jitter = rng.normal(0.0, spec.velocity_jitter_std, size=n)
        for k in range(n):
            v_r = _radial_velocity(positions[k], velocity) + v_jitter[k]
            points.append(RadarPoint(
                x=float(positions[k, 0]), y=float(positions[k, 1]),
                z=float(positions[k, 2]), v=float(v_r),
            ))
    n_clutter = rng.poisson(spec.clutter_rate)
    if n_clutter:
        bounds = np.array(spec.clutter_bounds)
        pos = rng.uniform(bounds[:, 0], bounds[:, 1], size=(n_clutter, 3))
        vel = rng.normal(0.0, spec.clutter_velocity_std, size=n_clutter)
        for k in range(n_clutter):
            points.append(RadarPoint(
                x=float(pos[k, 0]), y=float(pos[k, 1]), z=float(pos[k, 2]),
                v=float(vel[k]),
            ))
    return points


# --- scene files ---------------------------------------------------------------


def save_scene_yaml(path, spec: SceneSpec) -> None:
    doc = {
        "schema_version": SCENE_SCHEMA_VERSION,
        "duration": int(spec.duration),
        "frame_rate": float(spec.frame_rate),
        "seed": int(spec.seed),
        "noise_std": float(spec.noise_std),
        "point_rate": float(spec.point_rate),
        "clutter_rate": float(spec.clutter_rate),
        "position_jitter_std": float(spec.position_jitter_std),
        "velocity_jitter_std": float(spec.velocity_jitter_std),
        "clutter_velocity_std": float(spec.clutter_velocity_std),
        "clutter_bounds": [[float(a), float(b)] for a, b in spec.clutter_bounds],
        "max_range": float(spec.max_range),
        "max_speed": float(spec.max_speed),
        "lighting": [{"time": float(t), "level": float(v)}
                     for t, v in spec.lighting],
        "targets": [
            {
                "id": int(t.target_id),
                "reflectivity": float(t.reflectivity),
                "extent": [float(x) for x in t.extent],
                "trajectory": [
                    {"time": float(w[0]),
                     "position": [float(w[1]), float(w[2]), float(w[3])]}
                    for w in t.waypoints
                ],
            }
            for t in spec.targets
        ],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def shipped_scene_names() -> list[str]:
    """Names of the scene files bundled with the package."""
    data = resources.files("fusedet") / "data"
    return sorted(p.name[:-5] for p in data.iterdir() if p.name.endswith(".yaml"))


def shipped_scene_path(name: str):
    path = resources.files("fusedet") / "data" / f"{name}.yaml"
    if not path.is_file():
        known = ", ".join(shipped_scene_names())
        raise ConfigError(f"unknown scene {name!r}; shipped scenes: {known}")
    return path


def load_scene_yaml(path) -> SceneSpec:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: scene file must be a mapping")
    version = doc.get("schema_version")
    if version != SCENE_SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version!r}")
    try:
        targets = [
            TargetSpec(
                target_id=int(t["id"]),
                reflectivity=float(t.get("reflectivity", 1.0)),
                extent=tuple(float(x) for x in t["extent"]),
                waypoints=[
                    (float(w["time"]), *(float(x) for x in w["position"]))
                    for w in t["trajectory"]
                ],
            )
            for t in doc.get("targets", [])
        ]
        spec = SceneSpec(
            duration=int(doc["duration"]),
            frame_rate=float(doc["frame_rate"]),
            seed=int(doc["seed"]),
            noise_std=float(doc.get("noise_std", 0.05)),
            point_rate=float(doc.get("point_rate", 20.0)),
            clutter_rate=float(doc.get("clutter_rate", 2.0)),
            position_jitter_std=float(doc.get("position_jitter_std", 0.02)),
            velocity_jitter_std=float(doc.get("velocity_jitter_std", 0.05)),
            clutter_velocity_std=float(doc.get("clutter_velocity_std", 0.5)),
            clutter_bounds=tuple(
                (float(a), float(b))
                for a, b in doc.get("clutter_bounds",
                                    [[-5.0, 5.0], [0.5, 10.0], [0.0, 2.5]])
            ),
            max_range=float(doc.get("max_range", 10.0)),
            max_speed=float(doc.get("max_speed", MAX_SPEED_DEFAULT)),
            lighting=[(float(seg["time"]), float(seg["level"]))
                      for seg in doc["lighting"]],
            targets=targets,
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing scene field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed scene field: {exc}") from exc
    spec.validate()
    return spec
