"""Pinhole camera with radial/tangential distortion and 3D-box projection.

World (radar) frame: x lateral, y depth along boresight, z up.  Camera frame
follows the usual vision convention (x right, y down, z forward); the default
extrinsic places the camera at the radar origin, 0.9 m above the floor,
looking down the radar y-axis.

Projection follows [u, v, 1]^T = (1/z_cam) * K * T * [x, y, z, 1]^T with the
distortion model applied to normalized coordinates before K; the undistorted
pinhole is the zero-coefficient special case.
"""

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import BehindCameraError, ConfigError

CAMERA_SCHEMA_VERSION = 1

# camera 0.9 m up, radar y becomes camera depth, radar z points up (camera -y)
DEFAULT_EXTRINSIC = (
    (1.0, 0.0, 0.0, 0.0),
    (0.0, 0.0, -1.0, 0.9),
    (0.0, 1.0, 0.0, 0.0),
)

_MIN_DEPTH = 1e-6


@dataclass
class PixelCoord:
    u: float
    v: float


@dataclass
class Box2D:
    """Axis-aligned pixel rectangle with u_min <= u_max, v_min <= v_max."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise ConfigError(
                f"inverted box ({self.u_min}, {self.v_min}, {self.u_max}, {self.v_max})"
            )

    @property
    def width(self) -> float:
        return self.u_max - self.u_min

    @property
    def height(self) -> float:
        return self.v_max - self.v_min

    def area(self) -> float:
        return self.width * self.height

    def center(self) -> PixelCoord:
        return PixelCoord((self.u_min + self.u_max) / 2, (self.v_min + self.v_max) / 2)

    def intersection_area(self, other: "Box2D") -> float:
        du = min(self.u_max, other.u_max) - max(self.u_min, other.u_min)
        dv = min(self.v_max, other.v_max) - max(self.v_min, other.v_min)
        if du <= 0 or dv <= 0:
            return 0.0
        return du * dv

    def iou(self, other: "Box2D") -> float:
        inter = self.intersection_area(other)
        union = self.area() + other.area() - inter
        if union <= 0:
            return 0.0
        return inter / union

    def clamped(self, image_size) -> "Box2D":
        rows, cols = image_size
        return Box2D(
            min(max(self.u_min, 0.0), float(cols)),
            min(max(self.v_min, 0.0), float(rows)),
            min(max(self.u_max, 0.0), float(cols)),
            min(max(self.v_max, 0.0), float(rows)),
        )

    def expanded(self, margin: float) -> "Box2D":
        return Box2D(self.u_min - margin, self.v_min - margin,
                     self.u_max + margin, self.v_max + margin)


@dataclass
class CameraModel:
    """Intrinsics, extrinsics, and distortion; immutable once built."""

    intrinsic: np.ndarray = field(
        default_factory=lambda: np.array([
            [1208.2, 0.0, 1038.8],
            [0.0, 1210.4, 763.4],
            [0.0, 0.0, 1.0],
        ])
    )
    extrinsic: np.ndarray = field(
        default_factory=lambda: np.array(DEFAULT_EXTRINSIC)
    )
    radial: tuple = (-0.09635, 0.08026)
    tangential: tuple = (0.0, 0.0)
    image_size: tuple = (1536, 2048)  # (rows, cols)

    def __post_init__(self):
        self.intrinsic = np.asarray(self.intrinsic, dtype=float)
        self.extrinsic = np.asarray(self.extrinsic, dtype=float)
        self.validate()

    def validate(self) -> None:
        if self.intrinsic.shape != (3, 3):
            raise ConfigError("intrinsic matrix must be 3x3")
        low = self.intrinsic[np.tril_indices(3, k=-1)]
        if np.any(low != 0):
            raise ConfigError("intrinsic matrix must be upper-triangular")
        if self.intrinsic[0, 0] <= 0 or self.intrinsic[1, 1] <= 0:
            raise ConfigError("focal lengths must be positive")
        if self.extrinsic.shape != (3, 4):
            raise ConfigError("extrinsic matrix must be 3x4")
        if len(self.radial) != 2 or len(self.tangential) != 2:
            raise ConfigError("radial and tangential must each hold 2 coefficients")
        rows, cols = self.image_size
        if rows <= 0 or cols <= 0:
            raise ConfigError("image_size must be positive")

    def to_camera_frame(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=float)
        return self.extrinsic @ np.append(p, 1.0)


def distort_normalized(xn: float, yn: float, radial, tangential) -> tuple:
    """Radial (k1, k2) plus tangential (p1, p2) distortion of a normalized point."""
    k1, k2 = radial
    p1, p2 = tangential
    r2 = xn * xn + yn * yn
    f = 1.0 + k1 * r2 + k2 * r2 * r2
    xd = xn * f + 2 * p1 * xn * yn + p2 * (r2 + 2 * xn * xn)
    yd = yn * f + p1 * (r2 + 2 * yn * yn) + 2 * p2 * xn * yn
    return xd, yd


def undistort_normalized(xd: float, yd: float, radial, tangential,
                         iterations: int = 20) -> tuple:
    """Invert the distortion by fixed-point iteration (at most ``iterations``)."""
    k1, k2 = radial
    p1, p2 = tangential
    xn, yn = xd, yd
    for _ in range(iterations):
        r2 = xn * xn + yn * yn
        f = 1.0 + k1 * r2 + k2 * r2 * r2
        dx = 2 * p1 * xn * yn + p2 * (r2 + 2 * xn * xn)
        dy = p1 * (r2 + 2 * yn * yn) + 2 * p2 * xn * yn
        xn = (xd - dx) / f
        yn = (yd - dy) / f
    return xn, yn


def project_point(point, cam: CameraModel) -> PixelCoord:
    """Project one world point; raises BehindCameraError for z_cam <= 0."""
    xc, yc, zc = cam.to_camera_frame(point)
    if zc <= 0:
        raise BehindCameraError(f"point {tuple(point)} has camera depth {zc:.4g}")
    xd, yd = distort_normalized(xc / zc, yc / zc, cam.radial, cam.tangential)
    u, v, _ = cam.intrinsic @ np.array([xd, yd, 1.0])
    return PixelCoord(float(u), float(v))


def camera_depth(point, cam: CameraModel) -> float:
    """Depth of a world point along the camera axis (may be <= 0)."""
    return float(cam.to_camera_frame(point)[2])


def project_box(box, cam: CameraModel, n_slices: int = 16) -> Box2D:
    """Project a 3D box to its axis-aligned pixel hull, clamped to the image.

    The box is sliced along the world z-axis into ``n_slices`` horizontal
    cross-sections; all 4 corners of every slice are projected and the hull
    of the pixels is taken.  Corners with camera depth <= eps are dropped,
    and a box entirely behind the camera raises BehindCameraError.
    """
    if n_slices < 1:
        raise ConfigError("n_slices must be >= 1")
    if camera_depth((box.x, box.y, box.z), cam) <= 0:
        raise BehindCameraError(
            f"box center ({box.x:.3g}, {box.y:.3g}, {box.z:.3g}) behind camera"
        )
    if n_slices == 1:
        z_levels = [box.z]
    else:
        z_levels = np.linspace(box.z - box.h / 2, box.z + box.h / 2, n_slices)
    us, vs = [], []
    for zk in z_levels:
        for sx in (-0.5, 0.5):
            for sy in (-0.5, 0.5):
                corner = (box.x + sx * box.w, box.y + sy * box.t, zk)
                if camera_depth(corner, cam) <= _MIN_DEPTH:
                    continue
                px = project_point(corner, cam)
                us.append(px.u)
                vs.append(px.v)
    if not us:
        raise BehindCameraError("all box corners behind camera")
    hull = Box2D(min(us), min(vs), max(us), max(vs))
    return hull.clamped(cam.image_size)


# --- camera config file ------------------------------------------------------


def save_camera_yaml(path, cam: CameraModel) -> None:
    doc = {
        "schema_version": CAMERA_SCHEMA_VERSION,
        "image_size": [int(cam.image_size[0]), int(cam.image_size[1])],
        "intrinsic": [[float(v) for v in row] for row in cam.intrinsic],
        "radial": [float(v) for v in cam.radial],
        "tangential": [float(v) for v in cam.tangential],
        "extrinsic": [[float(v) for v in row] for row in cam.extrinsic],
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_camera_yaml(path) -> CameraModel:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: camera config must be a mapping")
    for key in ("image_size", "intrinsic", "radial", "tangential", "extrinsic"):
        if key not in doc:
            raise ConfigError(f"{path}: missing camera field {key!r}")
    try:
        return CameraModel(
            intrinsic=np.array(doc["intrinsic"], dtype=float),
            extrinsic=np.array(doc["extrinsic"], dtype=float),
            radial=tuple(float(v) for v in doc["radial"]),
            tangential=tuple(float(v) for v in doc["tangential"]),
            image_size=tuple(int(v) for v in doc["image_size"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed camera field: {exc}") from exc
