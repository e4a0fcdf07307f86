"""Second-stage refinement head.

Radar points become a 3-channel image-plane heatmap (count, mean depth, mean
velocity).  Each candidate box crops a 7x7 RoI from it; the pooled RoI feeds
a linear radar-confidence branch that is fused with the image confidence in
logit space, and a tiny 2-layer network decides whether image candidates are
kept.  Radar-sourced candidates skip the integration network and live or die
on the fused confidence alone.

Training minimizes, over IoU-selected positives and negatives,

    L = sum_i [ 1(i from image) * focal(p_i, y_i) + lambda * bce(q_i, y_i) ]

with focal's two branches written out exactly and bce as -y*log(q) (negatives
contribute zero unless the symmetric flag adds the -(1-y)*log(1-q) term).
Gradients are computed analytically; see the per-sample backward pass in
_sample_loss_and_grad.
"""

import copy
from dataclasses import dataclass, field

import numpy as np
import yaml
from scipy.special import expit

from .camera import Box2D, camera_depth, project_point
from .errors import (
    BehindCameraError,
    ConfigError,
    DataError,
    DegenerateBoxError,
    TrainingError,
)

EPS = 1e-7
ROI_SIZE = 7

PROVENANCE_IMAGE = "image"
PROVENANCE_RADAR = "radar"
PROVENANCE_RECOVERED = "recovered"

MODE_FUSION = "fusion"
MODE_IMAGE_ONLY = "image-only"
MODE_RADAR_ONLY = "radar-only"

PARAMS_SCHEMA_VERSION = 1


def clamp_unit(value: float) -> float:
    return float(min(max(value, EPS), 1.0 - EPS))


def logit(value: float) -> float:
    value = clamp_unit(value)
    return float(np.log(value / (1.0 - value)))


@dataclass
class GridConfig:
    cell_size: int = 32
    image_size: tuple = (1536, 2048)  # (rows, cols)

    def validate(self) -> None:
        if self.cell_size < 1:
            raise ConfigError("cell_size must be >= 1")
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise ConfigError("image_size must be positive")

    @property
    def shape(self) -> tuple:
        rows, cols = self.image_size
        return (-(-rows // self.cell_size), -(-cols // self.cell_size))


@dataclass
class RadarHeatmap:
    """Normalized 3-channel grid plus the raw per-cell statistics.

    channels[..., 0] is point count, 1 is mean camera depth, 2 is mean radial
    velocity; each normalized to [0, 1] by that frame's min/max with empty
    cells forced to 0.  ``bounds[c] = (lo, hi)`` records the normalization.
    """

    channels: np.ndarray
    raw: np.ndarray
    bounds: np.ndarray
    cell_size: int
    image_size: tuple


def build_radar_heatmap(points, cam, grid: GridConfig) -> RadarHeatmap:
    """Accumulate projected radar points into the 3-channel heatmap."""
    grid.validate()
    h, w = grid.shape
    count = np.zeros((h, w))
    depth_sum = np.zeros((h, w))
    vel_sum = np.zeros((h, w))
    rows, cols = grid.image_size
    for p in points:
        world = (p.x, p.y, p.z)
        if camera_depth(world, cam) <= 0:
            continue
        px = project_point(world, cam)
        if not (0 <= px.u < cols and 0 <= px.v < rows):
            continue
        ci = int(px.v // grid.cell_size)
        cj = int(px.u // grid.cell_size)
        count[ci, cj] += 1
        depth_sum[ci, cj] += camera_depth(world, cam)
        vel_sum[ci, cj] += p.v
    occupied = count > 0
    raw = np.zeros((h, w, 3))
    raw[..., 0] = count
    raw[occupied, 1] = depth_sum[occupied] / count[occupied]
    raw[occupied, 2] = vel_sum[occupied] / count[occupied]

    channels = np.zeros_like(raw)
    bounds = np.zeros((3, 2))
    for c in range(3):
        lo, hi = float(raw[..., c].min()), float(raw[..., c].max())
        bounds[c] = (lo, hi)
        if hi > lo:
            channels[..., c] = (raw[..., c] - lo) / (hi - lo)
    channels[~occupied, :] = 0.0
    return RadarHeatmap(channels, raw, bounds, grid.cell_size, grid.image_size)


def crop_roi(hm: RadarHeatmap, box: Box2D) -> np.ndarray:
    """Bilinear 7x7x3 crop of the heatmap under the (clamped) box.

    Sample centers sit at (i + 0.5)/7 of the box span; heatmap values are
    defined at cell centers and edge-clamped outside.
    """
    box = box.clamped(hm.image_size)
    if box.area() <= 0:
        raise DegenerateBoxError(
            f"box ({box.u_min:.1f}, {box.v_min:.1f}, {box.u_max:.1f}, {box.v_max:.1f}) "
            "has zero area after clamping"
        )
    h, w, _ = hm.channels.shape
    out = np.empty((ROI_SIZE, ROI_SIZE, 3))
    for i in range(ROI_SIZE):
        v_s = box.v_min + (i + 0.5) / ROI_SIZE * box.height
        gy = np.clip(v_s / hm.cell_size - 0.5, 0.0, h - 1.0)
        y0 = int(np.floor(gy))
        y1 = min(y0 + 1, h - 1)
        fy = gy - y0
        for j in range(ROI_SIZE):
            u_s = box.u_min + (j + 0.5) / ROI_SIZE * box.width
            gx = np.clip(u_s / hm.cell_size - 0.5, 0.0, w - 1.0)
            x0 = int(np.floor(gx))
            x1 = min(x0 + 1, w - 1)
            fx = gx - x0
            top = (1 - fx) * hm.channels[y0, x0] + fx * hm.channels[y0, x1]
            bot = (1 - fx) * hm.channels[y1, x0] + fx * hm.channels[y1, x1]
            out[i, j] = (1 - fy) * top + fy * bot
    return out


@dataclass
class FusionParams:
    """Trainable parameters of the refinement head plus loss hyperparameters.

    The default radar branch turns pooled point density into confidence
    (absent radar evidence gives sigmoid(-2) ~ 0.12); the default integration
    network is all-zero, which scores a neutral p = 0.5 for every candidate.
    """

    radar_w: np.ndarray = field(default_factory=lambda: np.array([60.0, 0.0, 0.0]))
    radar_b: float = -2.0
    w1: np.ndarray = field(default_factory=lambda: np.zeros((8, 4)))
    b1: np.ndarray = field(default_factory=lambda: np.zeros(8))
    w2: np.ndarray = field(default_factory=lambda: np.zeros(8))
    b2: float = 0.0
    lam: float = 1.0
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        self.radar_w = np.asarray(self.radar_w, dtype=float)
        self.w1 = np.asarray(self.w1, dtype=float)
        self.b1 = np.asarray(self.b1, dtype=float)
        self.w2 = np.asarray(self.w2, dtype=float)
        self.validate()

    def validate(self) -> None:
        if self.radar_w.shape != (3,):
            raise ConfigError("radar_w must have 3 entries (one per heatmap channel)")
        hidden = self.w1.shape[0] if self.w1.ndim == 2 else 0
        if hidden < 1:
            raise ConfigError("integration hidden width must be >= 1")
        if self.b1.shape != (hidden,) or self.w2.shape != (hidden,):
            raise ConfigError("b1 and w2 must match the hidden width of w1")
        for arr in (self.radar_w, self.w1, self.b1, self.w2):
            if not np.isfinite(arr).all():
                raise ConfigError("fusion parameters must be finite")
        if not (np.isfinite(self.radar_b) and np.isfinite(self.b2)):
            raise ConfigError("fusion parameters must be finite")

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    def copy(self) -> "FusionParams":
        return copy.deepcopy(self)


def radar_score(roi: np.ndarray, params: FusionParams) -> float:
    """Linear radar confidence from the channel-mean-pooled RoI."""
    pooled = roi.mean(axis=(0, 1))
    return float(params.radar_w @ pooled + params.radar_b)


def perceptual_fuse(image_conf: float, roi: np.ndarray, params: FusionParams) -> float:
    """q = sigmoid(logit(image_conf) + radar linear score)."""
    if not 0 <= image_conf <= 1:
        raise DataError(f"image confidence {image_conf} outside [0, 1]")
    return float(expit(logit(image_conf) + radar_score(roi, params)))


def integrate(v1, v2, params: FusionParams) -> float:
    """Keep score p = sigmoid(W2 relu(W1 [v1; v2] + b1) + b2)."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    if v1.shape != v2.shape or v1.ndim != 1:
        raise DataError("score vectors must be 1-D and the same length")
    x = np.concatenate([v1, v2])
    if x.size != params.input_dim:
        raise DataError(
            f"integration expects input dim {params.input_dim}, got {x.size}"
        )
    z1 = params.w1 @ x + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = float(params.w2 @ a1 + params.b2)
    return float(expit(z2))


# --- losses ------------------------------------------------------------------


def focal_loss(p: float, y: int, alpha: float = 0.25, gamma: float = 2.0) -> float:
    p = clamp_unit(p)
    if y == 1:
        return float(-alpha * (1 - p) ** gamma * np.log(p))
    return float(-(1 - alpha) * p ** gamma * np.log(1 - p))


def bce_loss(q: float, y: int, symmetric: bool = False) -> float:
    """-y log q as printed; the y=0 branch is zero unless ``symmetric``."""
    q = clamp_unit(q)
    if y == 1:
        return float(-np.log(q))
    if symmetric:
        return float(-np.log(1 - q))
    return 0.0


def _focal_grad(p: float, y: int, alpha: float, gamma: float) -> float:
    """dL_focal/dp for the clamped-interior case."""
    p = clamp_unit(p)
    if y == 1:
        return float(
            alpha * gamma * (1 - p) ** (gamma - 1) * np.log(p)
            - alpha * (1 - p) ** gamma / p
        )
    return float(
        -(1 - alpha) * gamma * p ** (gamma - 1) * np.log(1 - p)
        + (1 - alpha) * p ** gamma / (1 - p)
    )


def _bce_grad(q: float, y: int, symmetric: bool) -> float:
    q = clamp_unit(q)
    if y == 1:
        return float(-1.0 / q)
    if symmetric:
        return float(1.0 / (1 - q))
    return 0.0


def select_samples(candidate_boxes, truth_boxes) -> tuple:
    """Indices of positives (max IoU > 0.7) and negatives (max IoU < 0.3)."""
    positives, negatives = [], []
    for i, box in enumerate(candidate_boxes):
        best = max((box.iou(t) for t in truth_boxes), default=0.0)
        if best > 0.7:
            positives.append(i)
        elif best < 0.3:
            negatives.append(i)
    return positives, negatives


@dataclass
class TrainingSample:
    """One selected candidate, preprocessed for the loss.

    ``pooled`` is the channel-mean of its RoI crop, ``image_logit`` the
    logit-space image confidence (0 for radar-sourced candidates).
    """

    scores: np.ndarray
    pooled: np.ndarray
    image_logit: float
    is_image: bool
    label: int


def _zero_grads(params: FusionParams) -> dict:
    return {
        "radar_w": np.zeros_like(params.radar_w),
        "radar_b": 0.0,
        "w1": np.zeros_like(params.w1),
        "b1": np.zeros_like(params.b1),
        "w2": np.zeros_like(params.w2),
        "b2": 0.0,
    }


def _sample_loss_and_grad(sample: TrainingSample, params: FusionParams,
                          symmetric_bce: bool, grads: dict | None) -> float:
    """Forward loss for one sample; accumulates analytic gradients in place."""
    lam, alpha, gamma = params.lam, params.alpha, params.gamma
    y = sample.label
    r = float(params.radar_w @ sample.pooled + params.radar_b)
    q = float(expit(sample.image_logit + r))
    loss = lam * bce_loss(q, y, symmetric_bce)
    dloss_dq = lam * _bce_grad(q, y, symmetric_bce) if grads is not None else 0.0

    if sample.is_image:
        n_class = sample.scores.size - 1
        v2 = np.concatenate([[1.0 - q], np.full(n_class, q)])
        x = np.concatenate([sample.scores, v2])
        z1 = params.w1 @ x + params.b1
        a1 = np.maximum(z1, 0.0)
        z2 = float(params.w2 @ a1 + params.b2)
        p = float(expit(z2))
        loss += focal_loss(p, y, alpha, gamma)
        if grads is not None:
            delta2 = _focal_grad(p, y, alpha, gamma) * p * (1.0 - p)
            grads["w2"] += delta2 * a1
            grads["b2"] += delta2
            delta1 = delta2 * params.w2 * (z1 > 0)
            grads["w1"] += np.outer(delta1, x)
            grads["b1"] += delta1
            # v2 depends on q: x = [v1, 1-q, q, ..., q]
            dx_dq = np.concatenate([
                np.zeros(sample.scores.size), [-1.0], np.ones(n_class),
            ])
            dloss_dq += float(delta1 @ (params.w1 @ dx_dq))

    if grads is not None:
        delta_q = dloss_dq * q * (1.0 - q)
        grads["radar_w"] += delta_q * sample.pooled
        grads["radar_b"] += delta_q
    return loss


def total_loss(samples, params: FusionParams, symmetric_bce: bool = False) -> float:
    """Eq-style sum of focal (image candidates only) plus lambda-weighted bce."""
    if not samples:
        raise TrainingError("loss over an empty selected-sample set")
    return float(sum(
        _sample_loss_and_grad(s, params, symmetric_bce, None) for s in samples
    ))


def loss_gradients(samples, params: FusionParams,
                   symmetric_bce: bool = False) -> tuple:
    """(total loss, dict of parameter gradients) over a batch."""
    if not samples:
        raise TrainingError("gradient over an empty batch")
    grads = _zero_grads(params)
    loss = float(sum(
        _sample_loss_and_grad(s, params, symmetric_bce, grads) for s in samples
    ))
    return loss, grads


@dataclass
class TrainHyper:
    lr: float = 0.05
    epochs: int = 60
    batch_size: int = 32
    lam: float = 1.0
    alpha: float = 0.25
    gamma: float = 2.0
    seed: int = 0
    symmetric_bce: bool = False
    hidden: int = 8


def init_fusion_params(hyper: TrainHyper, n_class: int = 1) -> FusionParams:
    """Small seeded random init; zeros would leave every relu unit dead."""
    rng = np.random.default_rng(hyper.seed)
    dim = 2 * (n_class + 1)
    return FusionParams(
        radar_w=rng.normal(0.0, 0.5, size=3),
        radar_b=float(rng.normal(0.0, 0.5)),
        w1=rng.normal(0.0, 0.5, size=(hyper.hidden, dim)),
        b1=rng.normal(0.0, 0.1, size=hyper.hidden),
        w2=rng.normal(0.0, 0.5, size=hyper.hidden),
        b2=float(rng.normal(0.0, 0.1)),
        lam=hyper.lam, alpha=hyper.alpha, gamma=hyper.gamma,
    )


def train_refinement(samples, hyper: TrainHyper,
                     initial: FusionParams | None = None) -> FusionParams:
    """Mini-batch gradient descent; returns the best-loss parameters seen.

    Deterministic given hyper.seed.  The initial parameters count as a
    candidate, so the returned loss never exceeds the starting loss.
    """
    samples = list(samples)
    labels = [s.label for s in samples]
    if 1 not in labels or 0 not in labels:
        raise TrainingError("training needs at least one positive and one negative")
    params = initial.copy() if initial is not None else init_fusion_params(hyper)
    params.lam, params.alpha, params.gamma = hyper.lam, hyper.alpha, hyper.gamma

    best = params.copy()
    best_loss = total_loss(samples, params, hyper.symmetric_bce)
    if not np.isfinite(best_loss):
        raise TrainingError(f"initial loss is not finite: {best_loss}")
    rng = np.random.default_rng(hyper.seed)
    order = np.arange(len(samples))
    for epoch in range(hyper.epochs):
        rng.shuffle(order)
        for lo in range(0, len(order), hyper.batch_size):
            batch = [samples[i] for i in order[lo:lo + hyper.batch_size]]
            _, grads = loss_gradients(batch, params, hyper.symmetric_bce)
            scale = hyper.lr / len(batch)
            params.radar_w -= scale * grads["radar_w"]
            params.radar_b -= scale * grads["radar_b"]
            params.w1 -= scale * grads["w1"]
            params.b1 -= scale * grads["b1"]
            params.w2 -= scale * grads["w2"]
            params.b2 -= scale * grads["b2"]
        loss = total_loss(samples, params, hyper.symmetric_bce)
        if not np.isfinite(loss):
            raise TrainingError(f"loss diverged to {loss} at epoch {epoch}")
        if loss < best_loss:
            best_loss = loss
            best = params.copy()
    return best


# --- refinement --------------------------------------------------------------


@dataclass
class RefinedDetection:
    """Final detection: fused confidence q, keep score, and where it came from."""

    box: Box2D
    q: float
    keep_score: float
    provenance: str
    identity: int = -1


def refine(candidates, heatmap: RadarHeatmap, params: FusionParams,
           tau_p: float = 0.5, tau_q: float = 0.5, mode: str = MODE_FUSION,
           nms_iou: float = 0.5) -> list[RefinedDetection]:
    """Score candidates against radar evidence, threshold, and de-duplicate.

    Image candidates need both p >= tau_p and q >= tau_q; radar candidates
    skip the integration network and need only q >= tau_q.  In image-only
    mode the radar term is forced to zero so q reduces to the image
    confidence.  Greedy NMS keeps the highest-q box of any overlapping group.
    """
    if mode not in (MODE_FUSION, MODE_IMAGE_ONLY, MODE_RADAR_ONLY):
        raise ConfigError(f"unknown mode {mode!r}")
    kept = []
    for cand in candidates:
        clamped = cand.box.clamped(heatmap.image_size)
        if clamped.area() <= 0:
            continue
        roi = crop_roi(heatmap, clamped)
        r = 0.0 if mode == MODE_IMAGE_ONLY else radar_score(roi, params)
        if cand.source == PROVENANCE_IMAGE:
            q = float(expit(logit(cand.confidence) + r))
            n_class = cand.scores.size - 1
            v2 = np.concatenate([[1.0 - q], np.full(n_class, q)])
            p = integrate(cand.scores, v2, params)
            if p >= tau_p and q >= tau_q:
                kept.append(RefinedDetection(cand.box, q, p, PROVENANCE_IMAGE))
        else:
            q = float(expit(r))
            if q >= tau_q:
                kept.append(RefinedDetection(cand.box, q, q, PROVENANCE_RADAR))
    # greedy NMS, highest fused confidence first (stable on input order)
    order = sorted(range(len(kept)), key=lambda i: (-kept[i].q, i))
    survivors: list[RefinedDetection] = []
    for i in order:
        if all(kept[i].box.iou(s.box) <= nms_iou for s in survivors):
            survivors.append(kept[i])
    return survivors


# --- parameter file ----------------------------------------------------------


def save_fusion_params_yaml(path, params: FusionParams) -> None:
    doc = {
        "schema_version": PARAMS_SCHEMA_VERSION,
        "lam": float(params.lam),
        "alpha": float(params.alpha),
        "gamma": float(params.gamma),
        "radar_w": [float(v) for v in params.radar_w],
        "radar_b": float(params.radar_b),
        "w1": [[float(v) for v in row] for row in params.w1],
        "b1": [float(v) for v in params.b1],
        "w2": [float(v) for v in params.w2],
        "b2": float(params.b2),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_fusion_params_yaml(path) -> FusionParams:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: fusion params must be a mapping")
    try:
        return FusionParams(
            radar_w=np.array(doc["radar_w"], dtype=float),
            radar_b=float(doc["radar_b"]),
            w1=np.array(doc["w1"], dtype=float),
            b1=np.array(doc["b1"], dtype=float),
            w2=np.array(doc["w2"], dtype=float),
            b2=float(doc["b2"]),
            lam=float(doc["lam"]),
            alpha=float(doc["alpha"]),
            gamma=float(doc["gamma"]),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing fusion field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed fusion field: {exc}") from exc
