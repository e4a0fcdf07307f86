"""End-to-end per-frame pipeline: scene truth to refined detection log.

Each frame flows truth -> radar returns -> clustering -> tracking -> projected
radar candidates, in parallel with the image detector, then both candidate
sets pass through radar-evidence refinement and multi-frame recovery.  The
whole chain is deterministic given the scene seed.
"""

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .camera import Box2D, CameraModel, load_camera_yaml, project_box
from .clustering import ClusterConfig, detect_boxes
from .detector import (SOURCE_RADAR, Detection2D, DetectorProfile, detect,
                       load_profile_yaml)
from .dsp import RadarConfig, cube_to_pointcloud, format_float
from .errors import BehindCameraError, ConfigError, DataError
from .fusion import (MODE_FUSION, MODE_IMAGE_ONLY, MODE_RADAR_ONLY,
                     FusionParams, GridConfig, RefinedDetection, TrainingSample,
                     build_radar_heatmap, clamp_unit, crop_roi,
                     load_fusion_params_yaml, logit, select_samples)
from .fusion import refine as refine_candidates
from .multiframe import FrameMemory, MultiframeConfig, recover
from .scene import (MODE_ADC, MODE_POINTS, SceneSpec, emit_radar,
                    generate_frame, image_seed)
from .tracking import Tracker, TrackerConfig

LOG_SCHEMA_VERSION = 1

RADAR_NEUTRAL_SCORES = (0.5, 0.5)

PIPELINE_SCHEMA_VERSION = 1


@dataclass
class PipelineConfig:
    """Everything run_pipeline needs besides the scene itself."""

    camera: CameraModel = field(default_factory=CameraModel)
    detector: DetectorProfile = field(default_factory=DetectorProfile)
    fusion: FusionParams = field(default_factory=FusionParams)
    radar: RadarConfig = field(default_factory=RadarConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    multiframe: MultiframeConfig = field(default_factory=MultiframeConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    mode: str = MODE_FUSION
    radar_mode: str = MODE_POINTS
    use_multiframe: bool = True
    tau_p: float = 0.3
    tau_q: float = 0.3
    nms_iou: float = 0.5
    adc_sensor_height: float = 0.9

    def validate(self) -> None:
        if self.mode not in (MODE_FUSION, MODE_IMAGE_ONLY, MODE_RADAR_ONLY):
            raise ConfigError(f"mode: unknown value {self.mode!r}")
        if self.radar_mode not in (MODE_POINTS, MODE_ADC):
            raise ConfigError(f"radar_mode: unknown value {self.radar_mode!r}")
        for name in ("tau_p", "tau_q", "nms_iou"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name}: {value} outside [0, 1]")
        self.camera.validate()
        self.detector.validate()
        self.radar.validate()
        self.cluster.validate()
        self.tracker.validate()
        self.multiframe.validate()
        self.grid.validate()
        # the image plane is shared by the camera, the heatmap grid and the
        # boundary logic of the multiframe module
        if tuple(self.grid.image_size) != tuple(self.camera.image_size):
            raise ConfigError(
                f"grid.image_size {self.grid.image_size} != "
                f"camera.image_size {self.camera.image_size}")
        if tuple(self.multiframe.image_size) != tuple(self.camera.image_size):
            raise ConfigError(
                f"multiframe.image_size {self.multiframe.image_size} != "
                f"camera.image_size {self.camera.image_size}")


@dataclass
class TruthBox:
    """Projected ground truth carried alongside the detections in a log."""

    target_id: int
    box: Box2D
    occlusion: float


@dataclass
class FrameRecord:
    frame: int
    lighting: float
    detections: list
    truth: list  # of TruthBox


@dataclass
class DetectionLog:
    frames: list = field(default_factory=list)

    def validate(self) -> None:
        for k, rec in enumerate(self.frames):
            if rec.frame != k:
                raise DataError(f"log frames not contiguous: index {k} "
                                f"holds frame {rec.frame}")


def _radar_points(spec: SceneSpec, truth, cfg: PipelineConfig):
    returns = emit_radar(truth, spec, mode=cfg.radar_mode,
                         radar_config=cfg.radar)
    if cfg.radar_mode == MODE_ADC:
        return cube_to_pointcloud(returns,
                                  sensor_height=cfg.adc_sensor_height)
    return returns


def _radar_candidates(points, tracker: Tracker, cfg: PipelineConfig):
    """Cluster, track, and project the matched track boxes into the image."""
    boxes = detect_boxes(points, cfg.cluster)
    tracker.step_tracks(boxes)
    candidates = []
    for track in tracker.matched_tracks():
        try:
            box2d = project_box(track, cfg.camera)
        except BehindCameraError:
            continue
        if box2d.area() <= 0:
            continue
        candidates.append(Detection2D(box=box2d,
                                      scores=np.array(RADAR_NEUTRAL_SCORES),
                                      source=SOURCE_RADAR))
    return candidates


def run_pipeline(cfg: PipelineConfig, spec: SceneSpec) -> DetectionLog:
    """Run the full detection chain over every frame of a scene."""
    cfg.validate()
    spec.validate()
    if abs(cfg.tracker.dt - 1.0 / spec.frame_rate) > 1e-9:
        raise ConfigError(
            f"tracker.dt {cfg.tracker.dt} does not match the scene frame "
            f"interval {1.0 / spec.frame_rate}")

    tracker = Tracker(cfg.tracker)
    memory = FrameMemory()
    log = DetectionLog()
    empty_heatmap = build_radar_heatmap([], cfg.camera, cfg.grid)

    for k in range(spec.duration):
        truth = generate_frame(spec, k, cfg.camera)

        if cfg.mode == MODE_IMAGE_ONLY:
            candidates = list(detect(truth, cfg.detector, image_seed(spec, k)))
            heatmap = empty_heatmap
        else:
            points = _radar_points(spec, truth, cfg)
            candidates = []
            if cfg.mode == MODE_FUSION:
                candidates.extend(detect(truth, cfg.detector,
                                         image_seed(spec, k)))
            candidates.extend(_radar_candidates(points, tracker, cfg))
            heatmap = build_radar_heatmap(points, cfg.camera, cfg.grid)

        refined = refine_candidates(candidates, heatmap, cfg.fusion,
                                    tau_p=cfg.tau_p, tau_q=cfg.tau_q,
                                    mode=cfg.mode, nms_iou=cfg.nms_iou)
        if cfg.use_multiframe:
            refined, memory = recover(memory, refined, cfg.multiframe)

        truth_boxes = [TruthBox(t.target_id, t.box2d, t.occlusion)
                       for t in truth.targets if t.box2d is not None]
        log.frames.append(FrameRecord(frame=k, lighting=truth.lighting,
                                      detections=refined, truth=truth_boxes))
    return log


# --- training data -----------------------------------------------------------


def _decoy_candidates(candidates, image_size):
    """Displaced copies of the candidates, as background proposals.

    Real candidates sit on targets almost by construction, so a trainable
    head would otherwise never see a box over empty space.  Shifting each
    candidate sideways by twice its width lands on background in most
    frames; when a decoy happens to cover another target the IoU labeling
    sorts it out like any other candidate.
    """
    rows, cols = image_size
    decoys = []
    for i, cand in enumerate(candidates):
        width = cand.box.u_max - cand.box.u_min
        shift = 2.0 * width if i % 2 == 0 else -2.0 * width
        box = Box2D(cand.box.u_min + shift, cand.box.v_min,
                    cand.box.u_max + shift, cand.box.v_max)
        if box.u_min < 0 or box.u_max > cols:
            box = Box2D(cand.box.u_min - shift, cand.box.v_min,
                        cand.box.u_max - shift, cand.box.v_max)
        decoys.append(Detection2D(box=box,
                                  scores=np.array(RADAR_NEUTRAL_SCORES),
                                  source=SOURCE_RADAR))
    return decoys


def build_training_samples(cfg: PipelineConfig, spec: SceneSpec,
                           jitter_seeds=(0,), decoys=True) -> list:
    """Collect labeled fusion samples from pipeline candidates.

    Runs the candidate-generation half of the pipeline (no refinement) over
    the scene once per seed, labels candidates against the projected truth
    by IoU, and preprocesses each into a TrainingSample.  With ``decoys``
    the candidate set is augmented with displaced background boxes so both
    classes are represented.
    """
    cfg.validate()
    samples = []
    for seed in jitter_seeds:
        seeded = replace(spec, seed=int(seed))
        tracker = Tracker(cfg.tracker)
        for k in range(seeded.duration):
            truth = generate_frame(seeded, k, cfg.camera)
            points = _radar_points(seeded, truth, cfg)
            candidates = list(detect(truth, cfg.detector,
                                     image_seed(seeded, k)))
            candidates.extend(_radar_candidates(points, tracker, cfg))
            if not candidates:
                continue
            if decoys:
                candidates.extend(_decoy_candidates(candidates,
                                                    cfg.camera.image_size))
            heatmap = build_radar_heatmap(points, cfg.camera, cfg.grid)
            truth_boxes = [t.box2d for t in truth.targets
                           if t.box2d is not None]
            boxes = [c.box.clamped(cfg.camera.image_size) for c in candidates]
            positives, negatives = select_samples(boxes, truth_boxes)
            for idx, label in [(i, 1) for i in positives] + [
                    (i, 0) for i in negatives]:
                cand = candidates[idx]
                if boxes[idx].area() <= 0:
                    continue
                roi = crop_roi(heatmap, boxes[idx])
                is_image = cand.source != SOURCE_RADAR
                samples.append(TrainingSample(
                    scores=np.asarray(cand.scores, dtype=float),
                    pooled=roi.reshape(-1, roi.shape[-1]).mean(axis=0),
                    image_logit=(logit(clamp_unit(cand.confidence))
                                 if is_image else 0.0),
                    is_image=is_image,
                    label=label,
                ))
    return samples


# --- detection log CSV -------------------------------------------------------

_LOG_HEADER = ["kind", "frame", "lighting", "identity", "provenance",
               "target_id", "u_min", "v_min", "u_max", "v_max", "q",
               "keep_score", "occlusion"]


def save_detection_log_csv(path, log: DetectionLog) -> None:
    log.validate()
    with open(path, "w", newline="") as fh:
        fh.write(f"# fusedet detection log schema_version={LOG_SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(_LOG_HEADER)
        for rec in log.frames:
            writer.writerow(["frame", rec.frame, format_float(rec.lighting)]
                            + [""] * 10)
            for t in rec.truth:
                writer.writerow([
                    "truth", rec.frame, "", "", "", t.target_id,
                    format_float(t.box.u_min), format_float(t.box.v_min),
                    format_float(t.box.u_max), format_float(t.box.v_max),
                    "", "", format_float(t.occlusion),
                ])
            for d in rec.detections:
                writer.writerow([
                    "det", rec.frame, "", d.identity, d.provenance, "",
                    format_float(d.box.u_min), format_float(d.box.v_min),
                    format_float(d.box.u_max), format_float(d.box.v_max),
                    format_float(d.q), format_float(d.keep_score), "",
                ])


def load_detection_log_csv(path) -> DetectionLog:
    with open(path, newline="") as fh:
        first = fh.readline()
        if f"schema_version={LOG_SCHEMA_VERSION}" not in first:
            raise DataError(f"{path}: unsupported detection log header "
                            f"{first.strip()!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _LOG_HEADER:
            raise DataError(f"{path}: unexpected column header")
        log = DetectionLog()
        current = None
        for row in reader:
            kind, frame = row[0], int(row[1])
            if kind == "frame":
                current = FrameRecord(frame=frame, lighting=float(row[2]),
                                      detections=[], truth=[])
                log.frames.append(current)
                continue
            if current is None or current.frame != frame:
                raise DataError(f"{path}: row for frame {frame} outside its "
                                "frame block")
            box = Box2D(float(row[6]), float(row[7]),
                        float(row[8]), float(row[9]))
            if kind == "truth":
                current.truth.append(TruthBox(int(row[5]), box,
                                              float(row[12])))
            elif kind == "det":
                current.detections.append(RefinedDetection(
                    box=box, q=float(row[10]), keep_score=float(row[11]),
                    provenance=row[4], identity=int(row[3])))
            else:
                raise DataError(f"{path}: unknown row kind {kind!r}")
    log.validate()
    return log


# --- pipeline config file ----------------------------------------------------

_SECTION_TYPES = {
    "cluster": ClusterConfig,
    "tracker": TrackerConfig,
    "multiframe": MultiframeConfig,
    "grid": GridConfig,
    "radar": RadarConfig,
    "detector": DetectorProfile,
}

_SCALAR_FIELDS = ("mode", "radar_mode", "use_multiframe", "tau_p", "tau_q",
                  "nms_iou", "adc_sensor_height")


def load_pipeline_yaml(path) -> PipelineConfig:
    """Build a PipelineConfig from a YAML file.

    Sub-configs are inline mappings of field overrides; the camera, detector
    profile, and fusion parameters may instead reference separate files via
    ``camera_file``, ``detector_file`` and ``fusion_file`` (relative paths
    resolve against the config file's directory).
    """
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: pipeline config must be a mapping")
    version = doc.pop("schema_version", PIPELINE_SCHEMA_VERSION)
    if version != PIPELINE_SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version!r}")
    base = os.path.dirname(os.fspath(path))
    cfg = PipelineConfig()

    for key, loader, attr in (("camera_file", load_camera_yaml, "camera"),
                              ("detector_file", load_profile_yaml, "detector"),
                              ("fusion_file", load_fusion_params_yaml,
                               "fusion")):
        ref = doc.pop(key, None)
        if ref is None:
            continue
        resolved = os.path.join(base, ref) if not os.path.isabs(ref) else ref
        if not os.path.exists(resolved):
            raise ConfigError(f"{path}: {key} {ref!r} does not exist")
        setattr(cfg, attr, loader(resolved))

    for name, kind in _SECTION_TYPES.items():
        section = doc.pop(name, None)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ConfigError(f"{path}: {name} must be a mapping")
        current = getattr(cfg, name)
        for field_name, value in section.items():
            if not hasattr(current, field_name):
                raise ConfigError(
                    f"{path}: {name}.{field_name} is not a known field")
            if isinstance(value, list):
                value = tuple(tuple(v) if isinstance(v, list) else v
                              for v in value)
            setattr(current, field_name, value)

    for name in _SCALAR_FIELDS:
        if name in doc:
            setattr(cfg, name, doc.pop(name))
    if doc:
        unknown = ", ".join(sorted(doc))
        raise ConfigError(f"{path}: unknown pipeline fields: {unknown}")
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg
