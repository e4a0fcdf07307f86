"""Camera + mmWave-radar fusion detector with a deterministic simulator.

The package is organised as a signal chain: ``dsp`` turns raw ADC cubes into
point clouds, ``clustering`` groups them into boxes, ``tracking`` smooths the
boxes over time, ``camera`` projects them into the image, ``detector``
produces image-space candidates, ``fusion`` scores and refines the combined
candidate set, ``multiframe`` recovers briefly occluded targets, and
``pipeline`` wires everything together over scenes from ``scene``.  Results
are scored by ``evaluate`` and drawn by ``render`` and ``figures``.
"""

from fusedet.camera import Box2D, CameraModel, PixelCoord, project_box, \
    project_point
from fusedet.clustering import ClusterBox, ClusterConfig, ClusterLabeling, \
    dbscan, detect_boxes
from fusedet.detector import Detection2D, DetectorProfile, detect, \
    load_profile_yaml, save_profile_yaml
from fusedet.dsp import AdcCube, CfarConfig, ChannelCalibration, RadarConfig, \
    RadarPoint, cfar_detect, cube_to_pointcloud, estimate_doa, synthesize_adc
from fusedet.errors import ConfigError, DataError, FusedetError, TrainingError
from fusedet.evaluate import EvalReport, evaluate, format_report_text, \
    load_report_yaml, save_report_yaml
from fusedet.fusion import FusionParams, GridConfig, RefinedDetection, \
    TrainHyper, load_fusion_params_yaml, refine, save_fusion_params_yaml, \
    train_refinement
from fusedet.multiframe import FrameMemory, MultiframeConfig, recover
from fusedet.pipeline import DetectionLog, PipelineConfig, \
    build_training_samples, load_detection_log_csv, load_pipeline_yaml, \
    run_pipeline, save_detection_log_csv
from fusedet.render import render_frame_svg, save_frame_svg
from fusedet.scene import SceneSpec, TargetSpec, generate_frame, \
    load_scene_yaml, save_scene_yaml, shipped_scene_names, shipped_scene_path
from fusedet.tracking import KalmanModel, Tracker, TrackerConfig, \
    hungarian_assign

__version__ = "0.1.0"

__all__ = [
    "AdcCube", "Box2D", "CameraModel", "CfarConfig", "ChannelCalibration",
    "ClusterBox", "ClusterConfig", "ClusterLabeling", "ConfigError",
    "DataError", "Detection2D", "DetectionLog", "DetectorProfile",
    "EvalReport", "FrameMemory", "FusedetError", "FusionParams", "GridConfig",
    "KalmanModel", "MultiframeConfig", "PipelineConfig", "PixelCoord",
    "RadarConfig", "RadarPoint", "RefinedDetection", "SceneSpec",
    "TargetSpec", "Tracker", "TrackerConfig", "TrainHyper", "TrainingError",
    "build_training_samples", "cfar_detect", "cube_to_pointcloud", "dbscan",
    "detect", "detect_boxes", "estimate_doa", "evaluate",
    "format_report_text", "generate_frame", "hungarian_assign",
    "load_detection_log_csv", "load_fusion_params_yaml", "load_pipeline_yaml",
    "load_profile_yaml", "load_report_yaml", "load_scene_yaml", "project_box",
    "project_point", "recover", "refine", "render_frame_svg", "run_pipeline",
    "save_detection_log_csv", "save_frame_svg", "save_fusion_params_yaml",
    "save_profile_yaml", "save_report_yaml", "save_scene_yaml",
    "shipped_scene_names", "shipped_scene_path", "synthesize_adc",
    "train_refinement",
    "__version__",
]
