"""Simulated image-branch detector.

Stands in for a neural single-class detector behind the same interface a real
one would use: ground truth in, a list of Detection2D out.  Reliability
degrades with the scene lighting level through a piecewise-linear detection
probability, boxes get Gaussian jitter, and targets occluded beyond the
profile limit are never seen (the image branch, unlike radar, cannot look
through objects).

Every target consumes exactly six random draws per frame whether or not it is
emitted, so runs with paired seeds stay comparable across lighting levels.
"""

from dataclasses import dataclass

import numpy as np
import yaml

from .camera import Box2D
from .errors import ConfigError

SOURCE_IMAGE = "image"
SOURCE_RADAR = "radar"

PROFILE_SCHEMA_VERSION = 1


@dataclass
class Detection2D:
    """A candidate box with per-class confidences (background first)."""

    box: Box2D
    scores: np.ndarray  # length C+1, each in [0, 1]
    source: str = SOURCE_IMAGE

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 1 or self.scores.size < 2:
            raise ConfigError("scores must be a 1-D vector of length >= 2")
        if np.any(self.scores < 0) or np.any(self.scores > 1):
            raise ConfigError("scores must lie in [0, 1]")

    @property
    def confidence(self) -> float:
        """Best non-background class score."""
        return float(self.scores[1:].max())


@dataclass
class DetectorProfile:
    """Behavior knobs for the simulated detector.

    detect_prob is piecewise-linear in lighting through ``detect_prob_points``
    (must be monotone non-decreasing); the emitted class score is a clipped
    Gaussian whose mean interpolates between ``score_mean_dark`` and
    ``score_mean_bright``.
    """

    detect_prob_points: tuple = (
        (0.0, 0.0), (0.05, 0.1), (0.3, 0.85), (0.6, 0.97), (1.0, 0.99),
    )
    box_jitter_std: float = 3.0
    score_mean_dark: float = 0.55
    score_mean_bright: float = 0.92
    score_std: float = 0.05
    confidence_threshold: float = 0.3
    occlusion_limit: float = 0.5

    def validate(self) -> None:
        pts = self.detect_prob_points
        if len(pts) < 2:
            raise ConfigError("need at least 2 detect_prob control points")
        lights = [p[0] for p in pts]
        probs = [p[1] for p in pts]
        if any(b <= a for a, b in zip(lights, lights[1:])):
            raise ConfigError("detect_prob lighting values must strictly increase")
        if any(b < a for a, b in zip(probs, probs[1:])):
            raise ConfigError("detect_prob must be monotone non-decreasing")
        if any(not 0 <= p <= 1 for p in probs):
            raise ConfigError("detect_prob values must lie in [0, 1]")
        if self.box_jitter_std < 0:
            raise ConfigError("box_jitter_std must be >= 0")
        if not 0 <= self.confidence_threshold <= 1:
            raise ConfigError("confidence_threshold must lie in [0, 1]")
        if not 0 <= self.occlusion_limit <= 1:
            raise ConfigError("occlusion_limit must lie in [0, 1]")

    def detect_prob(self, lighting: float) -> float:
        xs = np.array([p[0] for p in self.detect_prob_points])
        ys = np.array([p[1] for p in self.detect_prob_points])
        return float(np.interp(lighting, xs, ys))

    def score_mean(self, lighting: float) -> float:
        lighting = min(max(lighting, 0.0), 1.0)
        return self.score_mean_dark + (self.score_mean_bright - self.score_mean_dark) * lighting


def detect(frame_truth, profile: DetectorProfile, seed: int) -> list[Detection2D]:
    """Emit image detections for one frame of ground truth.

    frame_truth must provide ``lighting`` and ``targets``; each target needs
    ``box2d`` (a Box2D) and ``occlusion`` (fraction in [0, 1]).  Deterministic
    given the seed.
    """
    profile.validate()
    rng = np.random.default_rng(seed)
    lighting = frame_truth.lighting
    p_emit = profile.detect_prob(lighting)
    mean = profile.score_mean(lighting)
    out = []
    for target in frame_truth.targets:
        # fixed draw budget per target keeps paired-seed runs comparable
        u_emit = rng.uniform()
        jitter = rng.normal(0.0, 1.0, size=4)
        z_score = rng.normal()
        if target.occlusion > profile.occlusion_limit:
            continue
        if u_emit >= p_emit:
            continue
        box = target.box2d
        if box.area() <= 0:
            continue
        score = float(np.clip(mean + profile.score_std * z_score, 0.0, 1.0))
        if score < profile.confidence_threshold:
            continue
        j = profile.box_jitter_std * jitter
        u0, u1 = sorted((box.u_min + j[0], box.u_max + j[1]))
        v0, v1 = sorted((box.v_min + j[2], box.v_max + j[3]))
        out.append(Detection2D(
            box=Box2D(u0, v0, u1, v1),
            scores=np.array([1.0 - score, score]),
            source=SOURCE_IMAGE,
        ))
    return out


# --- profile file ------------------------------------------------------------


def save_profile_yaml(path, profile: DetectorProfile) -> None:
    doc = {
        "schema_version": PROFILE_SCHEMA_VERSION,
        "detect_prob_points": [[float(a), float(b)] for a, b in profile.detect_prob_points],
        "box_jitter_std": float(profile.box_jitter_std),
        "score_mean_dark": float(profile.score_mean_dark),
        "score_mean_bright": float(profile.score_mean_bright),
        "score_std": float(profile.score_std),
        "confidence_threshold": float(profile.confidence_threshold),
        "occlusion_limit": float(profile.occlusion_limit),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_profile_yaml(path) -> DetectorProfile:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: detector profile must be a mapping")
    try:
        profile = DetectorProfile(
            detect_prob_points=tuple(
                (float(a), float(b)) for a, b in doc["detect_prob_points"]
            ),
            box_jitter_std=float(doc["box_jitter_std"]),
            score_mean_dark=float(doc["score_mean_dark"]),
            score_mean_bright=float(doc["score_mean_bright"]),
            score_std=float(doc["score_std"]),
            confidence_threshold=float(doc["confidence_threshold"]),
            occlusion_limit=float(doc["occlusion_limit"]),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing profile field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: malformed profile field: {exc}") from exc
    profile.validate()
    return profile
