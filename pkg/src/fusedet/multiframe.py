"""Multi-frame recovery of detections lost to mutual occlusion.

People do not vanish between frames.  When the detection count drops, each
remembered identity is extrapolated along its image-plane velocity; if the
extrapolated box lies over another detection (the likely occluder) or near
the frame boundary, a recovered detection is emitted there with decayed
confidence.  An identity absent for n_disappear consecutive frames is
confirmed gone and forgotten.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from .camera import Box2D
from .errors import ConfigError
from .fusion import PROVENANCE_RECOVERED, RefinedDetection


@dataclass
class MultiframeConfig:
    n_disappear: int = 10
    match_distance: float = 80.0
    velocity_tolerance: float = 60.0
    boundary_margin: float = 16.0
    image_size: tuple = (1536, 2048)  # (rows, cols)

    def validate(self) -> None:
        if self.n_disappear < 1:
            raise ConfigError("n_disappear must be >= 1")
        for name in ("match_distance", "velocity_tolerance", "boundary_margin"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise ConfigError("image_size must be positive")


@dataclass
class MemoryEntry:
    """Last confirmed box and motion of one retained identity."""

    box: Box2D
    velocity: np.ndarray  # (du, dv) px/frame
    confidence: float
    frames_absent: int
    identity: int


@dataclass
class FrameMemory:
    entries: list = field(default_factory=list)
    next_identity: int = 0
    prev_count: int = 0


def _center(box: Box2D) -> np.ndarray:
    c = box.center()
    return np.array([c.u, c.v])


def _translated(box: Box2D, center: np.ndarray) -> Box2D:
    old = _center(box)
    du, dv = center[0] - old[0], center[1] - old[1]
    return Box2D(box.u_min + du, box.v_min + dv, box.u_max + du, box.v_max + dv)


def _near_boundary(box: Box2D, cfg: MultiframeConfig) -> bool:
    rows, cols = cfg.image_size
    m = cfg.boundary_margin
    return (box.u_min <= m or box.v_min <= m
            or box.u_max >= cols - m or box.v_max >= rows - m)


def recover(prev: FrameMemory, detections, cfg: MultiframeConfig) -> tuple:
    """Match detections to memory, emit recovered boxes, return new memory.

    Matching is greedy nearest-extrapolation: a detection pairs with a
    remembered identity when its center lies within match_distance of the
    velocity-extrapolated center and the implied per-frame velocity agrees
    within velocity_tolerance.  Ties break toward the lower identity id.
    """
    cfg.validate()
    detections = list(detections)
    count_dropped = len(detections) < prev.prev_count

    extrapolated = {}
    candidates = []
    for entry in prev.entries:
        span = entry.frames_absent + 1
        center = _center(entry.box) + entry.velocity * span
        extrapolated[entry.identity] = center
        for j, det in enumerate(detections):
            det_center = _center(det.box)
            dist = float(np.hypot(*(det_center - center)))
            if dist > cfg.match_distance:
                continue
            implied = (det_center - _center(entry.box)) / span
            if float(np.hypot(*(implied - entry.velocity))) > cfg.velocity_tolerance:
                continue
            candidates.append((dist, entry.identity, j, entry))
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))

    matched_entry = {}   # detection index -> memory entry
    used_identities = set()
    for dist, identity, j, entry in candidates:
        if identity in used_identities or j in matched_entry:
            continue
        used_identities.add(identity)
        matched_entry[j] = entry

    augmented = []
    new_entries = []
    next_identity = prev.next_identity
    for j, det in enumerate(detections):
        if j in matched_entry:
            entry = matched_entry[j]
            span = entry.frames_absent + 1
            displacement = (_center(det.box) - _center(entry.box)) / span
            velocity = 0.5 * entry.velocity + 0.5 * displacement
            identity = entry.identity
        else:
            velocity = np.zeros(2)
            identity = next_identity
            next_identity += 1
        new_entries.append(MemoryEntry(det.box, velocity, det.q, 0, identity))
        augmented.append(replace(det, identity=identity))

    recovered = []
    for entry in prev.entries:
        if entry.identity in used_identities:
            continue
        absent = entry.frames_absent + 1
        if absent >= cfg.n_disappear:
            continue  # disappearance confirmed, identity dropped
        new_entries.append(replace(entry, frames_absent=absent))
        if not count_dropped:
            continue
        box = _translated(entry.box, extrapolated[entry.identity])
        over_detection = any(
            box.intersection_area(d.box.expanded(cfg.match_distance)) > 0
            for d in detections
        )
        if over_detection or _near_boundary(box, cfg):
            conf = entry.confidence * 0.9 ** absent
            recovered.append(RefinedDetection(
                box=box, q=conf, keep_score=conf,
                provenance=PROVENANCE_RECOVERED, identity=entry.identity,
            ))

    out = augmented + recovered
    memory = FrameMemory(new_entries, next_identity, prev_count=len(out))
    return out, memory
