"""Weighted-distance DBSCAN over radar points and per-cluster 3D boxes.

The distance is the weighted SQUARED form alpha_x*dx^2 + alpha_y*dy^2 +
alpha_z*dz^2 + alpha_v*dv^2, with no square root; ``eps`` is therefore a
threshold in squared-weighted units.  The velocity term is what lets two
spatially overlapping targets moving at different speeds stay separate.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError

OUTLIER = -1


@dataclass
class ClusterConfig:
    """DBSCAN parameters.

    alpha weighs (x, y, z, v) in the squared distance; eps is in squared
    units, and min_pts counts the point itself.
    """

    alpha: tuple = (1.0, 1.0, 1.0, 0.5)
    eps: float = 0.4
    min_pts: int = 4

    def validate(self) -> None:
        if len(self.alpha) != 4:
            raise ConfigError("alpha must have 4 components (x, y, z, v)")
        if any(a < 0 for a in self.alpha) or not any(a > 0 for a in self.alpha):
            raise ConfigError("alpha components must be >= 0 with at least one > 0")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.min_pts < 1:
            raise ConfigError("min_pts must be >= 1")


@dataclass
class ClusterBox:
    """Axis-aligned cluster summary: centroid, mean velocity, extents.

    x is lateral, y is depth along boresight, z is up; w spans x, t spans y,
    h spans z.  v_z holds the mean radial velocity of the members.
    """

    x: float
    y: float
    z: float
    v_z: float
    w: float
    h: float
    t: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.v_z, self.w, self.h, self.t])


@dataclass
class ClusterLabeling:
    """Per-point cluster index (contiguous from 0) or OUTLIER."""

    labels: list[int] = field(default_factory=list)
    n_clusters: int = 0

    def members(self, cluster: int) -> list[int]:
        return [i for i, lab in enumerate(self.labels) if lab == cluster]


def weighted_distance(p, q, alpha) -> float:
    """Squared weighted distance between two (x, y, z, v) points."""
    return float(
        alpha[0] * (p.x - q.x) ** 2
        + alpha[1] * (p.y - q.y) ** 2
        + alpha[2] * (p.z - q.z) ** 2
        + alpha[3] * (p.v - q.v) ** 2
    )


def _pairwise_sq(points, alpha: np.ndarray) -> np.ndarray:
    coords = np.array([[p.x, p.y, p.z, p.v] for p in points])
    diff = coords[:, None, :] - coords[None, :, :]
    return np.einsum("ijk,k->ij", diff * diff, alpha)


def dbscan(points, cfg: ClusterConfig) -> ClusterLabeling:
    """Density clustering with deterministic, input-order expansion.

    A core point has at least min_pts neighbors within eps (inclusive,
    itself included).  Scanning is by input index, so the lowest-index core
    point of each density-connected set founds its cluster, and a border
    point shared by several clusters joins the earliest-created one.
    """
    cfg.validate()
    n = len(points)
    if n == 0:
        return ClusterLabeling([], 0)
    dist = _pairwise_sq(points, np.asarray(cfg.alpha, dtype=float))
    neighbors = [np.nonzero(dist[i] <= cfg.eps)[0] for i in range(n)]
    is_core = [len(nb) >= cfg.min_pts for nb in neighbors]
    labels = [OUTLIER] * n
    visited = [False] * n
    cluster = 0
    for start in range(n):
        if visited[start] or not is_core[start]:
            continue
        # breadth-first over density-reachable points, lowest index first
        visited[start] = True
        labels[start] = cluster
        frontier = list(neighbors[start])
        seen = set(frontier) | {start}
        while frontier:
            frontier.sort()
            i = frontier.pop(0)
            if labels[i] == OUTLIER:
                labels[i] = cluster
            if visited[i]:
                continue
            visited[i] = True
            if is_core[i]:
                for j in neighbors[i]:
                    if j not in seen:
                        seen.add(int(j))
                        frontier.append(int(j))
        cluster += 1
    return ClusterLabeling(labels, cluster)


def cluster_to_box(points) -> ClusterBox:
    """Centroid, mean radial velocity, and min/max extents of one cluster."""
    if not points:
        raise DataError("cannot summarize an empty cluster")
    xs = np.array([p.x for p in points])
    ys = np.array([p.y for p in points])
    zs = np.array([p.z for p in points])
    vs = np.array([p.v for p in points])
    return ClusterBox(
        x=float(xs.mean()), y=float(ys.mean()), z=float(zs.mean()),
        v_z=float(vs.mean()),
        w=float(xs.max() - xs.min()),
        h=float(zs.max() - zs.min()),
        t=float(ys.max() - ys.min()),
    )


def detect_boxes(points, cfg: ClusterConfig) -> list[ClusterBox]:
    """Cluster a frame's points and emit one box per cluster."""
    labeling = dbscan(points, cfg)
    return [
        cluster_to_box([points[i] for i in labeling.members(c)])
        for c in range(labeling.n_clusters)
    ]
