"""Multi-frame tracking: Hungarian association plus a constant-velocity
Kalman filter over 9-dim states (x, y, z, vx, vy, vz, w, h, t).

Observations are 7-dim (x, y, z, v_z, w, h, t): a radar cluster box carries
no lateral velocity, so vx and vy are inferred by the filter alone.  Tracks
that stay unmatched for t_max consecutive frames are dropped.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DataError, NumericError

# state vector layout
STATE_DIM = 9
OBS_DIM = 7
_OBSERVED_STATE_INDICES = (0, 1, 2, 5, 6, 7, 8)  # x, y, z, v_z, w, h, t

GATE_SENTINEL = 1e9


@dataclass
class TrackerConfig:
    t_max: int = 5
    gate_distance: float = 1.0
    dt: float = 0.1

    def validate(self) -> None:
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.gate_distance <= 0:
            raise ConfigError("gate_distance must be positive")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")


class KalmanModel:
    """Constant-velocity model matrices shared by every track.

    Q uses ``q_pos`` on position and extent diagonals and ``q_vel`` on
    velocities; R is ``r_obs`` per observed dimension.  New tracks start from
    ``p0`` times identity with the velocity block raised to ``p0_vel`` since
    spawn velocity is a guess of zero.
    """

    def __init__(self, dt: float = 0.1, q_pos: float = 1e-2, q_vel: float = 1e-1,
                 r_obs: float = 1e-2, p0: float = 1.0, p0_vel: float = 10.0):
        if dt <= 0:
            raise ConfigError("dt must be positive")
        self.dt = dt
        self.F = np.eye(STATE_DIM)
        for axis in range(3):
            self.F[axis, axis + 3] = dt
        self.H = np.zeros((OBS_DIM, STATE_DIM))
        for row, col in enumerate(_OBSERVED_STATE_INDICES):
            self.H[row, col] = 1.0
        q = np.full(STATE_DIM, q_pos)
        q[3:6] = q_vel
        self.Q = np.diag(q)
        self.R = r_obs * np.eye(OBS_DIM)
        self.p0 = p0
        self.p0_vel = p0_vel

    def initial_covariance(self) -> np.ndarray:
        P = self.p0 * np.eye(STATE_DIM)
        P[3:6, 3:6] = self.p0_vel * np.eye(3)
        return P


@dataclass
class TrackState:
    """One live track: 9-dim mean, covariance, and lifecycle bookkeeping."""

    mean: np.ndarray
    covariance: np.ndarray
    track_id: int
    frames_since_update: int = 0

    @property
    def x(self):
        return float(self.mean[0])

    @property
    def y(self):
        return float(self.mean[1])

    @property
    def z(self):
        return float(self.mean[2])

    @property
    def vx(self):
        return float(self.mean[3])

    @property
    def vy(self):
        return float(self.mean[4])

    @property
    def vz(self):
        return float(self.mean[5])

    @property
    def w(self):
        return float(self.mean[6])

    @property
    def h(self):
        return float(self.mean[7])

    @property
    def t(self):
        return float(self.mean[8])


def hungarian_assign(cost) -> set:
    """Minimum-cost assignment covering min(m, n) pairs.

    Rectangular matrices are allowed.  Non-finite costs are rejected; use a
    large finite sentinel for infeasible pairs instead.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return set()
    if cost.ndim != 2:
        raise DataError("cost must be a 2-D matrix")
    if not np.isfinite(cost).all():
        raise DataError("cost matrix contains NaN or infinite entries")
    rows, cols = linear_sum_assignment(cost)
    return {(int(r), int(c)) for r, c in zip(rows, cols)}


def association_cost(track: TrackState, det) -> float:
    """Euclidean distance between a predicted track center and a box center."""
    return float(np.sqrt(
        (track.x - det.x) ** 2 + (track.y - det.y) ** 2 + (track.z - det.z) ** 2
    ))


def kalman_predict(mean: np.ndarray, cov: np.ndarray, model: KalmanModel):
    mean = model.F @ mean
    cov = model.F @ cov @ model.F.T + model.Q
    return mean, cov


def kalman_update(mean: np.ndarray, cov: np.ndarray, z: np.ndarray,
                  model: KalmanModel):
    """Standard correction with gain K = P'H^T (HP'H^T + R)^-1."""
    z = np.asarray(z, dtype=float)
    if z.shape != (OBS_DIM,) or not np.isfinite(z).all():
        raise DataError(f"observation must be a finite {OBS_DIM}-vector")
    innovation = z - model.H @ mean
    S = model.H @ cov @ model.H.T + model.R
    try:
        gain = np.linalg.solve(S.T, (cov @ model.H.T).T).T
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular innovation covariance: {exc}") from exc
    if not np.isfinite(gain).all():
        raise NumericError("non-finite Kalman gain")
    mean = mean + gain @ innovation
    cov = (np.eye(STATE_DIM) - gain @ model.H) @ cov
    cov = (cov + cov.T) / 2  # keep symmetric against round-off drift
    return mean, cov


def box_to_observation(det) -> np.ndarray:
    return np.array([det.x, det.y, det.z, det.v_z, det.w, det.h, det.t], dtype=float)


def spawn_track(det, track_id: int, model: KalmanModel) -> TrackState:
    """New track at the detection with zero velocity and inflated velocity P."""
    mean = np.zeros(STATE_DIM)
    mean[[0, 1, 2, 6, 7, 8]] = [det.x, det.y, det.z, det.w, det.h, det.t]
    return TrackState(mean, model.initial_covariance(), track_id)


class Tracker:
    """Single-owner frame-by-frame tracker; call step_tracks once per frame."""

    def __init__(self, cfg: TrackerConfig | None = None,
                 model: KalmanModel | None = None):
        self.cfg = cfg or TrackerConfig()
        self.cfg.validate()
        self.model = model or KalmanModel(dt=self.cfg.dt)
        self.tracks: list[TrackState] = []
        self._next_id = 0

    def step_tracks(self, detections) -> dict[int, int]:
        """Advance one frame; returns {detection_index: track_id}.

        Predict, gate, assign, update matched, coast unmatched, kill stale,
        spawn from leftover detections, in that order.
        """
        for tr in self.tracks:
            tr.mean, tr.covariance = kalman_predict(tr.mean, tr.covariance, self.model)

        assignment: dict[int, int] = {}
        matched_tracks = set()
        if self.tracks and detections:
            cost = np.empty((len(self.tracks), len(detections)))
            for i, tr in enumerate(self.tracks):
                for j, det in enumerate(detections):
                    d = association_cost(tr, det)
                    cost[i, j] = d if d <= self.cfg.gate_distance else GATE_SENTINEL
            for i, j in hungarian_assign(cost):
                if cost[i, j] >= GATE_SENTINEL:
                    continue  # forced pairing beyond the gate, not a real match
                tr = self.tracks[i]
                tr.mean, tr.covariance = kalman_update(
                    tr.mean, tr.covariance, box_to_observation(detections[j]),
                    self.model,
                )
                tr.frames_since_update = 0
                matched_tracks.add(i)
                assignment[j] = tr.track_id

        for i, tr in enumerate(self.tracks):
            if i not in matched_tracks:
                tr.frames_since_update += 1
        self.tracks = [tr for tr in self.tracks
                       if tr.frames_since_update < self.cfg.t_max]

        for j, det in enumerate(detections):
            if j not in assignment:
                tr = spawn_track(det, self._next_id, self.model)
                self._next_id += 1
                self.tracks.append(tr)
                assignment[j] = tr.track_id
        return assignment

    def matched_tracks(self) -> list[TrackState]:
        """Tracks updated by a detection in the most recent step."""
        return [tr for tr in self.tracks if tr.frames_since_update == 0]


# --- track history CSV -----------------------------------------------------

TRACK_CSV_HEADER = "frame,track_id,x,y,z,vx,vy,vz,w,h,t"


def save_tracks_csv(path, rows) -> None:
    """rows: iterable of (frame, TrackState)."""
    from .dsp import format_float

    with open(path, "w", newline="") as fh:
        fh.write(TRACK_CSV_HEADER + "\n")
        for frame, tr in rows:
            vals = [tr.x, tr.y, tr.z, tr.vx, tr.vy, tr.vz, tr.w, tr.h, tr.t]
            fh.write(f"{frame},{tr.track_id}," +
                     ",".join(format_float(v) for v in vals) + "\n")


def load_tracks_csv(path) -> list[tuple[int, TrackState]]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != TRACK_CSV_HEADER:
            raise DataError(f"{path}: unexpected track header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 11:
                raise DataError(f"{path}: expected 11 columns, got {len(parts)}")
            frame, track_id = int(parts[0]), int(parts[1])
            x, y, z, vx, vy, vz, w, h, t = (float(p) for p in parts[2:])
            mean = np.array([x, y, z, vx, vy, vz, w, h, t])
            rows.append((frame, TrackState(mean, np.eye(STATE_DIM), track_id)))
    return rows
