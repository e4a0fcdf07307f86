"""FMCW radar front-end: ADC calibration, range/Doppler FFTs, CA-CFAR, DOA.

Converts a raw complex ADC cube sampled as [channel][chirp][sample] into a
sparse point cloud of (x, y, z, v) detections.  A matching synthesizer builds
deterministic test cubes from ground-truth targets, and the binary cube format
plus point-cloud CSV round-trip live here as well.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

SPEED_OF_LIGHT = 299_792_458.0

WINDOW_HANN = "hann"
WINDOW_RECT = "rect"

ADC_MAGIC = b"ADC1"


def _next_pow2(n: int) -> int:
    m = 1
    while m < n:
        m *= 2
    return m


def _window(kind: str, n: int) -> np.ndarray:
    if kind == WINDOW_RECT:
        return np.ones(n)
    if kind == WINDOW_HANN:
        return np.hanning(n)
    raise ConfigError(f"unknown window kind {kind!r} (expected 'hann' or 'rect')")


@dataclass
class RadarConfig:
    """Chirp and array parameters of the FMCW sensor.

    Defaults describe a 77 GHz sensor sweeping ~4 GHz at 79 MHz/us with
    8 Msps complex sampling, which yields a range resolution under 4 cm
    and an unambiguous velocity span well past walking speed.
    """

    start_freq: float = 77e9          # Hz
    chirp_slope: float = 79e12        # Hz/s
    idle_time: float = 5e-6           # s between chirps
    sample_rate: float = 8e6          # complex samples/s
    rx_gain: float = 48.0             # dB
    n_samples_per_chirp: int = 405
    n_chirps_per_frame: int = 64
    n_rx_channels: int = 4
    bandwidth: float = 4e9            # Hz
    max_range: float = 10.0           # m
    range_resolution: float = SPEED_OF_LIGHT / (2 * 4e9)  # m
    max_velocity: float = 26.0 / 3.6  # m/s

    @property
    def chirp_duration(self) -> float:
        return self.n_samples_per_chirp / self.sample_rate

    @property
    def chirp_period(self) -> float:
        return self.chirp_duration + self.idle_time

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.start_freq

    @property
    def range_fft_size(self) -> int:
        return _next_pow2(self.n_samples_per_chirp)

    @property
    def doppler_fft_size(self) -> int:
        return _next_pow2(self.n_chirps_per_frame)

    @property
    def range_bin_m(self) -> float:
        # beat frequency per FFT bin mapped through f_b = 2*S*R/c
        return self.sample_rate * SPEED_OF_LIGHT / (2 * self.chirp_slope * self.range_fft_size)

    @property
    def velocity_bin_mps(self) -> float:
        return self.wavelength / (2 * self.chirp_period * self.doppler_fft_size)

    def validate(self) -> None:
        if self.n_samples_per_chirp < 1 or self.n_chirps_per_frame < 1 or self.n_rx_channels < 1:
            raise ConfigError("all counts must be >= 1")
        if self.sample_rate <= 0 or self.bandwidth <= 0:
            raise ConfigError("sample_rate and bandwidth must be positive")
        swept = self.chirp_slope * self.chirp_duration
        if abs(swept - self.bandwidth) > 0.01 * self.bandwidth:
            raise ConfigError(
                f"bandwidth {self.bandwidth:.4g} Hz inconsistent with slope*duration "
                f"{swept:.4g} Hz (tolerance 1%)"
            )
        implied = SPEED_OF_LIGHT / (2 * self.bandwidth)
        if abs(implied - self.range_resolution) > 0.01 * implied:
            raise ConfigError(
                f"range_resolution {self.range_resolution:.4g} m inconsistent with "
                f"c/(2B) = {implied:.4g} m (tolerance 1%)"
            )

    def as_field_tuple(self) -> tuple:
        return (
            self.start_freq, self.chirp_slope, self.idle_time, self.sample_rate,
            self.rx_gain, float(self.n_samples_per_chirp), float(self.n_chirps_per_frame),
            float(self.n_rx_channels), self.bandwidth, self.max_range,
            self.range_resolution, self.max_velocity,
        )

    @classmethod
    def from_field_tuple(cls, values) -> "RadarConfig":
        return cls(
            start_freq=values[0], chirp_slope=values[1], idle_time=values[2],
            sample_rate=values[3], rx_gain=values[4],
            n_samples_per_chirp=int(values[5]), n_chirps_per_frame=int(values[6]),
            n_rx_channels=int(values[7]), bandwidth=values[8], max_range=values[9],
            range_resolution=values[10], max_velocity=values[11],
        )


@dataclass
class AdcCube:
    """Raw complex samples, shape (n_rx_channels, n_chirps, n_samples)."""

    samples: np.ndarray
    config: RadarConfig

    def __post_init__(self):
        expected = (
            self.config.n_rx_channels,
            self.config.n_chirps_per_frame,
            self.config.n_samples_per_chirp,
        )
        if tuple(self.samples.shape) != expected:
            raise DataError(f"cube shape {self.samples.shape} does not match config {expected}")


@dataclass
class ChannelCalibration:
    """Per-receive-channel affine correction: out = gain * (in - offset)."""

    gains: np.ndarray    # complex, one per channel
    offsets: np.ndarray  # complex, one per channel

    def __post_init__(self):
        self.gains = np.asarray(self.gains, dtype=complex)
        self.offsets = np.asarray(self.offsets, dtype=complex)
        if self.gains.shape != self.offsets.shape or self.gains.ndim != 1:
            raise ConfigError("gains and offsets must be 1-D arrays of the same length")
        if np.any(np.abs(self.gains) <= 0):
            raise ConfigError("gain magnitudes must be positive")

    @classmethod
    def identity(cls, n_channels: int) -> "ChannelCalibration":
        return cls(np.ones(n_channels, dtype=complex), np.zeros(n_channels, dtype=complex))


@dataclass
class RangeDopplerMap:
    """Complex range-Doppler spectra per channel plus bin-to-physical factors.

    ``spectra`` is indexed [channel][doppler_bin][range_bin]; the Doppler axis
    is FFT-shifted so bin ``doppler_fft_size // 2`` is zero velocity.
    """

    spectra: np.ndarray
    range_bin_m: float
    velocity_bin_mps: float

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.spectra)

    def integrated_power(self) -> np.ndarray:
        """Non-coherent mean of per-channel power, shape (doppler, range)."""
        return np.mean(np.abs(self.spectra) ** 2, axis=0)

    def velocity_of_bin(self, doppler_bin: int) -> float:
        half = self.spectra.shape[1] // 2
        return (doppler_bin - half) * self.velocity_bin_mps


@dataclass
class RadarPoint:
    """One detection: position in metres, radial velocity in m/s."""

    x: float
    y: float
    z: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.v])


@dataclass
class CfarConfig:
    guard_cells: int = 2
    training_cells: int = 4
    scale_factor: float = 14.0

    def validate(self) -> None:
        if self.guard_cells < 0 or self.training_cells < 1:
            raise ConfigError("guard_cells must be >= 0, training_cells >= 1")
        if self.scale_factor <= 0:
            raise ConfigError("scale_factor must be positive")


def cfar_scale_for_pfa(pfa: float, n_training: int) -> float:
    """Cell-averaging threshold multiplier hitting a target false-alarm rate.

    Assumes exponentially distributed cell values (power of complex Gaussian
    noise); the classic closed form is N * (Pfa**(-1/N) - 1).
    """
    if not 0 < pfa < 1:
        raise ConfigError("pfa must lie in (0, 1)")
    return n_training * (pfa ** (-1.0 / n_training) - 1.0)


def calibrate_adc(cube: AdcCube, cal: ChannelCalibration) -> AdcCube:
    """Apply per-channel affine correction gain * (sample - offset)."""
    if len(cal.gains) != cube.config.n_rx_channels:
        raise ConfigError(
            f"calibration has {len(cal.gains)} channels, cube has {cube.config.n_rx_channels}"
        )
    corrected = cal.gains[:, None, None] * (cube.samples - cal.offsets[:, None, None])
    return AdcCube(corrected, cube.config)


def range_fft(cube: AdcCube, window: str = WINDOW_HANN) -> np.ndarray:
    """Per-chirp FFT over fast-time samples.

    Returns complex spectra of shape (channels, chirps, range_fft_size),
    zero-padded to the next power of two.
    """
    n = cube.config.n_samples_per_chirp
    if n < 2:
        raise ConfigError("need at least 2 samples per chirp")
    w = _window(window, n)
    return np.fft.fft(cube.samples * w, n=cube.config.range_fft_size, axis=2)


def doppler_fft(range_spectra: np.ndarray, config: RadarConfig,
                window: str = WINDOW_HANN) -> RangeDopplerMap:
    """Slow-time FFT across chirps, FFT-shifted so mid-bin is zero velocity."""
    if config.n_chirps_per_frame < 2:
        raise ConfigError("need at least 2 chirps per frame")
    w = _window(window, config.n_chirps_per_frame)
    spec = np.fft.fft(range_spectra * w[None, :, None], n=config.doppler_fft_size, axis=1)
    spec = np.fft.fftshift(spec, axes=1)
    return RangeDopplerMap(spec, config.range_bin_m, config.velocity_bin_mps)


def _window_sums(values: np.ndarray, half: int) -> np.ndarray:
    """Sum of the (2*half+1)^2 square around each cell, via an integral image.

    Only interior cells (full window inside the map) are meaningful.
    """
    padded = np.zeros((values.shape[0] + 1, values.shape[1] + 1))
    padded[1:, 1:] = np.cumsum(np.cumsum(values, axis=0), axis=1)
    k = 2 * half + 1
    rows = values.shape[0] - k + 1
    cols = values.shape[1] - k + 1
    if rows <= 0 or cols <= 0:
        raise ConfigError("CFAR window larger than map")
    out = np.full(values.shape, np.nan)
    sums = (padded[k:, k:] - padded[:-k, k:] - padded[k:, :-k] + padded[:-k, :-k])
    out[half:half + rows, half:half + cols] = sums
    return out


def cfar_detect(rd_map, cfg: CfarConfig) -> list[tuple[int, int, float]]:
    """2-D cell-averaging CFAR over a (doppler, range) map.

    A cell fires when its value exceeds ``scale_factor`` times the mean of the
    training ring (square window minus guard square).  Cells whose window
    would leave the map are skipped.  Returns (range_bin, doppler_bin, snr)
    tuples sorted by descending snr, where snr is value / training mean.
    """
    cfg.validate()
    if isinstance(rd_map, RangeDopplerMap):
        values = rd_map.integrated_power()
    else:
        values = np.asarray(rd_map, dtype=float)
    g, t = cfg.guard_cells, cfg.training_cells
    outer = _window_sums(values, g + t)
    inner = _window_sums(values, g) if g > 0 else values.copy()
    n_train = (2 * (g + t) + 1) ** 2 - (2 * g + 1) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        noise = (outer - inner) / n_train
        snr = values / noise
        hit = values > cfg.scale_factor * noise
    hit &= np.isfinite(snr)
    d_idx, r_idx = np.nonzero(hit)
    order = np.argsort(-snr[d_idx, r_idx], kind="stable")
    return [(int(r_idx[i]), int(d_idx[i]), float(snr[d_idx[i], r_idx[i]])) for i in order]


def estimate_doa(snapshot: np.ndarray, fft_size: int = 256) -> float:
    """Azimuth from inter-channel phase of one detected cell.

    Assumes a uniform linear array at half-wavelength spacing.  Beamforms by
    zero-padded FFT over channels and refines the peak with parabolic
    interpolation; the result is arcsin-mapped into [-pi/2, pi/2].
    """
    snapshot = np.asarray(snapshot)
    if snapshot.ndim != 1 or snapshot.size < 2:
        raise ConfigError("DOA needs a 1-D snapshot across >= 2 channels")
    spec = np.abs(np.fft.fftshift(np.fft.fft(snapshot, n=fft_size)))
    peak = int(np.argmax(spec))
    delta = 0.0
    if 0 < peak < fft_size - 1:
        denom = spec[peak - 1] - 2 * spec[peak] + spec[peak + 1]
        if denom != 0:
            delta = 0.5 * (spec[peak - 1] - spec[peak + 1]) / denom
    # fft over exp(+j*pi*k*sin(theta)) peaks at normalized freq sin(theta)/2
    freq = (peak + delta - fft_size / 2) / fft_size
    return float(np.arcsin(np.clip(2 * freq, -1.0, 1.0)))


def cube_to_pointcloud(cube: AdcCube, cal: ChannelCalibration | None = None,
                       cfar_cfg: CfarConfig | None = None, *,
                       range_window: str = WINDOW_HANN,
                       doppler_window: str = WINDOW_HANN,
                       sensor_height: float = 0.0,
                       doa_fft_size: int = 256) -> list[RadarPoint]:
    """Full pipeline: calibrate, both FFTs, CFAR, DOA, physical conversion.

    A single linear array cannot measure elevation, so every point is emitted
    at z = ``sensor_height``.  Detections beyond the configured maximum range
    or velocity are discarded.
    """
    cfg = cube.config
    cfg.validate()
    if cal is not None:
        cube = calibrate_adc(cube, cal)
    cfar_cfg = cfar_cfg or CfarConfig()
    rd = doppler_fft(range_fft(cube, range_window), cfg, doppler_window)
    points = []
    for r_bin, d_bin, _snr in cfar_detect(rd, cfar_cfg):
        rng = r_bin * rd.range_bin_m
        vel = rd.velocity_of_bin(d_bin)
        if rng > cfg.max_range or abs(vel) > cfg.max_velocity:
            continue
        theta = estimate_doa(rd.spectra[:, d_bin, r_bin], doa_fft_size)
        points.append(RadarPoint(
            x=float(rng * np.sin(theta)), y=float(rng * np.cos(theta)),
            z=float(sensor_height), v=float(vel),
        ))
    return points


def synthesize_adc(targets, cfg: RadarConfig, noise_std: float = 0.0,
                   seed: int = 0) -> AdcCube:
    """Build a deterministic ADC cube from (range, azimuth, velocity, amplitude) targets.

    Each target contributes a complex exponential with beat frequency
    2*S*R/c in fast time, Doppler phase 4*pi*v*T_chirp/lambda per chirp, and
    steering phase pi*k*sin(azimuth) per channel.  Noise is circular complex
    Gaussian with total standard deviation ``noise_std`` per sample.
    """
    cfg.validate()
    shape = (cfg.n_rx_channels, cfg.n_chirps_per_frame, cfg.n_samples_per_chirp)
    samples = np.zeros(shape, dtype=complex)
    n = np.arange(cfg.n_samples_per_chirp)
    m = np.arange(cfg.n_chirps_per_frame)
    k = np.arange(cfg.n_rx_channels)
    for rng, azimuth, velocity, amplitude in targets:
        if rng < 0 or rng > cfg.max_range:
            raise DataError(f"target range {rng:.3g} m outside [0, {cfg.max_range}] m")
        if abs(velocity) > cfg.max_velocity:
            raise DataError(f"target velocity {velocity:.3g} m/s exceeds {cfg.max_velocity} m/s")
        beat = 2 * cfg.chirp_slope * rng / SPEED_OF_LIGHT
        fast = np.exp(2j * np.pi * beat * n / cfg.sample_rate)
        slow = np.exp(1j * 4 * np.pi * velocity * cfg.chirp_period / cfg.wavelength * m)
        steer = np.exp(1j * np.pi * np.sin(azimuth) * k)
        samples += amplitude * steer[:, None, None] * slow[None, :, None] * fast[None, None, :]
    if noise_std > 0:
        rng_gen = np.random.default_rng(seed)
        sigma = noise_std / np.sqrt(2)
        samples = samples + rng_gen.normal(0, sigma, shape) + 1j * rng_gen.normal(0, sigma, shape)
    return AdcCube(samples, cfg)


# --- binary cube format and point-cloud CSV -------------------------------

_HEADER_STRUCT = struct.Struct("<4sIII12d")


def save_adc_cube(path, cube: AdcCube) -> None:
    """Write the little-endian binary cube format (header + f32 re/im pairs)."""
    cfg = cube.config
    header = _HEADER_STRUCT.pack(
        ADC_MAGIC, cfg.n_rx_channels, cfg.n_chirps_per_frame, cfg.n_samples_per_chirp,
        *cfg.as_field_tuple(),
    )
    inter = np.empty(cube.samples.shape + (2,), dtype="<f4")
    inter[..., 0] = cube.samples.real
    inter[..., 1] = cube.samples.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(inter.tobytes())


def load_adc_cube(path) -> AdcCube:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER_STRUCT.size)
        if len(raw) < _HEADER_STRUCT.size:
            raise DataError(f"{path}: truncated header")
        fields = _HEADER_STRUCT.unpack(raw)
        if fields[0] != ADC_MAGIC:
            raise DataError(f"{path}: bad magic {fields[0]!r}")
        channels, chirps, samples = fields[1:4]
        cfg = RadarConfig.from_field_tuple(fields[4:])
        if (channels, chirps, samples) != (cfg.n_rx_channels, cfg.n_chirps_per_frame,
                                           cfg.n_samples_per_chirp):
            raise DataError(f"{path}: header counts disagree with config fields")
        data = np.frombuffer(fh.read(), dtype="<f4")
    expected = channels * chirps * samples * 2
    if data.size != expected:
        raise DataError(f"{path}: expected {expected} f32 values, got {data.size}")
    data = data.reshape(channels, chirps, samples, 2)
    cube = data[..., 0].astype(complex) + 1j * data[..., 1]
    return AdcCube(cube, cfg)


def format_float(value) -> str:
    """Shortest decimal string that round-trips through float()."""
    return repr(float(value))


def save_pointcloud_csv(path, frames: dict[int, list[RadarPoint]]) -> None:
    """Write frames of points as CSV with header frame,x,y,z,v."""
    with open(path, "w", newline="") as fh:
        fh.write("frame,x,y,z,v\n")
        for frame in sorted(frames):
            for p in frames[frame]:
                cols = [format_float(c) for c in (p.x, p.y, p.z, p.v)]
                fh.write(f"{frame}," + ",".join(cols) + "\n")


def load_pointcloud_csv(path) -> dict[int, list[RadarPoint]]:
    frames: dict[int, list[RadarPoint]] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "frame,x,y,z,v":
            raise DataError(f"{path}: unexpected point-cloud header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            frame_s, x, y, z, v = line.split(",")
            frames.setdefault(int(frame_s), []).append(
                RadarPoint(float(x), float(y), float(z), float(v))
            )
    return frames
