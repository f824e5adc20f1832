"""Raw trajectory -> fixed 256x9 normalized network input.

A raw signal is a timestamped 3D hand trajectory (~110 Hz). The pipeline
derives velocity and acceleration channels by adjacent differences, aligns
the dominant horizontal writing direction with +x, standardizes each
channel, and resamples everything to a fixed number of frames.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSignal, FormatError, SignalTooShort

FRAMES = 256
CHANNELS = 9
MIN_RAW_SAMPLES = 8

# Positional extent below this is treated as "no trajectory at all".
EXTENT_EPS = 1e-9
# Channels with std below this are zeroed instead of divided.
STD_EPS = 1e-9


@dataclass
class RawSignal:
    """Timestamped 3D position trajectory.

    t: (n,) seconds, strictly increasing.
    pos: (n, 3) positions.
    """

    t: np.ndarray
    pos: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.pos = np.asarray(self.pos, dtype=np.float64)
        if self.t.ndim != 1 or self.pos.shape != (self.t.shape[0], 3):
            raise FormatError(
                f"raw signal needs t (n,) and pos (n, 3), got {self.t.shape} / {self.pos.shape}"
            )
        if len(self.t) < MIN_RAW_SAMPLES:
            raise SignalTooShort(
                f"raw signal has {len(self.t)} samples, need >= {MIN_RAW_SAMPLES}"
            )
        if np.any(np.diff(self.t) <= 0):
            raise FormatError("raw signal timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)


def differentiate(raw: RawSignal) -> np.ndarray:
    """Expand positions to 9 channels: position, velocity, acceleration.

    Velocity is the difference of adjacent positions, acceleration the
    difference of adjacent velocities. Both are tail-padded with their
    final value so all channels share the position channel's length.
    """
    pos = raw.pos
    vel = np.empty_like(pos)
    vel[:-1] = np.diff(pos, axis=0)
    vel[-1] = vel[-2]
    acc = np.empty_like(pos)
    acc[:-1] = np.diff(vel, axis=0)
    acc[-1] = acc[-2]
    return np.concatenate([pos, vel, acc], axis=1)


def _principal_angle(xy: np.ndarray) -> float:
    # Major-axis angle of the 2D covariance, closed form (no eigensolver,
    # so the result is deterministic across LAPACK builds).
    sxx, syy = np.mean(xy[:, 0] ** 2), np.mean(xy[:, 1] ** 2)
    sxy = np.mean(xy[:, 0] * xy[:, 1])
    return 0.5 * np.arctan2(2.0 * sxy, sxx - syy)


def pose_normalize(signal: np.ndarray) -> np.ndarray:
    """Rotate the signal so the dominant horizontal direction is +x.

    Positions are centered, then a single proper rotation about the
    vertical (z) axis maps the first principal component of the
    horizontal position trace onto +x. The same rotation is applied to
    the velocity and acceleration channels. Sign ambiguity of the
    principal axis is resolved by making the correlation of the rotated
    x positions with time non-negative.
    """
    if signal.shape[1] != CHANNELS:
        raise FormatError(f"expected {CHANNELS} channels, got {signal.shape[1]}")
    pos = signal[:, 0:3]
    extent = pos.max(axis=0) - pos.min(axis=0)
    if np.max(extent) < EXTENT_EPS:
        raise DegenerateSignal("positional extent below threshold in every axis")

    centered = pos - pos.mean(axis=0)
    xy = centered[:, 0:2]
    if np.max(np.abs(xy)) < EXTENT_EPS:
        # Purely vertical trajectory: every rotation about z fixes it.
        u = np.array([1.0, 0.0])
    else:
        theta = _principal_angle(xy)
        u = np.array([np.cos(theta), np.sin(theta)])
        # Time tie-break: writing should progress toward +x.
        proj = xy @ u
        n = len(proj)
        time_idx = np.arange(n) - (n - 1) / 2.0
        if float(proj @ time_idx) < 0.0:
            u = -u

    rot = np.array(
        [
            [u[0], u[1], 0.0],
            [-u[1], u[0], 0.0],
            [0.0, 0.0, 1.0],
        ]
    )
    out = np.empty_like(signal)
    out[:, 0:3] = centered @ rot.T
    out[:, 3:6] = signal[:, 3:6] @ rot.T
    out[:, 6:9] = signal[:, 6:9] @ rot.T
    return out


def amplitude_normalize(signal: np.ndarray) -> np.ndarray:
    """Standardize each channel to zero mean and unit population std.

    Channels with std below STD_EPS are degenerate and set to all-zero
    instead of dividing by noise.
    """
    mean = signal.mean(axis=0)
    std = signal.std(axis=0)  # population std: independent of length conventions
    out = signal - mean
    degenerate = std < STD_EPS
    safe = np.where(degenerate, 1.0, std)
    out /= safe
    out[:, degenerate] = 0.0
    return out


def resample(signal: np.ndarray, target_len: int = FRAMES) -> np.ndarray:
    """Linearly resample every channel onto a uniform grid of target_len."""
    n = signal.shape[0]
    if n < 2:
        raise SignalTooShort(f"cannot resample a length-{n} signal")
    if n == target_len:
        return signal.copy()
    src = np.linspace(0.0, 1.0, n)
    dst = np.linspace(0.0, 1.0, target_len)
    out = np.empty((target_len, signal.shape[1]), dtype=signal.dtype)
    for c in range(signal.shape[1]):
        out[:, c] = np.interp(dst, src, signal[:, c])
    # np.interp can nudge the endpoints through division; pin them.
    out[0] = signal[0]
    out[-1] = signal[-1]
    return out


def preprocess(raw: RawSignal, frames: int = FRAMES) -> np.ndarray:
    """Full pipeline: differentiate, pose, amplitude, resample.

    Resampling is a weighted average of neighbours and therefore drifts
    channel statistics slightly, so amplitude normalization is applied
    once more at the end to restore exact zero-mean / unit-std output.
    """
    sig = differentiate(raw)
    sig = pose_normalize(sig)
    sig = amplitude_normalize(sig)
    sig = resample(sig, frames)
    return amplitude_normalize(sig)


def validate_processed(data: np.ndarray, frames: int = FRAMES, rtol: float = 1e-6) -> None:
    """Raise FormatError unless data satisfies the processed-signal contract."""
    if data.shape != (frames, CHANNELS):
        raise FormatError(f"processed signal must be {frames}x{CHANNELS}, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise FormatError("processed signal contains non-finite values")
    mean = data.mean(axis=0)
    std = data.std(axis=0)
    for c in range(CHANNELS):
        if np.all(data[:, c] == 0.0):
            continue  # degenerate channel, zeroed by contract
        if abs(mean[c]) > rtol or abs(std[c] - 1.0) > rtol:
            raise FormatError(
                f"channel {c} not standardized: mean={mean[c]:.3g} std={std[c]:.6g}"
            )


def read_raw_signal(path) -> RawSignal:
    """Parse the plain-text signal format: `t x y z` per line, `#` comments."""
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: no samples")
    arr = np.asarray(rows, dtype=np.float64)
    return RawSignal(t=arr[:, 0], pos=arr[:, 1:4])


def write_raw_signal(path, raw: RawSignal) -> None:
    with open(path, "w") as fh:
        for t, (x, y, z) in zip(raw.t, raw.pos):
            fh.write(f"{t:.6f} {x:.9g} {y:.9g} {z:.9g}\n")


def read_processed_signal(path, frames: int = FRAMES) -> np.ndarray:
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != CHANNELS:
                raise FormatError(
                    f"{path}:{lineno}: expected {CHANNELS} fields, got {len(fields)}"
                )
            rows.append([float(v) for v in fields])
    arr = np.asarray(rows, dtype=np.float64)
    if arr.shape != (frames, CHANNELS):
        raise FormatError(f"{path}: expected {frames} lines, got {arr.shape[0]}")
    return arr


def write_processed_signal(path, data: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in data:
            fh.write(" ".join(f"{v:.9g}" for v in row) + "\n")
