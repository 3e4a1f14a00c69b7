"""Signal containers, zero-phase filtering, and the sliding-window schedule.

Everything downstream (decomposition, feature extraction, evaluation) runs on
the types defined here. All operations are pure and deterministic; containers
are frozen and their arrays are marked read-only, so instances can be shared
freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import ConfigError, DataError, NumericalError

__all__ = [
    "SignalMatrix",
    "ForceTrace",
    "WindowSpec",
    "band_filter",
    "powerline_notch",
    "sliding_windows",
    "interior_windows",
    "align_force",
]


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SignalMatrix:
    """A channels x samples recording with its sampling rate and labels.

    data: shape [n_channels, n_samples], finite float64.
    fs: sampling rate in Hz.
    channel_labels: one 10-20 style name per row, unique.
    t0: start-time offset in seconds (timestamps are t0 + i / fs).
    """

    data: np.ndarray
    fs: float
    channel_labels: tuple[str, ...]
    t0: float = 0.0

    def __post_init__(self):
        data = _readonly(np.atleast_2d(self.data))
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        if data.ndim != 2 or data.shape[1] < 1:
            raise DataError(f"signal data must be 2-D with >= 1 sample, got shape {data.shape}")
        if len(self.channel_labels) != data.shape[0]:
            raise DataError(
                f"{len(self.channel_labels)} labels for {data.shape[0]} channels"
            )
        if len(set(self.channel_labels)) != len(self.channel_labels):
            raise DataError("channel labels must be unique")
        if not self.fs > 0:
            raise DataError(f"sampling rate must be positive, got {self.fs}")
        if not np.all(np.isfinite(data)):
            raise DataError("signal data contains NaN or Inf")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.fs

    def channel_index(self, label: str) -> int:
        try:
            return self.channel_labels.index(label)
        except ValueError:
            raise DataError(f"no channel named {label!r}; have {list(self.channel_labels)}")

    def pick(self, labels) -> "SignalMatrix":
        """Return a copy restricted to the given channel labels, in the given order."""
        idx = [self.channel_index(lb) for lb in labels]
        return SignalMatrix(self.data[idx], self.fs, tuple(labels), self.t0)

    def with_data(self, data: np.ndarray) -> "SignalMatrix":
        return SignalMatrix(data, self.fs, self.channel_labels, self.t0)


@dataclass(frozen=True)
class ForceTrace:
    """Total grasp force in newtons, sample-aligned to a SignalMatrix.

    Sensor noise may dip below zero; clamping to >= 0 is opt-in.
    """

    values: np.ndarray
    fs: float
    clamp_negative: bool = False

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if self.clamp_negative:
            values = np.maximum(values, 0.0)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if values.size < 1:
            raise DataError("force trace is empty")
        if not self.fs > 0:
            raise DataError(f"sampling rate must be positive, got {self.fs}")
        if not np.all(np.isfinite(values)):
            raise DataError("force trace contains NaN or Inf")

    @property
    def n_samples(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window schedule: width and step in seconds (default 100 ms / 50 ms)."""

    width_s: float = 0.1
    step_s: float = 0.05

    def __post_init__(self):
        if not (0 < self.step_s <= self.width_s):
            raise ConfigError(
                f"need 0 < step_s <= width_s, got step={self.step_s}, width={self.width_s}"
            )

    def width_samples(self, fs: float) -> int:
        return int(round(self.width_s * fs))

    def step_samples(self, fs: float) -> int:
        return int(round(self.step_s * fs))


def _check_sos_stable(sos: np.ndarray, context: str) -> None:
    # All poles strictly inside the unit circle, section by section.
    for section in np.atleast_2d(sos):
        poles = np.roots(section[3:])
        if poles.size and np.max(np.abs(poles)) >= 1.0:
            raise NumericalError(
                f"unstable filter design ({context}): pole magnitude "
                f"{np.max(np.abs(poles)):.6f} >= 1"
            )


def band_filter(sig: SignalMatrix, low_hz: float, high_hz: float, order: int = 4) -> SignalMatrix:
    """Zero-phase Butterworth band-pass (forward-backward, no group delay).

    low_hz == 0 degenerates to a low-pass. Passband gain stays within
    [0.9, 1.0]; one octave outside the band edges the gain is <= 0.1.
    """
    nyq = sig.fs / 2.0
    if not (0 <= low_hz < high_hz < nyq):
        raise ConfigError(
            f"band edges must satisfy 0 <= low < high < fs/2; got "
            f"low={low_hz}, high={high_hz}, fs/2={nyq}"
        )
    if order < 1:
        raise ConfigError(f"filter order must be >= 1, got {order}")
    if low_hz == 0.0:
        sos = sps.butter(order, high_hz / nyq, btype="lowpass", output="sos")
    else:
        sos = sps.butter(order, [low_hz / nyq, high_hz / nyq], btype="bandpass", output="sos")
    _check_sos_stable(sos, f"band [{low_hz}, {high_hz}] Hz at fs={sig.fs}")
    out = sps.sosfiltfilt(sos, sig.data, axis=1)
    return sig.with_data(out)


def powerline_notch(sig: SignalMatrix, line_hz: float = 50.0, q: float = 30.0) -> SignalMatrix:
    """Zero-phase second-order IIR notch at the mains frequency.

    Gain <= 0.05 at line_hz and >= 0.9 at line_hz +- 5 Hz (q=30).
    """
    nyq = sig.fs / 2.0
    if not (0 < line_hz < nyq):
        raise ConfigError(f"notch frequency must lie in (0, fs/2); got {line_hz} at fs={sig.fs}")
    if not q > 0:
        raise ConfigError(f"notch quality factor must be positive, got {q}")
    b, a = sps.iirnotch(line_hz / nyq, q)
    out = sps.filtfilt(b, a, sig.data, axis=1)
    return sig.with_data(out)


def sliding_windows(n_samples: int, fs: float, spec: WindowSpec) -> list[tuple[int, int]]:
    """Half-open [start, start + w) index pairs; trailing partial window dropped.

    w = round(width_s * fs), stride = round(step_s * fs), and the count is
    floor((n_samples - w) / stride) + 1.
    """
    w = spec.width_samples(fs)
    s = spec.step_samples(fs)
    if w < 1 or s < 1:
        raise ConfigError(
            f"window spec {spec} collapses below one sample at fs={fs}"
        )
    if n_samples < w:
        raise DataError(
            f"signal of {n_samples} samples is shorter than one {w}-sample window"
        )
    count = (n_samples - w) // s + 1
    return [(i * s, i * s + w) for i in range(count)]


def interior_windows(
    windows: list[tuple[int, int]], n_samples: int, fs: float, edge_s: float
) -> list[tuple[int, int]]:
    """Drop windows overlapping the first/last edge_s seconds (filter transients)."""
    if edge_s <= 0:
        return list(windows)
    margin = int(round(edge_s * fs))
    kept = [(a, b) for a, b in windows if a >= margin and b <= n_samples - margin]
    if not kept:
        raise DataError(
            f"edge exclusion of {edge_s} s leaves no windows in a "
            f"{n_samples / fs:.2f} s signal"
        )
    return kept


def align_force(
    force: ForceTrace, windows: list[tuple[int, int]], aggregate: str = "mean"
) -> np.ndarray:
    """Per-window force target: mean over the window (or its last sample)."""
    if aggregate not in ("mean", "last"):
        raise ConfigError(f"unknown aggregation {aggregate!r}; use 'mean' or 'last'")
    if not windows:
        raise DataError("empty window list")
    end_max = max(b for _, b in windows)
    if end_max > force.n_samples:
        raise DataError(
            f"force trace has {force.n_samples} samples but windows reach {end_max}"
        )
    if aggregate == "mean":
        return np.array([force.values[a:b].mean() for a, b in windows])
    return np.array([force.values[b - 1] for a, b in windows])
