"""Per-window feature extraction: ERP statistics, band power, and ERDS.

Three feature sets are emitted per sliding window and channel:

* erp  - six time-domain statistics (mean, mean absolute value, trapezoidal
         AUC, skewness, kurtosis, variance), optionally PCA-reduced as a block;
* psd  - band power of a Hann-tapered periodogram, integrated over the mu
         (9-11 Hz) and theta (4-8 Hz) bands;
* erds - percent band-power change against a low-force baseline,
         100 * (active - baseline) / baseline.

With exact 100 ms windows the raw periodogram bin spacing is 10 Hz, too
coarse for the theta band, so window FFTs are zero-padded until the bin
spacing is at most df_target_hz (default 2 Hz). Padding interpolates the
spectrum and leaves the Parseval identity intact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import get_window

from .decomposition import PcaModel, pca_fit, pca_transform
from .errors import ConfigError, DataError
from .signal_core import ForceTrace, SignalMatrix, WindowSpec, align_force, sliding_windows

__all__ = [
    "BandDef",
    "MU_BAND",
    "THETA_BAND",
    "DEFAULT_BANDS",
    "Spectrum",
    "Baseline",
    "FeatureTable",
    "ERP_STAT_NAMES",
    "erp_stats",
    "psd",
    "band_power",
    "estimate_baseline",
    "baseline_from_powers",
    "erds",
    "window_band_powers",
    "window_erp_stats",
    "build_feature_table",
    "window_sample_table",
    "reduce_erp_block",
    "feature_set_of_name",
]


@dataclass(frozen=True)
class BandDef:
    name: str
    lo_hz: float
    hi_hz: float

    def __post_init__(self):
        if not (0 < self.lo_hz < self.hi_hz):
            raise ConfigError(f"need 0 < lo < hi, got [{self.lo_hz}, {self.hi_hz}]")


MU_BAND = BandDef("mu", 9.0, 11.0)
THETA_BAND = BandDef("theta", 4.0, 8.0)
DEFAULT_BANDS = (MU_BAND, THETA_BAND)

ERP_STAT_NAMES = ("mean", "mean_abs", "auc", "skew", "kurt", "var")


@dataclass(frozen=True)
class Spectrum:
    """One-sided power spectral density: power[i] at freqs[i], bin width df."""

    freqs: np.ndarray
    power: np.ndarray
    df: float


@dataclass(frozen=True)
class Baseline:
    """Median rest-state band power per (channel, band).

    Estimated from windows whose mean force is below force_threshold_n;
    per-subject, fitted once and reused across splits.
    """

    values: dict
    n_windows_used: int
    force_threshold_n: float

    def __post_init__(self):
        if self.n_windows_used < 1:
            raise DataError("baseline estimated from zero windows")
        for key, v in self.values.items():
            if not (np.isfinite(v) and v > 0):
                raise DataError(f"non-positive baseline power for {key}: {v}")

    def get(self, channel: str, band: str) -> float:
        try:
            return self.values[(channel, band)]
        except KeyError:
            raise DataError(f"no baseline for channel {channel!r}, band {band!r}")


def erp_stats(window: np.ndarray, fs: float) -> np.ndarray:
    """Six time-domain statistics of one window.

    AUC is the trapezoidal integral against time in seconds; skewness and
    kurtosis are the standardized 3rd/4th central moments (kurtosis
    non-excess, so a normal sample gives ~3); both are 0 by convention on a
    zero-variance window. Variance is the population (1/n) variance.
    """
    x = np.asarray(window, dtype=np.float64).ravel()
    if x.size < 4:
        raise DataError(f"window of {x.size} samples too short for kurtosis (need >= 4)")
    mean = x.mean()
    d = x - mean
    m2 = np.mean(d**2)
    if m2 > 0:
        skew = np.mean(d**3) / m2**1.5
        kurt = np.mean(d**4) / m2**2
    else:
        skew = 0.0
        kurt = 0.0
    auc = np.trapz(x, dx=1.0 / fs)
    return np.array([mean, np.mean(np.abs(x)), auc, skew, kurt, m2])


def psd(window: np.ndarray, fs: float, nfft: int | None = None) -> Spectrum:
    """Hann-tapered one-sided periodogram with taper-power correction.

    sum(power) * df equals the mean square of the tapered window divided by
    the mean square of the taper (Parseval). nfft > len(window) zero-pads,
    interpolating the spectrum onto a finer grid without breaking Parseval.
    """
    x = np.asarray(window, dtype=np.float64).ravel()
    n = x.size
    if n < 8:
        raise DataError(f"window of {n} samples too short for a PSD (need >= 8)")
    if nfft is None:
        nfft = n
    if nfft < n:
        raise ConfigError(f"nfft={nfft} smaller than window length {n}")
    taper = get_window("hann", n)
    xt = x * taper
    X = np.fft.rfft(xt, n=nfft)
    scale = 1.0 / (fs * np.sum(taper**2))
    power = (np.abs(X) ** 2) * scale
    # One-sided: double everything except DC and (for even nfft) Nyquist.
    if nfft % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    freqs = np.fft.rfftfreq(nfft, 1.0 / fs)
    return Spectrum(freqs=freqs, power=power, df=fs / nfft)


def band_power(spectrum: Spectrum, band: BandDef) -> float:
    """Rectangle-rule integral over bins whose centre lies inside the band."""
    if band.lo_hz > spectrum.freqs[-1]:
        raise ConfigError(
            f"band {band.name} [{band.lo_hz}, {band.hi_hz}] Hz lies above the "
            f"spectrum range (max {spectrum.freqs[-1]:.3f} Hz)"
        )
    mask = (spectrum.freqs >= band.lo_hz) & (spectrum.freqs <= band.hi_hz)
    if not np.any(mask):
        raise ConfigError(
            f"no spectral bins inside band {band.name} [{band.lo_hz}, {band.hi_hz}] Hz "
            f"at bin spacing {spectrum.df:.3f} Hz; decrease df_target_hz / pad the FFT"
        )
    return float(spectrum.power[mask].sum() * spectrum.df)


def erds(active_power: float, baseline_power: float) -> float:
    """Percent band-power change against baseline: 100 * (active - base) / base."""
    if not baseline_power > 0:
        raise DataError(f"baseline power must be positive, got {baseline_power}")
    return 100.0 * (active_power - baseline_power) / baseline_power


def _feature_nfft(width_samples: int, fs: float, df_target_hz: float) -> int:
    if df_target_hz <= 0:
        raise ConfigError(f"df_target_hz must be positive, got {df_target_hz}")
    return max(width_samples, int(np.ceil(fs / df_target_hz)))


def window_band_powers(
    sig: SignalMatrix,
    windows: list[tuple[int, int]],
    bands=DEFAULT_BANDS,
    df_target_hz: float = 2.0,
) -> np.ndarray:
    """Band power per window, channel-major: [n_windows, n_channels * n_bands]."""
    if not windows:
        raise DataError("empty window list")
    nfft = _feature_nfft(windows[0][1] - windows[0][0], sig.fs, df_target_hz)
    out = np.empty((len(windows), sig.n_channels * len(bands)))
    for wi, (a, b) in enumerate(windows):
        for ci in range(sig.n_channels):
            spec = psd(sig.data[ci, a:b], sig.fs, nfft=nfft)
            for bi, band in enumerate(bands):
                out[wi, ci * len(bands) + bi] = band_power(spec, band)
    return out


def window_erp_stats(sig: SignalMatrix, windows: list[tuple[int, int]]) -> np.ndarray:
    """ERP statistics per window, channel-major: [n_windows, n_channels * 6]."""
    if not windows:
        raise DataError("empty window list")
    k = len(ERP_STAT_NAMES)
    out = np.empty((len(windows), sig.n_channels * k))
    for wi, (a, b) in enumerate(windows):
        for ci in range(sig.n_channels):
            out[wi, ci * k : (ci + 1) * k] = erp_stats(sig.data[ci, a:b], sig.fs)
    return out


def baseline_from_powers(
    powers: np.ndarray,
    window_force: np.ndarray,
    channel_labels,
    bands=DEFAULT_BANDS,
    threshold_n: float = 0.5,
) -> Baseline:
    """Median band power over windows whose force target is below the threshold."""
    window_force = np.asarray(window_force, dtype=np.float64)
    mask = window_force < threshold_n
    n_used = int(mask.sum())
    if n_used == 0:
        raise DataError(
            f"no rest windows: every window force >= {threshold_n} N; "
            "cannot estimate an ERDS baseline"
        )
    med = np.median(powers[mask], axis=0)
    values = {}
    for ci, ch in enumerate(channel_labels):
        for bi, band in enumerate(bands):
            values[(ch, band.name)] = float(med[ci * len(bands) + bi])
    return Baseline(values=values, n_windows_used=n_used, force_threshold_n=threshold_n)


def estimate_baseline(
    sig: SignalMatrix,
    force: ForceTrace,
    spec: WindowSpec,
    bands=DEFAULT_BANDS,
    threshold_n: float = 0.5,
    df_target_hz: float = 2.0,
) -> Baseline:
    """Windowed rest-state baseline of one recording (see baseline_from_powers)."""
    windows = sliding_windows(sig.n_samples, sig.fs, spec)
    targets = align_force(force, windows)
    powers = window_band_powers(sig, windows, bands=bands, df_target_hz=df_target_hz)
    return baseline_from_powers(powers, targets, sig.channel_labels, bands, threshold_n)


# ---------------------------------------------------------------------------
# Feature tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureTable:
    """Windows x features matrix with names, timestamps, and force targets."""

    values: np.ndarray
    feature_names: tuple[str, ...]
    window_times: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        times = np.asarray(self.window_times, dtype=np.float64).ravel()
        target = np.asarray(self.target, dtype=np.float64).ravel()
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "window_times", times)
        object.__setattr__(self, "target", target)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if values.shape[1] != len(self.feature_names):
            raise DataError(
                f"{values.shape[1]} columns for {len(self.feature_names)} names"
            )
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("feature names must be unique")
        if not (values.shape[0] == times.size == target.size):
            raise DataError(
                f"row mismatch: {values.shape[0]} windows, {times.size} times, "
                f"{target.size} targets"
            )
        if not np.all(np.isfinite(values)):
            raise DataError("feature table contains NaN or Inf")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(target))):
            raise DataError("window times or targets contain NaN or Inf")

    @property
    def n_windows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def select_columns(self, names) -> "FeatureTable":
        names = tuple(names)
        index = {n: i for i, n in enumerate(self.feature_names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise DataError(f"unknown feature columns: {missing}")
        idx = [index[n] for n in names]
        return FeatureTable(self.values[:, idx], names, self.window_times, self.target)

    def take(self, rows) -> "FeatureTable":
        rows = np.asarray(rows, dtype=int)
        return FeatureTable(
            self.values[rows], self.feature_names,
            self.window_times[rows], self.target[rows],
        )

    @staticmethod
    def concat(tables) -> "FeatureTable":
        tables = list(tables)
        if not tables:
            raise DataError("nothing to concatenate")
        names = tables[0].feature_names
        for t in tables[1:]:
            if t.feature_names != names:
                raise DataError("cannot concatenate tables with different columns")
        return FeatureTable(
            np.vstack([t.values for t in tables]),
            names,
            np.concatenate([t.window_times for t in tables]),
            np.concatenate([t.target for t in tables]),
        )


def feature_set_of_name(name: str) -> str:
    """Classify a column name into its feature set (erp, psd, or erds)."""
    if name.endswith("_psd"):
        return "psd"
    if name.endswith("_erds"):
        return "erds"
    return "erp"


def _psd_names(channel_labels, bands) -> list[str]:
    return [f"{ch}_{b.name}_psd" for ch in channel_labels for b in bands]


def _erds_names(channel_labels, bands) -> list[str]:
    return [f"{ch}_{b.name}_erds" for ch in channel_labels for b in bands]


def _erp_names(channel_labels) -> list[str]:
    return [f"{ch}_{st}" for ch in channel_labels for st in ERP_STAT_NAMES]


def reduce_erp_block(
    table: FeatureTable,
    pca_model: PcaModel | None = None,
    pca_target: float = 0.95,
) -> tuple[FeatureTable, PcaModel | None]:
    """Replace the raw ERP columns with their PCA scores (erp_pc1, erp_pc2, ...).

    Fits a new PcaModel when none is given; pass the model fitted on the
    training split to transform validation/test tables consistently. The six
    time-domain statistics carry different units, so the block is reduced
    with correlation PCA (columns standardized first). Tables without ERP
    columns pass through unchanged.
    """
    erp_cols = [n for n in table.feature_names if feature_set_of_name(n) == "erp"]
    if not erp_cols:
        return table, pca_model
    other_cols = [n for n in table.feature_names if feature_set_of_name(n) != "erp"]
    erp_values = table.select_columns(erp_cols).values
    if pca_model is None:
        pca_model = pca_fit(erp_values, variance_target=pca_target, standardize=True)
    scores = pca_transform(pca_model, erp_values)
    names = [f"erp_pc{i + 1}" for i in range(scores.shape[1])]
    blocks = [scores]
    if other_cols:
        blocks.append(table.select_columns(other_cols).values)
        names += list(other_cols)
    return (
        FeatureTable(np.hstack(blocks), names, table.window_times, table.target),
        pca_model,
    )


def build_feature_table(
    sig: SignalMatrix,
    force: ForceTrace,
    spec: WindowSpec,
    set_kind: str = "all",
    baseline: Baseline | None = None,
    pca_target: float = 0.95,
    bands=DEFAULT_BANDS,
    df_target_hz: float = 2.0,
    windows: list[tuple[int, int]] | None = None,
    reduce_erp: bool = True,
    pca_model: PcaModel | None = None,
) -> FeatureTable:
    """Extract one feature set (or all three) over the sliding windows.

    set_kind is one of erp/psd/erds/all. An ERDS table needs a Baseline.
    Column order is deterministic: ERP block (PCA-reduced unless
    reduce_erp=False), then PSD, then ERDS, each channel-major.
    """
    if set_kind not in ("erp", "psd", "erds", "all"):
        raise ConfigError(f"unknown feature set {set_kind!r}; use erp/psd/erds/all")
    wants_erds = set_kind in ("erds", "all")
    if wants_erds and baseline is None:
        raise ConfigError("an ERDS feature table requires a fitted Baseline")
    if windows is None:
        windows = sliding_windows(sig.n_samples, sig.fs, spec)
    if not windows:
        raise DataError("empty window list")
    targets = align_force(force, windows)
    times = sig.t0 + np.array([a for a, _ in windows]) / sig.fs

    blocks: list[np.ndarray] = []
    names: list[str] = []
    if set_kind in ("erp", "all"):
        blocks.append(window_erp_stats(sig, windows))
        names += _erp_names(sig.channel_labels)
    if set_kind in ("psd", "erds", "all"):
        powers = window_band_powers(sig, windows, bands=bands, df_target_hz=df_target_hz)
        if set_kind in ("psd", "all"):
            blocks.append(powers)
            names += _psd_names(sig.channel_labels, bands)
        if wants_erds:
            base = np.array(
                [baseline.get(ch, b.name) for ch in sig.channel_labels for b in bands]
            )
            blocks.append(100.0 * (powers - base) / base)
            names += _erds_names(sig.channel_labels, bands)

    table = FeatureTable(np.hstack(blocks), names, times, targets)
    if set_kind in ("erp", "all") and reduce_erp:
        table, _ = reduce_erp_block(table, pca_model=pca_model, pca_target=pca_target)
    return table


def window_sample_table(
    sig: SignalMatrix,
    force: ForceTrace,
    spec: WindowSpec,
    windows: list[tuple[int, int]] | None = None,
) -> FeatureTable:
    """Raw window samples as features (the no-feature-extraction ablation input)."""
    if windows is None:
        windows = sliding_windows(sig.n_samples, sig.fs, spec)
    if not windows:
        raise DataError("empty window list")
    targets = align_force(force, windows)
    times = sig.t0 + np.array([a for a, _ in windows]) / sig.fs
    w = windows[0][1] - windows[0][0]
    names = [f"{ch}_s{i}" for ch in sig.channel_labels for i in range(w)]
    values = np.empty((len(windows), sig.n_channels * w))
    for wi, (a, b) in enumerate(windows):
        values[wi] = sig.data[:, a:b].reshape(-1)
    return FeatureTable(values, names, times, targets)
