"""Component labelling and force-covariance channel/component selection.

The component labeler is a transparent rule-based scorer over spectral and
topographic evidence (the learned labeler it stands in for is external);
anything implementing label_components' signature can be plugged in instead.

"Covariance with grasp force" is computed between windowed mu+theta
band-power envelopes and the per-window force target: raw-sample covariance
between a zero-mean oscillation and a slow force trace is near zero by
construction, while the band-power envelope carries the modulation. Envelopes
are z-scored before the covariance so rankings are invariant to per-channel
positive scaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .decomposition import Decomposition, reconstruct
from .errors import ConfigError, DataError
from .features import DEFAULT_BANDS, psd, window_band_powers
from .signal_core import (
    ForceTrace,
    SignalMatrix,
    WindowSpec,
    align_force,
    sliding_windows,
)

__all__ = [
    "COMPONENT_KINDS",
    "FRONTAL_LABELS",
    "PAPER_CHANNELS",
    "ComponentLabel",
    "LabelerConfig",
    "SelectionReport",
    "label_components",
    "remove_artifacts",
    "rank_channels_by_force_cov",
    "rank_components_by_force_cov",
]

COMPONENT_KINDS = ("brain", "line_noise", "eye", "muscle", "heart", "other")
FRONTAL_LABELS = ("Fp1", "Fp2", "F7", "F8")

# Default premotor-parietal channel list, in fixed selection order.
PAPER_CHANNELS = ("C3", "CP1", "CP2", "Cz", "FC2", "FC6", "Fp1", "P3", "C4")


@dataclass(frozen=True)
class ComponentLabel:
    kind: str
    confidence: float
    evidence: dict

    def __post_init__(self):
        if self.kind not in COMPONENT_KINDS:
            raise ConfigError(f"unknown component kind {self.kind!r}")
        if not (0.0 <= self.confidence <= 1.0):
            raise DataError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class LabelerConfig:
    """Thresholds of the rule-based component labeler (all overridable)."""

    mains_hz: float = 50.0
    line_band_hz: float = 1.0          # +- around mains
    line_fraction: float = 0.6
    delta_band: tuple[float, float] = (1.0, 4.0)
    eye_delta_fraction: float = 0.6
    eye_frontal_fraction: float = 0.5
    muscle_cutoff_hz: float = 30.0
    muscle_fraction: float = 0.5
    heart_period_s: tuple[float, float] = (0.6, 1.2)
    heart_prominence: float = 0.3


def _power_fraction(spec, lo_hz, hi_hz) -> float:
    total = float(spec.power.sum() * spec.df)
    if total <= 0:
        return 0.0
    mask = (spec.freqs >= lo_hz) & (spec.freqs <= hi_hz)
    return float(spec.power[mask].sum() * spec.df) / total


def _first_autocorr_peak(source: np.ndarray, fs: float, max_lag_s: float = 2.0):
    """Lag (s) and prominence of the first significant autocorrelation peak."""
    x = source - source.mean()
    n = x.size
    max_lag = min(int(max_lag_s * fs), n - 1)
    denom = float(np.dot(x, x))
    if denom <= 0:
        return None, 0.0
    # FFT autocorrelation, normalized to r(0) = 1.
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    X = np.fft.rfft(x, nfft)
    r = np.fft.irfft(np.abs(X) ** 2, nfft)[: max_lag + 1] / denom
    peaks, props = find_peaks(r[1:], prominence=1e-3)
    if peaks.size == 0:
        return None, 0.0
    lag = (peaks[0] + 1) / fs
    return float(lag), float(props["prominences"][0])


def label_components(
    dec: Decomposition,
    fs: float | None = None,
    channel_labels=None,
    cfg: LabelerConfig = LabelerConfig(),
) -> list[ComponentLabel]:
    """Label every component as brain / line_noise / eye / muscle / heart.

    Rules, applied in order:
      line_noise: >= 60% of source power within +-1 Hz of mains;
      eye:        delta (1-4 Hz) power fraction >= 0.6 and >= 50% of the
                  absolute mixing mass on frontal channels;
      muscle:     power fraction above 30 Hz >= 0.5;
      heart:      first autocorrelation peak in 0.6-1.2 s with prominence
                  >= 0.3 (first, so coherent oscillators with shorter
                  periods are not mistaken for cardiac activity);
      brain:      otherwise.
    Confidence is the deciding score (for eye, the smaller of its two; for
    brain, one minus the strongest competing score).
    """
    fs = dec.fs if fs is None else fs
    channel_labels = dec.channel_labels if channel_labels is None else tuple(channel_labels)
    frontal_idx = [i for i, lb in enumerate(channel_labels) if lb in FRONTAL_LABELS]

    labels = []
    for j in range(dec.n_components):
        source = dec.sources[j]
        spec = psd(source, fs)
        line_score = _power_fraction(
            spec, cfg.mains_hz - cfg.line_band_hz, cfg.mains_hz + cfg.line_band_hz
        )
        delta_score = _power_fraction(spec, *cfg.delta_band)
        hf_score = _power_fraction(spec, cfg.muscle_cutoff_hz, fs / 2.0)
        mix_abs = np.abs(dec.mixing[:, j])
        mix_total = mix_abs.sum()
        frontal_score = float(mix_abs[frontal_idx].sum() / mix_total) if mix_total > 0 else 0.0
        lag, prominence = _first_autocorr_peak(source, fs)
        periodicity = min(prominence, 1.0) if (
            lag is not None and cfg.heart_period_s[0] <= lag <= cfg.heart_period_s[1]
        ) else 0.0

        evidence = {
            "line_power_ratio": line_score,
            "delta_power_fraction": delta_score,
            "frontal_mixing_fraction": frontal_score,
            "high_freq_fraction": hf_score,
            "periodicity_score": periodicity,
        }
        eye_score = min(delta_score, frontal_score)
        if line_score >= cfg.line_fraction:
            kind, conf = "line_noise", line_score
        elif delta_score >= cfg.eye_delta_fraction and frontal_score >= cfg.eye_frontal_fraction:
            kind, conf = "eye", eye_score
        elif hf_score >= cfg.muscle_fraction:
            kind, conf = "muscle", hf_score
        elif periodicity >= cfg.heart_prominence:
            kind, conf = "heart", periodicity
        else:
            kind = "brain"
            conf = 1.0 - max(line_score, eye_score, hf_score, periodicity)
        labels.append(ComponentLabel(kind, float(np.clip(conf, 0.0, 1.0)), evidence))
    return labels


def remove_artifacts(dec: Decomposition, labels: list[ComponentLabel]) -> SignalMatrix:
    """Reconstruct keeping only the brain-labelled components."""
    if len(labels) != dec.n_components:
        raise DataError(
            f"{len(labels)} labels for {dec.n_components} components"
        )
    keep = [i for i, lb in enumerate(labels) if lb.kind == "brain"]
    if not keep:
        counts = {}
        for lb in labels:
            counts[lb.kind] = counts.get(lb.kind, 0) + 1
        raise DataError(
            f"every component labelled non-brain ({counts}); refusing to "
            "reconstruct an empty signal"
        )
    return reconstruct(dec, keep)


@dataclass(frozen=True)
class SelectionReport:
    """Outcome of a channel or component selection pass."""

    channel_scores: dict = field(default_factory=dict)
    component_scores: dict = field(default_factory=dict)
    chosen_channels: tuple[str, ...] = ()
    chosen_components: tuple[int, ...] = ()
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.chosen_channels or self.chosen_components):
            raise DataError("selection chose nothing")
        for scores in (self.channel_scores, self.component_scores):
            bad = {k: v for k, v in scores.items() if not np.isfinite(v)}
            if bad:
                raise DataError(f"non-finite selection scores: {bad}")

    def to_dict(self) -> dict:
        return {
            "channel_scores": {str(k): float(v) for k, v in self.channel_scores.items()},
            "component_scores": {str(k): float(v) for k, v in self.component_scores.items()},
            "chosen_channels": list(self.chosen_channels),
            "chosen_components": [int(i) for i in self.chosen_components],
            "params": self.params,
        }


def _envelope_force_scores(
    data: np.ndarray,
    fs: float,
    force: ForceTrace,
    spec: WindowSpec,
    bands,
    df_target_hz: float,
    windows=None,
) -> np.ndarray:
    """|cov(z-scored mu+theta band-power envelope, window force)| per row of data."""
    n_rows, n_samples = data.shape
    if windows is None:
        windows = sliding_windows(n_samples, fs, spec)
    targets = align_force(force, windows)
    carrier = SignalMatrix(data, fs, tuple(f"row{i}" for i in range(n_rows)))
    powers = window_band_powers(carrier, windows, bands=bands, df_target_hz=df_target_hz)
    # Sum the band powers per row -> one envelope per channel/component.
    env = powers.reshape(len(windows), n_rows, len(bands)).sum(axis=2)
    scores = np.empty(n_rows)
    tc = targets - targets.mean()
    for i in range(n_rows):
        e = env[:, i]
        sd = e.std()
        z = (e - e.mean()) / sd if sd > 0 else np.zeros_like(e)
        scores[i] = abs(float(np.mean(z * tc)))
    return scores


def rank_channels_by_force_cov(
    sig: SignalMatrix,
    force: ForceTrace,
    spec: WindowSpec = WindowSpec(),
    policy: str = "fixed",
    fixed_channels=PAPER_CHANNELS,
    top_k: int = 9,
    bands=DEFAULT_BANDS,
    df_target_hz: float = 2.0,
    windows=None,
) -> SelectionReport:
    """Rank channels by band-power/force covariance; select fixed list or top-k.

    policy="fixed" (default) keeps the premotor-parietal label list where
    present, in list order; policy="ranked" keeps the top_k channels by
    score. Ranked mode requires a non-constant force trace.
    """
    if policy not in ("fixed", "ranked"):
        raise ConfigError(f"unknown channel policy {policy!r}; use 'fixed' or 'ranked'")
    constant_force = float(np.std(force.values)) == 0.0
    if policy == "ranked" and constant_force:
        raise DataError(
            "force trace is constant, covariance ranking is undefined; "
            "use the fixed channel list policy instead"
        )
    scores = _envelope_force_scores(
        sig.data, sig.fs, force, spec, bands, df_target_hz, windows=windows
    )
    channel_scores = {lb: float(s) for lb, s in zip(sig.channel_labels, scores)}

    if policy == "fixed":
        chosen = tuple(lb for lb in fixed_channels if lb in sig.channel_labels)
        if not chosen:
            raise DataError(
                f"none of the fixed channels {list(fixed_channels)} are present "
                f"in montage {list(sig.channel_labels)}"
            )
    else:
        if not (1 <= top_k <= sig.n_channels):
            raise ConfigError(f"top_k must lie in [1, {sig.n_channels}], got {top_k}")
        order = np.argsort(-scores, kind="stable")
        chosen = tuple(sig.channel_labels[i] for i in order[:top_k])
    return SelectionReport(
        channel_scores=channel_scores,
        chosen_channels=chosen,
        params={
            "policy": policy,
            "top_k": top_k,
            "bands": [b.name for b in bands],
            "window_s": [spec.width_s, spec.step_s],
        },
    )


def rank_components_by_force_cov(
    dec: Decomposition,
    force: ForceTrace,
    spec: WindowSpec = WindowSpec(),
    top_k: int = 5,
    bands=DEFAULT_BANDS,
    df_target_hz: float = 2.0,
    windows=None,
) -> SelectionReport:
    """Keep the top_k components whose band-power envelope tracks force."""
    if not (1 <= top_k <= dec.n_components):
        raise ConfigError(
            f"top_k must lie in [1, {dec.n_components}], got {top_k}"
        )
    if float(np.std(force.values)) == 0.0:
        raise DataError("force trace is constant, covariance ranking is undefined")
    scores = _envelope_force_scores(
        dec.sources, dec.fs, force, spec, bands, df_target_hz, windows=windows
    )
    order = np.argsort(-scores, kind="stable")
    chosen = tuple(int(i) for i in order[:top_k])
    return SelectionReport(
        component_scores={int(i): float(s) for i, s in enumerate(scores)},
        chosen_components=chosen,
        params={
            "top_k": top_k,
            "bands": [b.name for b in bands],
            "window_s": [spec.width_s, spec.step_s],
        },
    )
