"""End-to-end preprocessing and feature assembly.

A preprocessor is *fitted* on training trials only (ICA unmixings, component
labels, channel choice, task-component choice) and then *applied* as a pure
function to any trial, so no statistic of the evaluation splits leaks into
the transform. Feature assembly follows the same discipline: ERDS baselines
are per-subject medians of sub-threshold (rest) windows, and the ERP PCA
basis comes from the pooled training windows.

Stage order: band-pass + mains notch -> artifact ICA (drop non-brain
components) -> channel selection -> task ICA (keep the components whose band
power tracks force) -> windowed features.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .decomposition import Decomposition, apply_unmixing, fastica, reconstruct
from .errors import ConfigError, DataError
from .features import (
    DEFAULT_BANDS,
    ERP_STAT_NAMES,
    FeatureTable,
    baseline_from_powers,
    reduce_erp_block,
    window_band_powers,
    window_erp_stats,
)
from .selection import (
    PAPER_CHANNELS,
    LabelerConfig,
    SelectionReport,
    label_components,
    rank_channels_by_force_cov,
    rank_components_by_force_cov,
)
from .signal_core import (
    ForceTrace,
    SignalMatrix,
    WindowSpec,
    align_force,
    band_filter,
    interior_windows,
    powerline_notch,
    sliding_windows,
)

__all__ = [
    "PipelineConfig",
    "FittedPreprocessor",
    "TrialFeatures",
    "fit_preprocessor",
    "featurize_trial",
    "assemble_tables",
    "table_for_model",
    "pipeline_config_to_dict",
    "pipeline_config_from_dict",
    "DEFAULT_MODEL_FEATURES",
]

# Feature wiring per decoder: the single-set linear model restricts itself to
# the time-domain statistics block, the multiple linear model sees every
# column, the PLS decoder consumes a correlation-PCA reduction of the full
# matrix (fitted on training rows), and the network decoder reads the ERDS
# block. All overridable per run.
DEFAULT_MODEL_FEATURES = {"sflr": "all", "mlr": "all", "plsr": "all_pca", "nnr": "erds"}


@dataclass(frozen=True)
class PipelineConfig:
    """Everything the preprocessing + feature stages need, in one place."""

    # filtering
    line_filter: bool = True
    band_low_hz: float = 0.5
    band_high_hz: float = 50.0
    filter_order: int = 4
    notch: bool = True
    mains_hz: float = 50.0
    notch_q: float = 30.0
    # artifact ICA + labelling
    clean_artifacts: bool = True
    labeler: LabelerConfig = field(default_factory=LabelerConfig)
    # channel selection
    channel_selection: bool = True
    channel_policy: str = "fixed"
    fixed_channels: tuple[str, ...] = PAPER_CHANNELS
    top_k_channels: int = 9
    # task-component ICA
    task_components: bool = True
    top_k_components: int = 5
    # ICA numerics
    ica_seed: int = 0
    ica_max_iter: int = 500
    ica_tol: float = 1e-5
    # windowing + features
    window: WindowSpec = field(default_factory=WindowSpec)
    bands: tuple = DEFAULT_BANDS
    df_target_hz: float = 2.0
    edge_exclude_s: float = 1.0
    feature_extraction: bool = True
    baseline_threshold_n: float = 0.5
    pca_target: float = 0.95
    # model wiring
    model_features: dict = field(default_factory=lambda: dict(DEFAULT_MODEL_FEATURES))
    linear_ridge: float = 1e-6

    def stage_flags(self) -> dict:
        return {
            "filter": self.line_filter,
            "clean": self.clean_artifacts,
            "channels": self.channel_selection,
            "components": self.task_components,
            "features": self.feature_extraction,
        }


def pipeline_config_to_dict(cfg: PipelineConfig) -> dict:
    from dataclasses import asdict

    d = asdict(cfg)
    d["window"] = {"width_s": cfg.window.width_s, "step_s": cfg.window.step_s}
    d["bands"] = [
        {"name": b.name, "lo_hz": b.lo_hz, "hi_hz": b.hi_hz} for b in cfg.bands
    ]
    return d


def pipeline_config_from_dict(d: dict) -> PipelineConfig:
    from .features import BandDef

    d = dict(d)
    if "window" in d:
        d["window"] = WindowSpec(**d["window"])
    if "bands" in d:
        d["bands"] = tuple(BandDef(**b) for b in d["bands"])
    if "labeler" in d and isinstance(d["labeler"], dict):
        lab = dict(d["labeler"])
        for key in ("delta_band", "heart_period_s"):
            if key in lab:
                lab[key] = tuple(lab[key])
        d["labeler"] = LabelerConfig(**lab)
    for key in ("fixed_channels",):
        if key in d:
            d[key] = tuple(d[key])
    known = PipelineConfig.__dataclass_fields__
    unknown = [k for k in d if k not in known]
    if unknown:
        raise ConfigError(f"unknown pipeline config keys {unknown}")
    return PipelineConfig(**d)


def _concat_trials(signals: list[SignalMatrix]) -> SignalMatrix:
    labels = signals[0].channel_labels
    fs = signals[0].fs
    for s in signals[1:]:
        if s.channel_labels != labels or s.fs != fs:
            raise DataError("trials disagree on montage or sampling rate")
    return SignalMatrix(np.hstack([s.data for s in signals]), fs, labels)


def _concat_windows(signals: list[SignalMatrix], spec: WindowSpec) -> list[tuple[int, int]]:
    """Sliding windows of each segment, offset into the concatenation (no
    window straddles a trial boundary)."""
    windows = []
    offset = 0
    for s in signals:
        for a, b in sliding_windows(s.n_samples, s.fs, spec):
            windows.append((a + offset, b + offset))
        offset += s.n_samples
    return windows


@dataclass(frozen=True)
class FittedPreprocessor:
    """Train-fitted transform from a raw trial to its cleaned, selected signal."""

    cfg: PipelineConfig
    clean_dec: Decomposition | None = None
    brain_keep: tuple[int, ...] = ()
    component_labels: tuple = ()
    channel_report: SelectionReport | None = None
    selected_channels: tuple[str, ...] | None = None
    task_dec: Decomposition | None = None
    task_keep: tuple[int, ...] = ()
    task_report: SelectionReport | None = None

    def filter_only(self, sig: SignalMatrix) -> SignalMatrix:
        cfg = self.cfg
        if cfg.line_filter:
            sig = band_filter(sig, cfg.band_low_hz, cfg.band_high_hz, cfg.filter_order)
            if cfg.notch:
                sig = powerline_notch(sig, cfg.mains_hz, cfg.notch_q)
        return sig

    def apply(self, sig: SignalMatrix) -> SignalMatrix:
        sig = self.filter_only(sig)
        if self.clean_dec is not None:
            sources = apply_unmixing(self.clean_dec, sig)
            sig = reconstruct(self.clean_dec, self.brain_keep, sources=sources, t0=sig.t0)
        if self.selected_channels is not None:
            sig = sig.pick(self.selected_channels)
        if self.task_dec is not None:
            sources = apply_unmixing(self.task_dec, sig)
            sig = reconstruct(self.task_dec, self.task_keep, sources=sources, t0=sig.t0)
        return sig


def fit_preprocessor(train_trials, cfg: PipelineConfig = PipelineConfig()) -> FittedPreprocessor:
    """Fit every stateful stage on the training trials only."""
    if not train_trials:
        raise DataError("no training trials to fit the preprocessor on")
    pre = FittedPreprocessor(cfg=cfg)
    filtered = [pre.filter_only(t.signal) for t in train_trials]
    force_all = ForceTrace(
        np.concatenate([t.force.values for t in train_trials]), train_trials[0].force.fs
    )

    clean_dec = None
    brain_keep: tuple[int, ...] = ()
    labels: tuple = ()
    if cfg.clean_artifacts:
        joined = _concat_trials(filtered)
        clean_dec = fastica(
            joined, seed=cfg.ica_seed, max_iter=cfg.ica_max_iter, tol=cfg.ica_tol
        )
        labeler = replace(cfg.labeler, mains_hz=cfg.mains_hz)
        labels = tuple(label_components(clean_dec, cfg=labeler))
        brain_keep = tuple(i for i, lb in enumerate(labels) if lb.kind == "brain")
        if not brain_keep:
            raise DataError(
                "artifact labelling removed every component; cannot clean the signal"
            )
        cleaned = [
            reconstruct(clean_dec, brain_keep, sources=apply_unmixing(clean_dec, s), t0=s.t0)
            for s in filtered
        ]
    else:
        cleaned = filtered

    channel_report = None
    selected: tuple[str, ...] | None = None
    if cfg.channel_selection:
        joined = _concat_trials(cleaned)
        channel_report = rank_channels_by_force_cov(
            joined,
            force_all,
            cfg.window,
            policy=cfg.channel_policy,
            fixed_channels=cfg.fixed_channels,
            top_k=cfg.top_k_channels,
            bands=cfg.bands,
            df_target_hz=cfg.df_target_hz,
            windows=_concat_windows(cleaned, cfg.window),
        )
        selected = channel_report.chosen_channels
        cleaned = [s.pick(selected) for s in cleaned]

    task_dec = None
    task_keep: tuple[int, ...] = ()
    task_report = None
    if cfg.task_components:
        joined = _concat_trials(cleaned)
        # Artifact removal may have reduced the signal rank below the channel
        # count; whitening only supports the effective rank.
        xc = joined.data - joined.data.mean(axis=1, keepdims=True)
        evals = np.linalg.eigvalsh((xc @ xc.T) / joined.n_samples)
        rank = int(np.sum(evals > 1e-10 * max(evals[-1], 1e-30)))
        if rank < 1:
            raise DataError("cleaned training signal has rank 0; cannot fit task ICA")
        task_dec = fastica(
            joined,
            n_components=min(joined.n_channels, rank),
            seed=cfg.ica_seed + 1,
            max_iter=cfg.ica_max_iter,
            tol=cfg.ica_tol,
        )
        top_k = min(cfg.top_k_components, task_dec.n_components)
        task_report = rank_components_by_force_cov(
            task_dec,
            force_all,
            cfg.window,
            top_k=top_k,
            bands=cfg.bands,
            df_target_hz=cfg.df_target_hz,
            windows=_concat_windows(cleaned, cfg.window),
        )
        task_keep = task_report.chosen_components

    return FittedPreprocessor(
        cfg=cfg,
        clean_dec=clean_dec,
        brain_keep=brain_keep,
        component_labels=labels,
        channel_report=channel_report,
        selected_channels=selected,
        task_dec=task_dec,
        task_keep=task_keep,
        task_report=task_report,
    )


@dataclass(frozen=True)
class TrialFeatures:
    """Per-window raw feature blocks of one preprocessed trial."""

    subject_id: str
    trial_id: int
    channel_labels: tuple[str, ...]
    times: np.ndarray
    force: np.ndarray
    erp: np.ndarray | None          # [n_w, n_ch * 6]
    powers: np.ndarray | None       # [n_w, n_ch * n_bands]
    samples: np.ndarray | None      # [n_w, n_ch * w] when feature extraction is off

    @property
    def n_windows(self) -> int:
        return self.times.size


def featurize_trial(pre: FittedPreprocessor, trial) -> TrialFeatures:
    """Preprocess one trial and compute its per-window feature blocks."""
    cfg = pre.cfg
    sig = pre.apply(trial.signal)
    windows = sliding_windows(sig.n_samples, sig.fs, cfg.window)
    windows = interior_windows(windows, sig.n_samples, sig.fs, cfg.edge_exclude_s)
    force_w = align_force(trial.force, windows)
    times = sig.t0 + np.array([a for a, _ in windows]) / sig.fs

    erp = powers = samples = None
    if cfg.feature_extraction:
        erp = window_erp_stats(sig, windows)
        powers = window_band_powers(
            sig, windows, bands=cfg.bands, df_target_hz=cfg.df_target_hz
        )
    else:
        w = windows[0][1] - windows[0][0]
        samples = np.empty((len(windows), sig.n_channels * w))
        for wi, (a, b) in enumerate(windows):
            samples[wi] = sig.data[:, a:b].reshape(-1)
    return TrialFeatures(
        subject_id=trial.subject_id,
        trial_id=trial.trial_id,
        channel_labels=sig.channel_labels,
        times=times,
        force=force_w,
        erp=erp,
        powers=powers,
        samples=samples,
    )


def _erp_names(labels) -> list[str]:
    return [f"{ch}_{st}" for ch in labels for st in ERP_STAT_NAMES]


def _psd_names(labels, bands) -> list[str]:
    return [f"{ch}_{b.name}_psd" for ch in labels for b in bands]


def _erds_names(labels, bands) -> list[str]:
    return [f"{ch}_{b.name}_erds" for ch in labels for b in bands]


def assemble_tables(
    split_blocks: dict,
    cfg: PipelineConfig = PipelineConfig(),
    train_split: str = "train",
):
    """Turn per-trial feature blocks into one FeatureTable per split.

    split_blocks maps split name -> list[TrialFeatures]. Training rows alone
    determine the ERDS baselines (per subject) and the ERP PCA basis; a
    subject absent from the training split (subject-independent evaluation)
    gets a baseline from its own rest windows, since baselines never pool
    across subjects.

    Returns (tables, info) where info records baselines and the PCA model.
    """
    if train_split not in split_blocks or not split_blocks[train_split]:
        raise DataError(f"split {train_split!r} is empty; nothing to fit statistics on")
    ref = split_blocks[train_split][0]
    labels = ref.channel_labels
    for blocks in split_blocks.values():
        for b in blocks:
            if b.channel_labels != labels:
                raise DataError("feature blocks disagree on channel labels")

    if not cfg.feature_extraction:
        w = ref.samples.shape[1] // len(labels)
        names = tuple(f"{ch}_s{i}" for ch in labels for i in range(w))
        tables = {}
        for split, blocks in split_blocks.items():
            if not blocks:
                continue
            tables[split] = FeatureTable(
                np.vstack([b.samples for b in blocks]),
                names,
                np.concatenate([b.times for b in blocks]),
                np.concatenate([b.force for b in blocks]),
            )
        return tables, {"baselines": {}, "pca_model": None}

    # Per-subject baselines: training rows when available, own rows otherwise.
    def rows_for(subject: str, splits) -> tuple[np.ndarray, np.ndarray]:
        powers, force = [], []
        for split in splits:
            for b in split_blocks.get(split, []):
                if b.subject_id == subject:
                    powers.append(b.powers)
                    force.append(b.force)
        if not powers:
            return np.empty((0, 0)), np.empty(0)
        return np.vstack(powers), np.concatenate(force)

    subjects = sorted(
        {b.subject_id for blocks in split_blocks.values() for b in blocks}
    )
    all_splits = list(split_blocks.keys())
    baselines = {}
    for subject in subjects:
        powers, force = rows_for(subject, [train_split])
        if powers.size == 0:
            powers, force = rows_for(subject, all_splits)
        baselines[subject] = baseline_from_powers(
            powers, force, labels, cfg.bands, cfg.baseline_threshold_n
        )

    names = tuple(
        _erp_names(labels) + _psd_names(labels, cfg.bands) + _erds_names(labels, cfg.bands)
    )
    raw_tables = {}
    for split, blocks in split_blocks.items():
        if not blocks:
            continue
        parts = []
        for b in blocks:
            base = np.array(
                [
                    baselines[b.subject_id].get(ch, band.name)
                    for ch in labels
                    for band in cfg.bands
                ]
            )
            erds_block = 100.0 * (b.powers - base) / base
            parts.append(
                FeatureTable(
                    np.hstack([b.erp, b.powers, erds_block]), names, b.times, b.force
                )
            )
        raw_tables[split] = FeatureTable.concat(parts)

    reduced, pca_model = reduce_erp_block(
        raw_tables[train_split], pca_target=cfg.pca_target
    )
    tables = {train_split: reduced}
    for split, tab in raw_tables.items():
        if split != train_split:
            tables[split], _ = reduce_erp_block(tab, pca_model=pca_model)
    return tables, {"baselines": baselines, "pca_model": pca_model}


def table_for_model(table: FeatureTable, feature_choice: str) -> FeatureTable:
    """Column subset for one model: 'all', 'erp', 'psd', or 'erds'."""
    if feature_choice == "all":
        return table
    if feature_choice not in ("erp", "psd", "erds"):
        raise ConfigError(f"unknown feature choice {feature_choice!r}")
    from .features import feature_set_of_name

    names = [n for n in table.feature_names if feature_set_of_name(n) == feature_choice]
    if not names:
        raise DataError(f"table has no {feature_choice!r} columns")
    return table.select_columns(names)
