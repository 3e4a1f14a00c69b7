"""Continuous grasp-force decoding from multichannel EEG-like recordings."""

from .errors import ConfigError, DataError, ForceDecodeError, NumericalError
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
from .decomposition import (
    Decomposition,
    PcaModel,
    apply_unmixing,
    fastica,
    pca_fit,
    pca_inverse_transform,
    pca_transform,
    reconstruct,
)
from .selection import (
    PAPER_CHANNELS,
    ComponentLabel,
    LabelerConfig,
    SelectionReport,
    label_components,
    rank_channels_by_force_cov,
    rank_components_by_force_cov,
    remove_artifacts,
)
from .features import (
    DEFAULT_BANDS,
    MU_BAND,
    THETA_BAND,
    BandDef,
    Baseline,
    FeatureTable,
    band_power,
    build_feature_table,
    erds,
    erp_stats,
    estimate_baseline,
    psd,
    reduce_erp_block,
    window_sample_table,
)
from .regressors import (
    FitConfig,
    LinearModel,
    MlpModel,
    PlsModel,
    fit_linear,
    fit_mlp,
    fit_plsr,
    load_model,
    predict,
    save_model,
)
from .evaluation import (
    EvalReport,
    SplitPlan,
    cod,
    coeff_variation,
    cohens_d,
    oneway_anova,
    paired_ttest,
    pearson,
    run_ablation,
    run_protocol,
    stats_compare,
    twoway_anova,
    welch_ttest,
)
from .data_io import (
    SynthConfig,
    Trial,
    TrialSet,
    generate_synthetic,
    import_external,
    load_dataset,
    read_trial,
    write_dataset,
    write_trial,
)
from .pipeline import (
    FittedPreprocessor,
    PipelineConfig,
    assemble_tables,
    featurize_trial,
    fit_preprocessor,
)

__version__ = "0.1.0"
