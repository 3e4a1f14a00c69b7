"""Metrics, statistical comparisons, split plans, and the evaluation protocols.

The coefficient of determination (CoD) is 1 - SSE/SST with the population
variance in the denominator; Pearson's r and the coefficient of variation
round out the per-run metrics. Model/subject comparisons use Welch and
paired t-tests, one-way ANOVA, balanced two-way fixed-effect ANOVA without
interaction, and Cohen's d, with p-values from the standard t/F
distributions.

Two protocols mirror the evaluation setup: subject-specific (7:2:1 split of
each subject's windows or whole trials) and subject-independent (hold out
each subject in turn). The ablation runner evaluates the five cumulative
preprocessing configurations with the network regressor and reports one CoD
per row.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as sps

from ._parallel import map_ordered
from .data_io import TrialSet
from .errors import ConfigError, DataError
from .features import FeatureTable, feature_set_of_name
from .pipeline import (
    PipelineConfig,
    assemble_tables,
    featurize_trial,
    fit_preprocessor,
    table_for_model,
)
from .regressors import FitConfig, fit_linear, fit_mlp, fit_plsr, predict

__all__ = [
    "cod",
    "pearson",
    "coeff_variation",
    "TestResult",
    "cohens_d",
    "welch_ttest",
    "paired_ttest",
    "oneway_anova",
    "twoway_anova",
    "stats_compare",
    "SplitPlan",
    "EvalReport",
    "MODEL_KINDS",
    "run_protocol",
    "run_ablation",
    "ABLATION_STAGES",
    "config_hash",
]

MODEL_KINDS = ("sflr", "mlr", "plsr", "nnr")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def cod(actual, predicted) -> float:
    """Coefficient of determination: 1 - sum((y - yhat)^2) / sum((y - ybar)^2)."""
    y = np.asarray(actual, dtype=np.float64).ravel()
    yhat = np.asarray(predicted, dtype=np.float64).ravel()
    if y.size == 0 or y.size != yhat.size:
        raise DataError(f"length mismatch: {y.size} actual vs {yhat.size} predicted")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise DataError("constant actual values: CoD denominator is zero")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / sst


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 2:
        raise DataError(f"need two equal-length vectors of >= 2 samples, got {a.size}, {b.size}")
    sa, sb = a.std(), b.std()
    if sa == 0.0 or sb == 0.0:
        raise DataError("constant input: Pearson correlation is undefined")
    r = float(np.mean((a - a.mean()) * (b - b.mean())) / (sa * sb))
    return float(np.clip(r, -1.0, 1.0))


def coeff_variation(x) -> float:
    """Ratio of population standard deviation to mean (x100 when formatted)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise DataError("empty vector")
    m = x.mean()
    if m == 0.0:
        raise DataError("zero mean: coefficient of variation is undefined")
    return float(x.std() / m)


# ---------------------------------------------------------------------------
# Statistical comparisons
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p_value: float
    df: tuple
    effect_size: float | None = None

    def __post_init__(self):
        if np.isfinite(self.p_value) and not (0.0 <= self.p_value <= 1.0):
            raise DataError(f"p-value {self.p_value} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "df": list(self.df),
            "effect_size": self.effect_size,
        }


def cohens_d(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise DataError("need >= 2 samples per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    pooled = np.sqrt(((a.size - 1) * va + (b.size - 1) * vb) / (a.size + b.size - 2))
    diff = a.mean() - b.mean()
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else float("inf") * np.sign(diff)
    return float(diff / pooled)


def welch_ttest(a, b) -> TestResult:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size < 2 or b.size < 2:
        raise DataError("need >= 2 samples per group")
    va, vb = a.var(ddof=1), b.var(ddof=1)
    se2 = va / a.size + vb / b.size
    diff = a.mean() - b.mean()
    if se2 == 0.0:
        t = 0.0 if diff == 0.0 else float("inf") * np.sign(diff)
        return TestResult("welch_t", t, 1.0 if diff == 0.0 else 0.0,
                          (float(a.size + b.size - 2),), cohens_d(a, b))
    t = float(diff / np.sqrt(se2))
    df = se2**2 / (
        (va / a.size) ** 2 / (a.size - 1) + (vb / b.size) ** 2 / (b.size - 1)
    )
    p = float(2.0 * sps.t.sf(abs(t), df))
    return TestResult("welch_t", t, p, (float(df),), cohens_d(a, b))


def paired_ttest(a, b) -> TestResult:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size or a.size < 2:
        raise DataError("paired test needs two equal-length vectors of >= 2 samples")
    d = a - b
    sd = d.std(ddof=1)
    if sd == 0.0:
        t = 0.0 if d.mean() == 0.0 else float("inf") * np.sign(d.mean())
        return TestResult("paired_t", t, 1.0 if d.mean() == 0.0 else 0.0,
                          (float(a.size - 1),), None)
    t = float(d.mean() / (sd / np.sqrt(d.size)))
    p = float(2.0 * sps.t.sf(abs(t), d.size - 1))
    return TestResult("paired_t", t, p, (float(a.size - 1),), None)


def oneway_anova(groups) -> TestResult:
    groups = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(groups) < 2 or any(g.size < 2 for g in groups):
        raise DataError("one-way ANOVA needs >= 2 groups of >= 2 samples")
    all_vals = np.concatenate(groups)
    grand = all_vals.mean()
    ss_between = sum(g.size * (g.mean() - grand) ** 2 for g in groups)
    ss_within = sum(float(np.sum((g - g.mean()) ** 2)) for g in groups)
    df_b = len(groups) - 1
    df_w = all_vals.size - len(groups)
    if ss_within == 0.0:
        f = 0.0 if ss_between == 0.0 else float("inf")
        return TestResult("anova_oneway", f, 1.0 if ss_between == 0.0 else 0.0,
                          (float(df_b), float(df_w)))
    f = float((ss_between / df_b) / (ss_within / df_w))
    p = float(sps.f.sf(f, df_b, df_w))
    return TestResult("anova_oneway", f, p, (float(df_b), float(df_w)))


def twoway_anova(values, factor_a, factor_b) -> dict:
    """Balanced fixed-effects two-way ANOVA without interaction.

    Returns {"factor_a": TestResult, "factor_b": TestResult}. Raises on an
    unbalanced design (use one-way ANOVA instead).
    """
    y = np.asarray(values, dtype=np.float64).ravel()
    fa = np.asarray(factor_a)
    fb = np.asarray(factor_b)
    if not (y.size == fa.size == fb.size):
        raise DataError("values and factor labels must have equal length")
    levels_a = sorted(set(fa.tolist()))
    levels_b = sorted(set(fb.tolist()))
    if len(levels_a) < 2 or len(levels_b) < 2:
        raise DataError("two-way ANOVA needs >= 2 levels per factor")
    cell_counts = {
        (la, lb): int(np.sum((fa == la) & (fb == lb)))
        for la in levels_a
        for lb in levels_b
    }
    counts = set(cell_counts.values())
    if len(counts) != 1 or 0 in counts:
        raise DataError(
            f"unbalanced two-way design (cell counts {sorted(counts)}); "
            "use one-way ANOVA per factor instead"
        )
    grand = y.mean()
    ss_a = sum(np.sum(fa == la) * (y[fa == la].mean() - grand) ** 2 for la in levels_a)
    ss_b = sum(np.sum(fb == lb) * (y[fb == lb].mean() - grand) ** 2 for lb in levels_b)
    ss_total = float(np.sum((y - grand) ** 2))
    ss_err = ss_total - ss_a - ss_b
    df_a = len(levels_a) - 1
    df_b = len(levels_b) - 1
    df_err = y.size - len(levels_a) - len(levels_b) + 1
    if df_err < 1:
        raise DataError("no residual degrees of freedom for two-way ANOVA")
    ss_err = max(ss_err, 0.0)

    def result(name, ss, df) -> TestResult:
        if ss_err == 0.0:
            f = 0.0 if ss == 0.0 else float("inf")
            return TestResult(name, f, 1.0 if ss == 0.0 else 0.0, (float(df), float(df_err)))
        f = float((ss / df) / (ss_err / df_err))
        return TestResult(name, f, float(sps.f.sf(f, df, df_err)), (float(df), float(df_err)))

    return {"factor_a": result("anova_factor_a", ss_a, df_a),
            "factor_b": result("anova_factor_b", ss_b, df_b)}


def stats_compare(values, factor_a, factor_b=None) -> dict:
    """Compare metric values across one or two factors.

    One factor: one-way ANOVA (plus Welch t and Cohen's d when it has two
    levels). Two factors: balanced two-way ANOVA without interaction.
    """
    y = np.asarray(values, dtype=np.float64).ravel()
    fa = np.asarray(factor_a)
    if factor_b is not None:
        return twoway_anova(y, fa, factor_b)
    levels = sorted(set(fa.tolist()))
    if len(levels) < 2:
        raise DataError("need >= 2 factor levels to compare")
    groups = [y[fa == lv] for lv in levels]
    out = {"anova": oneway_anova(groups)}
    if len(levels) == 2:
        out["welch_t"] = welch_ttest(groups[0], groups[1])
    return out


# ---------------------------------------------------------------------------
# Split plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitPlan:
    """How a dataset is divided for training/testing/validation.

    granularity="trial" assigns whole trials (no overlapping windows straddle
    splits); granularity="window" shuffles pooled windows, replicating the
    original protocol at the cost of temporal leakage between neighbours.
    """

    mode: str = "subject_specific"
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0
    granularity: str = "window"

    def __post_init__(self):
        if self.mode not in ("subject_specific", "subject_independent"):
            raise ConfigError(f"unknown protocol mode {self.mode!r}")
        if self.granularity not in ("trial", "window"):
            raise ConfigError(f"unknown split granularity {self.granularity!r}")
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise ConfigError("ratios must be three non-negative numbers")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"ratios must sum to 1, got {sum(self.ratios)}")


SPLIT_NAMES = ("train", "test", "val")


def _largest_remainder(total: int, ratios) -> list[int]:
    quotas = [total * r for r in ratios]
    alloc = [int(np.floor(q)) for q in quotas]
    remainder = total - sum(alloc)
    order = np.argsort([-(q - a) for q, a in zip(quotas, alloc)], kind="stable")
    for i in range(remainder):
        alloc[order[i]] += 1
    return alloc


def split_window_indices(n: int, plan: SplitPlan, rng: np.random.Generator) -> dict:
    """Shuffled row indices per split; disjoint and exhaustive."""
    perm = rng.permutation(n)
    alloc = _largest_remainder(n, plan.ratios)
    out, start = {}, 0
    for name, k in zip(SPLIT_NAMES, alloc):
        out[name] = np.sort(perm[start : start + k])
        start += k
    return out


def allocate_trials(window_counts, plan: SplitPlan, rng: np.random.Generator) -> dict:
    """Assign whole trials to splits, matching the ratios by window count.

    Every split with a nonzero ratio receives at least one trial (pulled from
    the largest allocation when the remainder rounding left it empty).
    """
    n_trials = len(window_counts)
    nonzero = sum(1 for r in plan.ratios if r > 0)
    if n_trials < nonzero:
        raise DataError(
            f"{n_trials} trials cannot fill {nonzero} non-empty splits"
        )
    order = list(rng.permutation(n_trials))
    total = sum(window_counts)
    targets = [total * r for r in plan.ratios]
    assigned = {name: [] for name in SPLIT_NAMES}
    got = [0.0, 0.0, 0.0]
    for ti in order:
        # Most-behind split (relative to target) takes the next trial.
        deficits = [
            (targets[i] - got[i]) / targets[i] if targets[i] > 0 else -np.inf
            for i in range(3)
        ]
        pick = int(np.argmax(deficits))
        assigned[SPLIT_NAMES[pick]].append(ti)
        got[pick] += window_counts[ti]
    # Min-one guarantee for nonzero ratios.
    for i, name in enumerate(SPLIT_NAMES):
        if plan.ratios[i] > 0 and not assigned[name]:
            donor = max(SPLIT_NAMES, key=lambda nm: len(assigned[nm]))
            assigned[name].append(assigned[donor].pop())
    return {name: sorted(idx) for name, idx in assigned.items()}


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def config_hash(obj) -> str:
    """Stable short hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EvalReport:
    mode: str
    seed: int
    config: dict = field(default_factory=dict)
    config_digest: str = ""
    model_rows: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    ablation_rows: list = field(default_factory=list)
    feature_stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config": self.config,
            "config_digest": self.config_digest,
            "model_rows": self.model_rows,
            "stats": self.stats,
            "ablation_rows": self.ablation_rows,
            "feature_stats": self.feature_stats,
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def model_rows_to_csv(self, path) -> None:
        cols = ["subject", "model", "cod_test", "cod_val", "pearson_test",
                "n_train", "n_test", "fit_seed"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            writer.writeheader()
            for row in self.model_rows:
                writer.writerow(row)

    def ablation_to_csv(self, path) -> None:
        cols = ["row", "label", "filter", "clean", "channels", "components",
                "features", "mean_cod"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            writer.writeheader()
            for row in self.ablation_rows:
                flat = dict(row)
                flat.update(row.get("stages", {}))
                writer.writerow(flat)

    def mean_cod(self, model: str) -> float:
        vals = [r["cod_test"] for r in self.model_rows if r["model"] == model]
        if not vals:
            raise DataError(f"no rows for model {model!r}")
        return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------

def _derive_seed(*parts) -> int:
    h = 0
    for p in parts:
        h = (h * 1000003 + (int(p) & 0x7FFFFFFF)) % 2147483647
    return h


def _slice_block(block, rows: np.ndarray):
    return replace(
        block,
        times=block.times[rows],
        force=block.force[rows],
        erp=None if block.erp is None else block.erp[rows],
        powers=None if block.powers is None else block.powers[rows],
        samples=None if block.samples is None else block.samples[rows],
    )


def _fit_model(kind: str, table: FeatureTable, fit_cfg: FitConfig, pcfg: PipelineConfig):
    if kind == "sflr":
        return fit_linear(
            table, replace(fit_cfg, ridge_lambda=pcfg.linear_ridge), single_set=True
        )
    if kind == "mlr":
        return fit_linear(
            table, replace(fit_cfg, ridge_lambda=pcfg.linear_ridge), single_set=False
        )
    if kind == "plsr":
        return fit_plsr(table, fit_cfg)
    if kind == "nnr":
        return fit_mlp(table, fit_cfg)
    raise ConfigError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")


def _expected_window_count(trial, pcfg: PipelineConfig) -> int:
    from .signal_core import interior_windows, sliding_windows

    n = trial.signal.n_samples
    fs = trial.signal.fs
    windows = sliding_windows(n, fs, pcfg.window)
    return len(interior_windows(windows, n, fs, pcfg.edge_exclude_s))


def _feature_choice(kind: str, pcfg: PipelineConfig) -> str:
    if not pcfg.feature_extraction:
        return "all"
    return pcfg.model_features.get(kind, "all")


def _model_tables(tables: dict, choice: str, pca_target: float) -> dict:
    """Per-model view of the split tables (column subset or train-fitted PCA)."""
    if choice != "all_pca":
        return {name: table_for_model(tab, choice) for name, tab in tables.items()}
    from .decomposition import pca_fit, pca_transform

    model = pca_fit(tables["train"].values, variance_target=pca_target, standardize=True)
    names = tuple(f"pc{i + 1}" for i in range(model.n_components))
    out = {}
    for name, tab in tables.items():
        out[name] = FeatureTable(
            pca_transform(model, tab.values), names, tab.window_times, tab.target
        )
    return out


def _eval_models(tables, pcfg, model_kinds, fit_cfg, subject, subject_seed):
    rows = []
    for mi, kind in enumerate(model_kinds):
        choice = _feature_choice(kind, pcfg)
        mtables = _model_tables(tables, choice, pcfg.pca_target)
        t_train = mtables["train"]
        t_test = mtables["test"]
        cfg_m = replace(fit_cfg, seed=_derive_seed(subject_seed, mi, fit_cfg.seed))
        model = _fit_model(kind, t_train, cfg_m, pcfg)
        pred_test = predict(model, t_test.select_columns(model.feature_contract))
        row = {
            "subject": subject,
            "model": kind,
            "cod_test": cod(t_test.target, pred_test),
            "pearson_test": pearson(t_test.target, pred_test),
            "cod_val": None,
            "n_train": t_train.n_windows,
            "n_test": t_test.n_windows,
            "fit_seed": cfg_m.seed,
        }
        if "val" in mtables and mtables["val"].n_windows >= 2:
            t_val = mtables["val"]
            pred_val = predict(model, t_val.select_columns(model.feature_contract))
            if float(np.std(t_val.target)) > 0:
                row["cod_val"] = cod(t_val.target, pred_val)
        rows.append(row)
    return rows


def _feature_force_stats(table: FeatureTable) -> dict:
    """Per-set mean |r| with force and a median coefficient of variation."""
    out = {}
    by_set: dict[str, list[str]] = {}
    for name in table.feature_names:
        by_set.setdefault(feature_set_of_name(name), []).append(name)
    for set_name, names in sorted(by_set.items()):
        vals = table.select_columns(names).values
        rs, cvs = [], []
        for j in range(vals.shape[1]):
            col = vals[:, j]
            if col.std() > 0 and table.target.std() > 0:
                rs.append(abs(pearson(col, table.target)))
            if abs(col.mean()) > 1e-12:
                cvs.append(abs(col.std() / col.mean()))
        out[set_name] = {
            "mean_abs_r": float(np.mean(rs)) if rs else 0.0,
            "median_cv": float(np.median(cvs)) if cvs else 0.0,
        }
    return out


def _run_subject_specific(dataset, plan, pcfg, model_kinds, fit_cfg):
    subjects = dataset.subjects()

    def one_subject(args):
        si, subject = args
        trials = dataset.by_subject(subject)
        subject_seed = _derive_seed(plan.seed, si)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=plan.seed, spawn_key=(si,))
        )
        if plan.granularity == "trial":
            counts = [_expected_window_count(t, pcfg) for t in trials]
            split_ids = allocate_trials(counts, plan, rng)
            train_trials = [trials[i] for i in split_ids["train"]]
            pre = fit_preprocessor(train_trials, pcfg)
            blocks = {
                name: [featurize_trial(pre, trials[i]) for i in ids]
                for name, ids in split_ids.items()
            }
        else:
            pre = fit_preprocessor(trials, pcfg)
            all_blocks = [featurize_trial(pre, t) for t in trials]
            n_total = sum(b.n_windows for b in all_blocks)
            row_split = split_window_indices(n_total, plan, rng)
            blocks = {name: [] for name in SPLIT_NAMES}
            offset = 0
            for b in all_blocks:
                local = np.arange(b.n_windows) + offset
                for name in SPLIT_NAMES:
                    mask = np.isin(local, row_split[name])
                    if mask.any():
                        blocks[name].append(_slice_block(b, np.where(mask)[0]))
                offset += b.n_windows
        tables, _ = assemble_tables(blocks, pcfg)
        if "test" not in tables or tables["test"].n_windows < 2:
            raise DataError(f"subject {subject}: empty test split")
        rows = _eval_models(tables, pcfg, model_kinds, fit_cfg, subject, subject_seed)
        fstats = (
            _feature_force_stats(tables["test"]) if pcfg.feature_extraction else {}
        )
        return rows, (subject, fstats)

    results = map_ordered(one_subject, list(enumerate(subjects)))
    all_rows = [row for rows, _ in results for row in rows]
    feature_stats = {subject: fs for _, (subject, fs) in results}
    return all_rows, feature_stats


def _run_subject_independent(dataset, plan, pcfg, model_kinds, fit_cfg):
    subjects = dataset.subjects()
    if len(subjects) < 2:
        raise DataError(
            "subject-independent evaluation needs >= 2 subjects "
            f"(got {len(subjects)})"
        )

    def one_holdout(args):
        hi, held_out = args
        train_trials = [t for t in dataset.trials if t.subject_id != held_out]
        test_trials = [t for t in dataset.trials if t.subject_id == held_out]
        pre = fit_preprocessor(train_trials, pcfg)
        blocks = {
            "train": [featurize_trial(pre, t) for t in train_trials],
            "test": [featurize_trial(pre, t) for t in test_trials],
        }
        tables, _ = assemble_tables(blocks, pcfg)
        subject_seed = _derive_seed(plan.seed, hi)
        rows = _eval_models(tables, pcfg, model_kinds, fit_cfg, held_out, subject_seed)
        fstats = (
            _feature_force_stats(tables["test"]) if pcfg.feature_extraction else {}
        )
        return rows, (held_out, fstats)

    results = map_ordered(one_holdout, list(enumerate(subjects)))
    all_rows = [row for rows, _ in results for row in rows]
    feature_stats = {subject: fs for _, (subject, fs) in results}
    return all_rows, feature_stats


def run_protocol(
    dataset: TrialSet,
    plan: SplitPlan = SplitPlan(),
    pipeline_cfg: PipelineConfig | None = None,
    model_kinds=MODEL_KINDS,
    fit_cfg: FitConfig | None = None,
) -> EvalReport:
    """Run the full decode protocol and report per-subject, per-model metrics.

    All preprocessing statistics come from training data only; see
    pipeline.assemble_tables for the per-subject baseline rule.
    """
    pcfg = pipeline_cfg or PipelineConfig()
    fit_cfg = fit_cfg or FitConfig()
    model_kinds = tuple(model_kinds)
    unknown = [k for k in model_kinds if k not in MODEL_KINDS]
    if unknown:
        raise ConfigError(f"unknown model kinds {unknown}; choose from {MODEL_KINDS}")

    from .pipeline import pipeline_config_to_dict

    cfg_echo = {
        "plan": {
            "mode": plan.mode,
            "ratios": list(plan.ratios),
            "granularity": plan.granularity,
        },
        "pipeline": pipeline_config_to_dict(pcfg),
        "models": list(model_kinds),
    }
    report = EvalReport(
        mode=plan.mode,
        seed=plan.seed,
        config=cfg_echo,
        config_digest=config_hash(cfg_echo),
    )
    if plan.mode == "subject_specific":
        rows, fstats = _run_subject_specific(dataset, plan, pcfg, model_kinds, fit_cfg)
    else:
        rows, fstats = _run_subject_independent(dataset, plan, pcfg, model_kinds, fit_cfg)
    report.model_rows = rows
    report.feature_stats = fstats

    subjects = sorted({r["subject"] for r in rows})
    if len(model_kinds) >= 2 and len(subjects) >= 2:
        values = np.array([r["cod_test"] for r in rows])
        models = np.array([r["model"] for r in rows])
        subj = np.array([r["subject"] for r in rows])
        anova = twoway_anova(values, models, subj)
        report.stats = {
            "anova_model": anova["factor_a"].to_dict(),
            "anova_subject": anova["factor_b"].to_dict(),
        }
    return report


ABLATION_STAGES = (
    ("raw", dict(line_filter=False, clean_artifacts=False, channel_selection=False,
                 task_components=False, feature_extraction=False)),
    ("line_filter", dict(line_filter=True, clean_artifacts=False,
                         channel_selection=False, task_components=False,
                         feature_extraction=False)),
    ("component_selection", dict(line_filter=True, clean_artifacts=True,
                                 channel_selection=False, task_components=True,
                                 feature_extraction=False)),
    ("channel_selection", dict(line_filter=True, clean_artifacts=True,
                               channel_selection=True, task_components=True,
                               feature_extraction=False)),
    ("feature_extraction", dict(line_filter=True, clean_artifacts=True,
                                channel_selection=True, task_components=True,
                                feature_extraction=True)),
)


def run_ablation(
    dataset: TrialSet,
    plan: SplitPlan = SplitPlan(),
    pipeline_cfg: PipelineConfig | None = None,
    fit_cfg: FitConfig | None = None,
    model_kind: str = "nnr",
) -> EvalReport:
    """Evaluate the five cumulative preprocessing configurations.

    Rows: raw samples; +band-pass/notch; +ICA component stages; +channel
    selection; +feature extraction. Rows without feature extraction feed the
    flattened window samples straight into the regressor.
    """
    base = pipeline_cfg or PipelineConfig()
    report = EvalReport(mode="ablation", seed=plan.seed)
    for i, (label, flags) in enumerate(ABLATION_STAGES):
        pcfg = replace(base, **flags)
        sub_report = run_protocol(
            dataset, plan, pcfg, model_kinds=(model_kind,), fit_cfg=fit_cfg
        )
        per_subject = {r["subject"]: r["cod_test"] for r in sub_report.model_rows}
        report.ablation_rows.append(
            {
                "row": i + 1,
                "label": label,
                "stages": pcfg.stage_flags(),
                "mean_cod": float(np.mean(list(per_subject.values()))),
                "per_subject": per_subject,
            }
        )
        if not report.config:
            report.config = sub_report.config
    report.config_digest = config_hash(
        {"ablation": [lab for lab, _ in ABLATION_STAGES], "base": report.config}
    )
    return report
