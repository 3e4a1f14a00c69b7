"""The four force decoders and their shared prediction/serialization surface.

* fit_linear  - closed-form OLS/ridge; single_set=True restricts to the ERP
  block (the single-feature-set linear decoder), otherwise all columns.
* fit_plsr    - NIPALS PLS1 with the component count chosen by seeded
  cross-validation over candidate counts.
* fit_mlp     - a small fully-connected network (8-16-32 hidden units, smooth
  nonlinearity, linear output) trained with mini-batch Adam on mean squared
  error; backpropagation is analytic and checkable against finite differences.

Features are standardized to zero mean / unit variance inside every fit using
training statistics only; ERDS magnitudes span hundreds of percent and Adam
needs the conditioning. Fitted models are immutable in use: predict() is pure
and deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .features import FeatureTable, feature_set_of_name

__all__ = [
    "FitConfig",
    "LinearModel",
    "PlsModel",
    "MlpModel",
    "MLP_HIDDEN_SIZES",
    "fit_linear",
    "fit_plsr",
    "fit_mlp",
    "mlp_loss_and_gradients",
    "predict",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

MLP_HIDDEN_SIZES = (8, 16, 32)


@dataclass(frozen=True)
class FitConfig:
    """Shared training configuration (defaults follow the evaluation setup)."""

    seed: int = 0
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    ridge_lambda: float = 0.0
    activation: str = "tanh"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.ridge_lambda < 0:
            raise ConfigError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"activation must be 'tanh' or 'relu', got {self.activation!r}")


def _standardize_fit(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)  # constant columns pass through centred
    return mean, std


# ---------------------------------------------------------------------------
# Linear models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearModel:
    weights: np.ndarray
    intercept: float
    feature_contract: tuple[str, ...]
    ridge_lambda: float = 0.0
    single_set: bool = False

    def __post_init__(self):
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.intercept):
            raise NumericalError("linear model has non-finite parameters")


def _erp_columns(names) -> list[str]:
    return [n for n in names if feature_set_of_name(n) == "erp"]


def fit_linear(table: FeatureTable, cfg: FitConfig = FitConfig(), single_set: bool = False) -> LinearModel:
    """Closed-form OLS (ridge when cfg.ridge_lambda > 0) on standardized features.

    single_set restricts the fit to the ERP feature block; otherwise every
    column is used. Requires more windows than features unless ridge
    regularization is on.
    """
    names = tuple(_erp_columns(table.feature_names)) if single_set else table.feature_names
    if not names:
        raise ConfigError("single_set fit requested but the table has no ERP columns")
    sub = table.select_columns(names)
    X, y = sub.values, sub.target
    n, d = X.shape
    lam = cfg.ridge_lambda
    if n <= d and lam == 0.0:
        raise DataError(
            f"{n} windows for {d} features is underdetermined; add data or set ridge_lambda > 0"
        )

    mean, std = _standardize_fit(X)
    Xs = (X - mean) / std
    y_mean = y.mean()
    yc = y - y_mean

    gram = Xs.T @ Xs
    if lam == 0.0:
        evals = np.linalg.eigvalsh(gram)
        if evals[0] <= 1e-10 * max(evals[-1], 1e-30):
            raise NumericalError(
                "singular normal equations (collinear features); set ridge_lambda > 0"
            )
    beta_std = np.linalg.solve(gram + lam * np.eye(d), Xs.T @ yc)

    weights = beta_std / std
    intercept = float(y_mean - weights @ mean)
    return LinearModel(
        weights=weights,
        intercept=intercept,
        feature_contract=names,
        ridge_lambda=lam,
        single_set=single_set,
    )


# ---------------------------------------------------------------------------
# Partial least squares (PLS1, NIPALS)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlsModel:
    n_components: int
    x_weights: np.ndarray   # [d, k]
    x_loadings: np.ndarray  # [d, k]
    y_loadings: np.ndarray  # [k]
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    coef: np.ndarray        # [d], on standardized features
    feature_contract: tuple[str, ...]
    cv_mse: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigError("PLS model needs at least one component")


def _nipals_pls1(Xs: np.ndarray, yc: np.ndarray, k_max: int):
    """Greedy NIPALS factors of (Xs, yc); returns (W, P, q, achieved k)."""
    n, d = Xs.shape
    X = Xs.copy()
    y = yc.copy()
    W = np.zeros((d, k_max))
    P = np.zeros((d, k_max))
    q = np.zeros(k_max)
    y_scale = float(np.abs(yc).max()) or 1.0
    achieved = 0
    for a in range(k_max):
        w = X.T @ y
        nw = np.linalg.norm(w)
        if nw <= 1e-12 * y_scale * max(1.0, float(np.abs(X).max())):
            break
        w /= nw
        t = X @ w
        tt = float(t @ t)
        if tt <= 1e-24:
            break
        p = X.T @ t / tt
        W[:, a] = w
        P[:, a] = p
        q[a] = float(y @ t) / tt
        X = X - np.outer(t, p)
        y = y - q[a] * t
        achieved = a + 1
    return W, P, q, achieved


def _pls_coef(W: np.ndarray, P: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    # B_k = W_k (P_k^T W_k)^{-1} q_k, the regression vector of the first k factors.
    Wk, Pk, qk = W[:, :k], P[:, :k], q[:k]
    return Wk @ np.linalg.solve(Pk.T @ Wk, qk)


def fit_plsr(
    table: FeatureTable,
    cfg: FitConfig = FitConfig(),
    max_components: int = 20,
    folds: int = 5,
) -> PlsModel:
    """NIPALS PLS1 with the component count minimising cross-validated MSE.

    Fold assignment is a seeded permutation, so the selected count is
    reproducible. Candidate counts run from 1 to
    min(max_components, n_features, smallest fold-train size - 1).
    """
    X, y = table.values, table.target
    n, d = X.shape
    if folds < 2:
        raise ConfigError(f"need at least 2 folds, got {folds}")
    if n < folds * 2:
        raise DataError(f"{n} windows cannot support {folds}-fold cross-validation")
    if float(np.std(y)) == 0.0:
        raise DataError("constant target: PLS regression is undefined")

    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    fold_idx = np.array_split(perm, folds)
    k_max = min(max_components, d, min(n - f.size for f in fold_idx) - 1)
    if k_max < 1:
        raise DataError("not enough samples per fold for even one component")

    mse = np.zeros(k_max)
    counts = np.zeros(k_max)
    for f in fold_idx:
        val = f
        train = np.setdiff1d(perm, val, assume_unique=True)
        Xt, yt = X[train], y[train]
        mean, std = _standardize_fit(Xt)
        Xs = (Xt - mean) / std
        yc = yt - yt.mean()
        W, P, q, achieved = _nipals_pls1(Xs, yc, k_max)
        Xv = (X[val] - mean) / std
        for k in range(1, k_max + 1):
            kk = min(k, achieved)
            if kk == 0:
                pred = np.full(val.size, yt.mean())
            else:
                pred = Xv @ _pls_coef(W, P, q, kk) + yt.mean()
            mse[k - 1] += float(np.sum((y[val] - pred) ** 2))
            counts[k - 1] += val.size
    cv_mse = mse / counts
    best_k = int(np.argmin(cv_mse)) + 1

    mean, std = _standardize_fit(X)
    Xs = (X - mean) / std
    y_mean = float(y.mean())
    W, P, q, achieved = _nipals_pls1(Xs, y - y_mean, k_max)
    best_k = min(best_k, achieved)
    coef = _pls_coef(W, P, q, best_k)
    return PlsModel(
        n_components=best_k,
        x_weights=W[:, :best_k],
        x_loadings=P[:, :best_k],
        y_loadings=q[:best_k],
        x_mean=mean,
        x_std=std,
        y_mean=y_mean,
        coef=coef,
        feature_contract=table.feature_names,
        cv_mse=tuple(float(v) for v in cv_mse),
    )


# ---------------------------------------------------------------------------
# Neural network regressor
# ---------------------------------------------------------------------------

@dataclass
class MlpModel:
    """Fully-connected regressor; treat a fitted instance as immutable.

    Inputs and targets are standardized internally (training statistics);
    loss_history is therefore in standardized-target units.
    """

    weights: list          # W[l] of shape [out_l, in_l]
    biases: list           # b[l] of shape [out_l]
    activation: str
    x_mean: np.ndarray
    x_std: np.ndarray
    feature_contract: tuple[str, ...]
    y_mean: float = 0.0
    y_std: float = 1.0
    loss_history: tuple[float, ...] = ()
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    return 1.0 - np.tanh(z) ** 2 if kind == "tanh" else (z > 0).astype(np.float64)


def _mlp_forward(weights, biases, activation: str, Xs: np.ndarray):
    """Forward pass on standardized [n, d] input; returns (yhat, pre/post activations)."""
    a = Xs.T
    zs, hs = [], [a]
    last = len(weights) - 1
    for l, (W, b) in enumerate(zip(weights, biases)):
        z = W @ a + b[:, None]
        zs.append(z)
        a = z if l == last else _act(z, activation)
        hs.append(a)
    return a[0], zs, hs


def mlp_loss_and_gradients(weights, biases, activation: str, Xs: np.ndarray, y: np.ndarray):
    """Mean-squared-error loss and its analytic gradients on one batch.

    Xs is already standardized, shape [n, d]. Returns
    (loss, [dW per layer], [db per layer]); gradients match central finite
    differences of the loss to first order.
    """
    n = Xs.shape[0]
    yhat, zs, hs = _mlp_forward(weights, biases, activation, Xs)
    resid = yhat - y
    loss = float(np.mean(resid**2))

    dWs = [None] * len(weights)
    dbs = [None] * len(weights)
    delta = (2.0 / n) * resid[None, :]  # dL/dz at the linear output
    for l in range(len(weights) - 1, -1, -1):
        dWs[l] = delta @ hs[l].T
        dbs[l] = delta.sum(axis=1)
        if l > 0:
            delta = (weights[l].T @ delta) * _act_grad(zs[l - 1], activation)
    return loss, dWs, dbs


def fit_mlp(table: FeatureTable, cfg: FitConfig = FitConfig()) -> MlpModel:
    """Train the regression network with mini-batch Adam for cfg.epochs.

    Deterministic given cfg.seed (initialisation and the per-epoch shuffle
    share one seeded stream). loss_history[0] is the pre-training loss,
    loss_history[i] the full-batch loss after epoch i. Diverging (NaN) loss
    aborts with a diagnostic suggesting a lower learning rate.
    """
    X, y = table.values, table.target
    n, d = X.shape
    if n < 1 or d < 1:
        raise DataError("empty feature table")

    mean, std = _standardize_fit(X)
    Xs = (X - mean) / std
    y_mean = float(y.mean())
    y_std = float(y.std()) or 1.0
    ys = (y - y_mean) / y_std

    sizes = (d,) + MLP_HIDDEN_SIZES + (1,)
    rng = np.random.default_rng(cfg.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))  # Glorot uniform
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))

    m_w = [np.zeros_like(W) for W in weights]
    v_w = [np.zeros_like(W) for W in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]

    def full_loss() -> float:
        yhat, _, _ = _mlp_forward(weights, biases, cfg.activation, Xs)
        return float(np.mean((yhat - ys) ** 2))

    history = [full_loss()]
    t = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, dWs, dbs = mlp_loss_and_gradients(
                weights, biases, cfg.activation, Xs[batch], ys[batch]
            )
            if not np.isfinite(loss):
                raise NumericalError(
                    f"training loss became non-finite at epoch {epoch + 1}; "
                    "try a lower learning rate"
                )
            t += 1
            bc1 = 1.0 - cfg.beta1**t
            bc2 = 1.0 - cfg.beta2**t
            for l in range(len(weights)):
                m_w[l] = cfg.beta1 * m_w[l] + (1 - cfg.beta1) * dWs[l]
                v_w[l] = cfg.beta2 * v_w[l] + (1 - cfg.beta2) * dWs[l] ** 2
                weights[l] -= cfg.learning_rate * (m_w[l] / bc1) / (np.sqrt(v_w[l] / bc2) + cfg.eps)
                m_b[l] = cfg.beta1 * m_b[l] + (1 - cfg.beta1) * dbs[l]
                v_b[l] = cfg.beta2 * v_b[l] + (1 - cfg.beta2) * dbs[l] ** 2
                biases[l] -= cfg.learning_rate * (m_b[l] / bc1) / (np.sqrt(v_b[l] / bc2) + cfg.eps)
        history.append(full_loss())

    return MlpModel(
        weights=weights,
        biases=biases,
        activation=cfg.activation,
        x_mean=mean,
        x_std=std,
        feature_contract=table.feature_names,
        y_mean=y_mean,
        y_std=y_std,
        loss_history=tuple(history),
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Prediction and serialization
# ---------------------------------------------------------------------------

def predict(model, table: FeatureTable) -> np.ndarray:
    """One prediction per window; the table must match the model's feature
    contract exactly (names and order) - no silent reordering."""
    if tuple(table.feature_names) != tuple(model.feature_contract):
        raise DataError(
            "feature contract mismatch:\n"
            f"  model expects {list(model.feature_contract)}\n"
            f"  table has     {list(table.feature_names)}"
        )
    if isinstance(model, LinearModel):
        out = table.values @ model.weights + model.intercept
    elif isinstance(model, PlsModel):
        Xs = (table.values - model.x_mean) / model.x_std
        out = Xs @ model.coef + model.y_mean
    elif isinstance(model, MlpModel):
        Xs = (table.values - model.x_mean) / model.x_std
        out, _, _ = _mlp_forward(model.weights, model.biases, model.activation, Xs)
        out = out * model.y_std + model.y_mean
    else:
        raise ConfigError(f"unknown model type {type(model).__name__}")
    if not np.all(np.isfinite(out)):
        raise NumericalError("prediction produced non-finite values")
    return np.asarray(out, dtype=np.float64)


MODEL_FORMAT_VERSION = 1


def _arr(a) -> list:
    return np.asarray(a, dtype=np.float64).tolist()


def model_to_dict(model) -> dict:
    base = {
        "format_version": MODEL_FORMAT_VERSION,
        "feature_contract": list(model.feature_contract),
    }
    if isinstance(model, LinearModel):
        base.update(
            kind="linear",
            weights=_arr(model.weights),
            intercept=model.intercept,
            ridge_lambda=model.ridge_lambda,
            single_set=model.single_set,
        )
    elif isinstance(model, PlsModel):
        base.update(
            kind="pls",
            n_components=model.n_components,
            x_weights=_arr(model.x_weights),
            x_loadings=_arr(model.x_loadings),
            y_loadings=_arr(model.y_loadings),
            x_mean=_arr(model.x_mean),
            x_std=_arr(model.x_std),
            y_mean=model.y_mean,
            coef=_arr(model.coef),
            cv_mse=list(model.cv_mse),
        )
    elif isinstance(model, MlpModel):
        base.update(
            kind="mlp",
            weights=[_arr(W) for W in model.weights],
            biases=[_arr(b) for b in model.biases],
            activation=model.activation,
            x_mean=_arr(model.x_mean),
            x_std=_arr(model.x_std),
            y_mean=model.y_mean,
            y_std=model.y_std,
            loss_history=list(model.loss_history),
            config={
                "seed": model.config.seed,
                "epochs": model.config.epochs,
                "batch_size": model.config.batch_size,
                "learning_rate": model.config.learning_rate,
                "beta1": model.config.beta1,
                "beta2": model.config.beta2,
                "eps": model.config.eps,
                "ridge_lambda": model.config.ridge_lambda,
                "activation": model.config.activation,
            },
        )
    else:
        raise ConfigError(f"unknown model type {type(model).__name__}")
    return base


def model_from_dict(d: dict):
    version = d.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(
            f"unsupported model format version {version!r} (expected {MODEL_FORMAT_VERSION})"
        )
    kind = d.get("kind")
    contract = tuple(d["feature_contract"])
    if kind == "linear":
        return LinearModel(
            weights=np.array(d["weights"], dtype=np.float64),
            intercept=float(d["intercept"]),
            feature_contract=contract,
            ridge_lambda=float(d.get("ridge_lambda", 0.0)),
            single_set=bool(d.get("single_set", False)),
        )
    if kind == "pls":
        return PlsModel(
            n_components=int(d["n_components"]),
            x_weights=np.array(d["x_weights"], dtype=np.float64),
            x_loadings=np.array(d["x_loadings"], dtype=np.float64),
            y_loadings=np.array(d["y_loadings"], dtype=np.float64),
            x_mean=np.array(d["x_mean"], dtype=np.float64),
            x_std=np.array(d["x_std"], dtype=np.float64),
            y_mean=float(d["y_mean"]),
            coef=np.array(d["coef"], dtype=np.float64),
            feature_contract=contract,
            cv_mse=tuple(float(v) for v in d.get("cv_mse", ())),
        )
    if kind == "mlp":
        cfg = FitConfig(**d["config"])
        return MlpModel(
            weights=[np.array(W, dtype=np.float64) for W in d["weights"]],
            biases=[np.array(b, dtype=np.float64) for b in d["biases"]],
            activation=d["activation"],
            x_mean=np.array(d["x_mean"], dtype=np.float64),
            x_std=np.array(d["x_std"], dtype=np.float64),
            feature_contract=contract,
            y_mean=float(d.get("y_mean", 0.0)),
            y_std=float(d.get("y_std", 1.0)),
            loss_history=tuple(float(v) for v in d.get("loss_history", ())),
            config=cfg,
        )
    raise DataError(f"unknown model kind {kind!r}")


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
