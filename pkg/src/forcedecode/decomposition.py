"""Whitening, PCA, and symmetric FastICA.

The same machinery serves two pipeline stages: artifact cleaning (decompose,
drop non-brain components, reconstruct) and task-component selection (keep the
components whose windowed band power tracks force). Both need reproducible
source identities, so fitting is fully deterministic given the seed and the
recovered sources are ordered by the variance of their back-projection.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericalError
from .signal_core import SignalMatrix

__all__ = [
    "PcaModel",
    "pca_fit",
    "pca_transform",
    "pca_inverse_transform",
    "Decomposition",
    "fastica",
    "apply_unmixing",
    "reconstruct",
]


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    """Orthonormal principal axes of a data matrix.

    components: [k, d] with orthonormal rows, sign-fixed so the
    largest-magnitude coordinate of each row is positive.
    explained_variance_ratio: non-increasing, sums to <= 1.
    mean: [d] column means removed before projection.
    scale: [d] column scales divided out before projection (correlation-mode
    PCA for mixed-unit features); None for plain covariance PCA.
    """

    components: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray
    scale: np.ndarray | None = None

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.components.shape[1]


def pca_fit(X: np.ndarray, variance_target: float = 0.95, standardize: bool = False) -> PcaModel:
    """Fit PCA keeping the fewest components reaching the variance target.

    variance_target must lie in (0, 1]; 1.0 keeps every component carrying
    any variance (k == d on full-rank data). standardize=True divides each
    column by its standard deviation first (correlation PCA), appropriate
    when columns carry different units.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2 or X.shape[1] < 1:
        raise DataError(f"PCA needs an [n >= 2, d >= 1] matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DataError("PCA input contains NaN or Inf")
    if not (0 < variance_target <= 1):
        raise ConfigError(f"variance_target must lie in (0, 1], got {variance_target}")

    mean = X.mean(axis=0)
    scale = None
    Xc = X - mean
    if standardize:
        scale = X.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        Xc = Xc / scale
    # SVD of the centred data; singular values give the variance spectrum.
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    var = s**2
    total = var.sum()
    if total <= 1e-12 * X.shape[0] * max(1.0, float(np.abs(Xc).max()) ** 2):
        raise DataError("rank-0 input: all rows identical, PCA undefined")
    ratio = var / total

    cum = np.cumsum(ratio)
    cum[-1] = max(cum[-1], 1.0)  # guard float round-off for target == 1.0
    k = int(np.searchsorted(cum, variance_target - 1e-12)) + 1

    components = vt[:k].copy()
    # Deterministic sign: largest-magnitude coordinate of each axis positive.
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return PcaModel(
        components=components, explained_variance_ratio=ratio[:k], mean=mean, scale=scale
    )


def pca_transform(model: PcaModel, X: np.ndarray) -> np.ndarray:
    """Project rows of X onto the retained axes: (X - mean) @ components.T."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise DataError(
            f"PCA model expects {model.n_features} features, got {X.shape[1]}"
        )
    Xc = X - model.mean
    if model.scale is not None:
        Xc = Xc / model.scale
    return Xc @ model.components.T


def pca_inverse_transform(model: PcaModel, T: np.ndarray) -> np.ndarray:
    """Back-project scores into the original space (exact on the retained subspace)."""
    T = np.atleast_2d(np.asarray(T, dtype=np.float64))
    if T.shape[1] != model.n_components:
        raise DataError(
            f"PCA model has {model.n_components} components, got {T.shape[1]} scores"
        )
    out = T @ model.components
    if model.scale is not None:
        out = out * model.scale
    return out + model.mean


# ---------------------------------------------------------------------------
# FastICA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Decomposition:
    """A fitted linear source decomposition of a SignalMatrix.

    sources == unmixing @ (data - mean[:, None]); with no components dropped,
    mixing @ sources + mean reconstructs the input. fs/channel_labels/t0 carry
    the signal metadata so reconstruction returns a full SignalMatrix.
    """

    mixing: np.ndarray      # [n_channels, n_components]
    unmixing: np.ndarray    # [n_components, n_channels]
    sources: np.ndarray     # [n_components, n_samples]
    mean: np.ndarray        # [n_channels]
    fs: float
    channel_labels: tuple[str, ...]
    t0: float = 0.0
    converged: bool = True
    n_iter: int = 0

    @property
    def n_components(self) -> int:
        return self.unmixing.shape[0]

    @property
    def n_channels(self) -> int:
        return self.unmixing.shape[1]


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    # W <- (W W^T)^(-1/2) W via eigendecomposition of the symmetric product.
    s, u = np.linalg.eigh(W @ W.T)
    if s[0] <= 1e-14 * s[-1]:
        raise NumericalError("degenerate unmixing estimate during decorrelation")
    return (u / np.sqrt(s)) @ u.T @ W


def fastica(
    sig: SignalMatrix,
    n_components: int | None = None,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-5,
) -> Decomposition:
    """Symmetric FastICA with the log-cosh contrast on whitened data.

    Deterministic given the seed. Converges when the largest rotation of any
    unmixing row falls below tol; otherwise stops at max_iter with a warning
    (converged=False on the result). Sources are ordered by descending
    variance of their back-projection and sign-fixed so the largest-magnitude
    mixing weight of each component is positive.
    """
    X = sig.data
    n_ch, n_samp = X.shape
    if n_components is None:
        n_components = n_ch
    if not (1 <= n_components <= n_ch):
        raise ConfigError(
            f"n_components must lie in [1, {n_ch}], got {n_components}"
        )
    if n_samp < 10 * n_ch:
        warnings.warn(
            f"only {n_samp} samples for {n_ch} channels; "
            "recommend >= 10 samples per channel for a stable fit",
            RuntimeWarning,
            stacklevel=2,
        )

    mean = X.mean(axis=1)
    Xc = X - mean[:, None]

    # Whiten: project onto the top-n_components eigenvectors of the covariance.
    cov = (Xc @ Xc.T) / n_samp
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[n_components - 1] <= 1e-12 * max(evals[0], 1e-30):
        raise NumericalError(
            "whitening failed: covariance is singular at the requested rank"
        )
    K = (evecs[:, :n_components] / np.sqrt(evals[:n_components])).T
    Z = K @ Xc  # cov(Z) == I

    rng = np.random.default_rng(seed)
    W = _sym_decorrelate(rng.standard_normal((n_components, n_components)))

    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        G = np.tanh(W @ Z)
        g_prime = 1.0 - G**2
        W_new = (G @ Z.T) / n_samp - np.diag(g_prime.mean(axis=1)) @ W
        W_new = _sym_decorrelate(W_new)
        # Rotation of each row: |<w_new, w_old>| -> 1 at convergence.
        delta = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0)))
        W = W_new
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"FastICA did not converge in {max_iter} iterations (last delta {delta:.2e})",
            RuntimeWarning,
            stacklevel=2,
        )

    unmixing = W @ K
    sources = unmixing @ Xc
    mixing = np.linalg.pinv(unmixing)

    # Stable ordering: descending power of each component's back-projection.
    proj_power = (mixing**2).sum(axis=0) * sources.var(axis=1)
    order = np.argsort(proj_power)[::-1]
    mixing = mixing[:, order]
    unmixing = unmixing[order]
    sources = sources[order]

    # Deterministic sign: dominant mixing weight of each component positive.
    for j in range(n_components):
        i = int(np.argmax(np.abs(mixing[:, j])))
        if mixing[i, j] < 0:
            mixing[:, j] *= -1.0
            unmixing[j] *= -1.0
            sources[j] *= -1.0

    return Decomposition(
        mixing=mixing,
        unmixing=unmixing,
        sources=sources,
        mean=mean,
        fs=sig.fs,
        channel_labels=sig.channel_labels,
        t0=sig.t0,
        converged=converged,
        n_iter=it,
    )


def apply_unmixing(dec: Decomposition, sig: SignalMatrix) -> np.ndarray:
    """Sources of a new recording under an already-fitted unmixing."""
    if sig.n_channels != dec.n_channels:
        raise DataError(
            f"decomposition was fitted on {dec.n_channels} channels, "
            f"got {sig.n_channels}"
        )
    return dec.unmixing @ (sig.data - dec.mean[:, None])


def reconstruct(
    dec: Decomposition,
    keep,
    sources: np.ndarray | None = None,
    t0: float | None = None,
) -> SignalMatrix:
    """Back-project the kept components: mixing[:, keep] @ sources[keep] + mean.

    Pass sources to reconstruct a different recording under the same fit
    (e.g. sources from apply_unmixing).
    """
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ConfigError("empty component set: nothing to reconstruct")
    if keep[0] < 0 or keep[-1] >= dec.n_components:
        raise ConfigError(
            f"component indices {keep} outside [0, {dec.n_components - 1}]"
        )
    S = dec.sources if sources is None else np.asarray(sources, dtype=np.float64)
    if S.shape[0] != dec.n_components:
        raise DataError(
            f"sources have {S.shape[0]} rows, decomposition has {dec.n_components}"
        )
    data = dec.mixing[:, keep] @ S[keep] + dec.mean[:, None]
    return SignalMatrix(
        data, dec.fs, dec.channel_labels, dec.t0 if t0 is None else t0
    )
