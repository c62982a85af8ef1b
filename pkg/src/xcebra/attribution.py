"""Attribution estimators: encoder-gradient maps (plain and pseudo-inverted),
integrated gradients, feature ablation, and permutation-sampled Shapley
values, plus global aggregation and thresholding.

All maps use the (input_dim x latent_dim) orientation: entry (i, j) scores
input dimension i against latent dimension j. Gradient-based maps, which
arise naturally as (latent x input) Jacobians, are transposed once at
creation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import encoder as enc_mod

__all__ = [
    "LocalAttribution",
    "GlobalAttribution",
    "ATTRIBUTION_METHODS",
    "neuron_gradient",
    "inverted_neuron_gradient",
    "integrated_gradients",
    "feature_ablation",
    "shapley_sampled",
    "aggregate_global",
    "binarize",
    "zscore_threshold",
    "compute_local_maps",
    "compute_global_map",
]

ATTRIBUTION_METHODS = (
    "neuron_gradient",
    "inverted_neuron_gradient",
    "integrated_gradients",
    "feature_ablation",
    "shapley_zeros",
    "shapley_shuffle",
)


@dataclass
class LocalAttribution:
    scores: np.ndarray  # (D, d)
    method: str
    timestep: int | None = None
    rank: int | None = None  # Jacobian rank, for pseudo-inverse maps


@dataclass
class GlobalAttribution:
    scores: np.ndarray  # (D, d), aggregated absolute scores
    aggregation: str
    method: str
    binary: np.ndarray | None = None  # (D, d) uint8
    threshold: float | None = None
    n_timesteps: int = 0


def _embed(model, x: np.ndarray) -> np.ndarray:
    if hasattr(model, "embed"):
        return model.embed(x)
    return enc_mod.embed(model, x)


def _jacobian_batch(model, x: np.ndarray) -> np.ndarray:
    if hasattr(model, "jacobian_batch"):
        return model.jacobian_batch(x)
    return enc_mod.jacobian_batch(model, x)


def neuron_gradient(model, x: np.ndarray) -> LocalAttribution:
    """Raw encoder Jacobian at one sample, transposed to (D, d)."""
    J = _jacobian_batch(model, np.asarray(x, dtype=np.float64)[None, :])[0]
    return LocalAttribution(scores=J.T, method="neuron_gradient")


def _pinv_stack(J: np.ndarray, rank_tol: float):
    """Moore-Penrose pseudo-inverse for a stack of (d, D) Jacobians.

    Singular values below rank_tol * sigma_max are treated as exact zeros.
    Returns (stack of (D, d) pseudo-inverses, ranks).
    """
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    smax = s.max(axis=-1, keepdims=True)
    keep = s > rank_tol * np.maximum(smax, 1e-300)
    s_inv = np.where(keep, 1.0 / np.where(s == 0, 1.0, s), 0.0)
    pinv = np.einsum("...ji,...j,...kj->...ik", Vt, s_inv, U)
    return pinv, keep.sum(axis=-1)


def inverted_neuron_gradient(
    model, x: np.ndarray, rank_tol: float = 1e-6
) -> LocalAttribution:
    """Pseudo-inverse of the encoder Jacobian at one sample, shape (D, d)."""
    J = _jacobian_batch(model, np.asarray(x, dtype=np.float64)[None, :])
    pinv, ranks = _pinv_stack(J, rank_tol)
    return LocalAttribution(
        scores=pinv[0], method="inverted_neuron_gradient", rank=int(ranks[0])
    )


def integrated_gradients(
    model, x: np.ndarray, baseline: np.ndarray | None = None, steps: int = 64
) -> LocalAttribution:
    """Riemann-midpoint path integral of the Jacobian from baseline to x."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    x = np.asarray(x, dtype=np.float64)
    b = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    alphas = (np.arange(steps) + 0.5) / steps
    path = b[None, :] + alphas[:, None] * (x - b)[None, :]
    J_mean = _jacobian_batch(model, path).mean(axis=0)  # (d, D)
    scores = ((x - b)[None, :] * J_mean).T  # (D, d)
    return LocalAttribution(scores=scores, method="integrated_gradients")


def feature_ablation(
    model, x: np.ndarray, baseline: np.ndarray | None = None
) -> LocalAttribution:
    """score(i, j) = f_j(x) - f_j(x with coordinate i set to its baseline)."""
    x = np.asarray(x, dtype=np.float64)
    b = np.zeros_like(x) if baseline is None else np.asarray(baseline, dtype=np.float64)
    D = x.shape[0]
    ablated = np.tile(x, (D, 1))
    ablated[np.arange(D), np.arange(D)] = b
    f_x = _embed(model, x[None, :])[0]
    f_abl = _embed(model, ablated)
    return LocalAttribution(scores=f_x[None, :] - f_abl, method="feature_ablation")


def shapley_sampled(
    model,
    x: np.ndarray,
    baseline_mode: str = "zeros",
    permutations: int = 20,
    seed: int = 0,
    data: np.ndarray | None = None,
) -> LocalAttribution:
    """Permutation-sampling Shapley estimate for a single sample."""
    maps = _shapley_batch(
        model,
        np.asarray(x, dtype=np.float64)[None, :],
        baseline_mode=baseline_mode,
        permutations=permutations,
        seed=seed,
        data=data,
    )
    return LocalAttribution(scores=maps[0], method=f"shapley_{baseline_mode}")


def _shapley_batch(
    model, X, baseline_mode, permutations, seed, data=None
) -> np.ndarray:
    """Sampled Shapley maps for a batch of samples, shape (S, D, d).

    One feature order is drawn per permutation (shared across samples);
    shuffle baselines redraw a random timestep per (permutation, sample,
    feature).
    """
    if permutations < 1:
        raise ValueError("permutations must be >= 1")
    if baseline_mode not in ("zeros", "shuffle"):
        raise ValueError(f"unknown baseline mode {baseline_mode!r}")
    if baseline_mode == "shuffle" and data is None:
        raise ValueError("shuffle baseline needs the dataset to draw from")
    rng = np.random.default_rng(seed)
    X = np.asarray(X, dtype=np.float64)
    S, D = X.shape
    d = _embed(model, X[:1]).shape[1]
    total = np.zeros((S, D, d))
    for _ in range(permutations):
        order = rng.permutation(D)
        if baseline_mode == "zeros":
            base = np.zeros((S, D))
        else:
            t_idx = rng.integers(0, data.shape[0], size=(S, D))
            base = data[t_idx, np.arange(D)[None, :]]
        # coalition inputs: prefix k of `order` present, rest at baseline
        inputs = np.empty((S, D + 1, D))
        inputs[:, 0, :] = base
        for k in range(D):
            inputs[:, k + 1, :] = inputs[:, k, :]
            inputs[:, k + 1, order[k]] = X[:, order[k]]
        vals = _embed(model, inputs.reshape(S * (D + 1), D)).reshape(S, D + 1, d)
        contrib = vals[:, 1:, :] - vals[:, :-1, :]  # (S, D, d) in `order` order
        total[:, order, :] += contrib
    return total / permutations


def aggregate_global(local_maps, aggregation: str = "sum") -> GlobalAttribution:
    """Aggregate absolute local scores elementwise into a global map."""
    maps = np.asarray(
        [m.scores if isinstance(m, LocalAttribution) else m for m in local_maps]
    )
    if maps.ndim != 3 or maps.shape[0] == 0:
        raise ValueError("need at least one local map of identical shape")
    method = (
        local_maps[0].method if isinstance(local_maps[0], LocalAttribution) else "unknown"
    )
    a = np.abs(maps)
    if aggregation == "sum":
        scores = a.sum(axis=0)
    elif aggregation == "mean":
        scores = a.mean(axis=0)
    elif aggregation == "median":
        scores = np.median(a, axis=0)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    return GlobalAttribution(
        scores=scores, aggregation=aggregation, method=method, n_timesteps=maps.shape[0]
    )


def binarize(global_map: GlobalAttribution, eps: float) -> GlobalAttribution:
    global_map.binary = (global_map.scores > eps).astype(np.uint8)
    global_map.threshold = float(eps)
    return global_map


def zscore_threshold(global_map: GlobalAttribution) -> GlobalAttribution:
    """Standardize scores over the matrix and threshold at z = 0."""
    s = global_map.scores
    std = s.std()
    if std == 0:
        warnings.warn("constant score matrix; z-score threshold undefined")
        global_map.binary = np.zeros_like(s, dtype=np.uint8)
        global_map.threshold = float("nan")
        return global_map
    z = (s - s.mean()) / std
    global_map.binary = (z > 0).astype(np.uint8)
    global_map.threshold = float(s.mean())
    return global_map


def compute_local_maps(
    model,
    X: np.ndarray,
    method: str,
    rank_tol: float = 1e-6,
    ig_steps: int = 64,
    permutations: int = 20,
    seed: int = 0,
    data: np.ndarray | None = None,
) -> np.ndarray:
    """Local maps for a set of timesteps, shape (n, D, d)."""
    X = np.asarray(X, dtype=np.float64)
    if method == "neuron_gradient":
        return np.transpose(_jacobian_batch(model, X), (0, 2, 1))
    if method == "inverted_neuron_gradient":
        pinv, _ = _pinv_stack(_jacobian_batch(model, X), rank_tol)
        return pinv
    if method == "integrated_gradients":
        return np.asarray(
            [integrated_gradients(model, x, steps=ig_steps).scores for x in X]
        )
    if method == "feature_ablation":
        return np.asarray([feature_ablation(model, x).scores for x in X])
    if method in ("shapley_zeros", "shapley_shuffle"):
        mode = method.removeprefix("shapley_")
        return _shapley_batch(
            model, X, baseline_mode=mode, permutations=permutations, seed=seed, data=data
        )
    raise ValueError(f"unknown attribution method {method!r}")


def compute_global_map(
    model,
    data: np.ndarray,
    method: str,
    subsample: int | None = None,
    aggregation: str = "sum",
    seed: int = 0,
    **kwargs,
) -> GlobalAttribution:
    """Aggregate local maps across the dataset into one global map.

    Gradient methods default to all timesteps; the costlier perturbation
    methods default to a uniform subsample of 512.
    """
    data = np.asarray(data, dtype=np.float64)
    if subsample is None and method not in (
        "neuron_gradient",
        "inverted_neuron_gradient",
    ):
        subsample = 512
    if subsample is not None and subsample < data.shape[0]:
        idx = np.sort(
            np.random.default_rng(seed).choice(data.shape[0], subsample, replace=False)
        )
        X = data[idx]
    else:
        X = data
    maps = compute_local_maps(model, X, method, seed=seed, data=data, **kwargs)
    out = aggregate_global(maps, aggregation)
    out.method = method
    return out
