"""Scoring and identifiability diagnostics: auROC against the ground-truth
connectivity, linear decoding R^2, blockwise alignment, collapse detection,
bootstrap confidence intervals, and consistency-based dimensionality
selection.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.stats import rankdata

__all__ = [
    "RocCurve",
    "AlignmentResult",
    "auroc",
    "linear_decode_r2",
    "affine_alignment_r2",
    "block_alignment",
    "collapse_score",
    "bootstrap_ci",
    "dimensionality_scan",
]


@dataclass
class RocCurve:
    thresholds: np.ndarray
    tpr: np.ndarray
    fpr: np.ndarray
    auroc: float


@dataclass
class AlignmentResult:
    within_r2: list  # per-block R^2, embedding slice i -> latent block i
    leakage_r2: np.ndarray  # (G, G), off-diagonal cross-block fits
    maps: list = field(default_factory=list)  # fitted (A, b) per block


def auroc(scores: np.ndarray, gt: np.ndarray) -> RocCurve:
    """ROC against a binary ground truth.

    The area is the Mann-Whitney rank statistic with midranks, which is the
    tie-correct equivalent of sweeping every threshold with the trapezoid
    rule.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(gt).ravel().astype(bool)
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ground truth must contain both classes")
    ranks = rankdata(s)
    area = (ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    # explicit curve over unique score thresholds (descending)
    order = np.argsort(-s, kind="stable")
    y_sorted = y[order]
    tps = np.cumsum(y_sorted)
    fps = np.cumsum(~y_sorted)
    distinct = np.r_[np.nonzero(np.diff(s[order]))[0], len(s) - 1]
    tpr = np.r_[0.0, tps[distinct] / n_pos]
    fpr = np.r_[0.0, fps[distinct] / n_neg]
    thresholds = np.r_[np.inf, s[order][distinct]]
    return RocCurve(thresholds=thresholds, tpr=tpr, fpr=fpr, auroc=float(area))


def _ols_fit(X: np.ndarray, Y: np.ndarray):
    """Least-squares affine fit Y ~ X @ A + b; ridge fallback if degenerate."""
    Xd = np.column_stack([X, np.ones(len(X))])
    coef, _, rank, _ = np.linalg.lstsq(Xd, Y, rcond=None)
    if rank < Xd.shape[1]:
        warnings.warn("rank-deficient design; using ridge regularization")
        G = Xd.T @ Xd + 1e-8 * np.eye(Xd.shape[1])
        coef = np.linalg.solve(G, Xd.T @ Y)
    return coef[:-1], coef[-1]


def _r2(Y: np.ndarray, Y_hat: np.ndarray) -> float:
    """Total-variance-weighted R^2 across output dimensions."""
    ss_res = float(np.sum((Y - Y_hat) ** 2))
    ss_tot = float(np.sum((Y - Y.mean(axis=0)) ** 2))
    if ss_tot == 0.0:
        warnings.warn("constant target; R^2 undefined, returning 0")
        return 0.0
    return 1.0 - ss_res / ss_tot


def linear_decode_r2(embedding: np.ndarray, c: np.ndarray) -> float:
    """R^2 of predicting labels from the embedding by OLS with intercept."""
    embedding = np.asarray(embedding, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if c.ndim == 1:
        c = c[:, None]
    if embedding.shape[0] <= embedding.shape[1] + 1:
        raise ValueError("need more samples than embedding dims")
    A, b = _ols_fit(embedding, c)
    return _r2(c, embedding @ A + b)


def affine_alignment_r2(emb_a: np.ndarray, emb_b: np.ndarray) -> float:
    """R^2 of the best affine map from one embedding onto another."""
    emb_a = np.asarray(emb_a, dtype=np.float64)
    emb_b = np.asarray(emb_b, dtype=np.float64)
    if emb_a.shape[0] != emb_b.shape[0]:
        raise ValueError("embeddings must share the sample axis")
    if np.allclose(emb_a.std(axis=0), 0) or np.allclose(emb_b.std(axis=0), 0):
        warnings.warn("constant embedding (collapse); alignment undefined")
        return 0.0
    A, b = _ols_fit(emb_a, emb_b)
    return _r2(emb_b, emb_a @ A + b)


def _block_slices(partition):
    bounds = np.cumsum([0] + [int(p) for p in partition])
    return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def block_alignment(
    embedding: np.ndarray, z_gt: np.ndarray, partition, emb_partition=None
) -> AlignmentResult:
    """Within-block fit quality and cross-block leakage.

    Fits an affine map from each embedding slice to each ground-truth latent
    block; the diagonal should carry all the predictive power.
    """
    embedding = np.asarray(embedding, dtype=np.float64)
    z_gt = np.asarray(z_gt, dtype=np.float64)
    z_slices = _block_slices(partition)
    e_slices = _block_slices(emb_partition if emb_partition is not None else partition)
    if len(z_slices) != len(e_slices):
        raise ValueError("embedding and latent partitions must have equal group counts")
    G = len(z_slices)
    r2 = np.zeros((G, G))
    maps = []
    for i, esl in enumerate(e_slices):
        for j, zsl in enumerate(z_slices):
            A, b = _ols_fit(embedding[:, esl], z_gt[:, zsl])
            r2[i, j] = _r2(z_gt[:, zsl], embedding[:, esl] @ A + b)
            if i == j:
                maps.append((A, b))
    return AlignmentResult(
        within_r2=list(np.diag(r2)),
        leakage_r2=r2 - np.diag(np.diag(r2)),
        maps=maps,
    )


def collapse_score(embedding: np.ndarray, output_scale: float = 1.0) -> float:
    """Mean per-dimension variance, normalized by the output scale squared."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape[0] < 2:
        raise ValueError("need at least two samples")
    return float(np.mean(np.var(embedding, axis=0)) / output_scale**2)


def bootstrap_ci(values, n_resamples: int = 1000, level: float = 0.95, seed: int = 0):
    """Percentile bootstrap CI for the mean."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(n_resamples, values.size))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def dimensionality_scan(
    dataset,
    dims_grid,
    seeds,
    mode: str = "time",
    base_config=None,
    eval_samples: int = 2000,
):
    """Consistency (mean pairwise affine-alignment R^2 across seeds) per
    candidate embedding dimensionality."""
    from . import encoder as enc_mod
    from .trainer import TrainConfig, train

    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds per dimensionality")
    rng = np.random.default_rng(0)
    T = dataset.x.shape[0]
    eval_idx = np.sort(rng.choice(T, size=min(eval_samples, T), replace=False))
    consistency = {}
    for dim in dims_grid:
        partition = list(dim) if isinstance(dim, (tuple, list)) else [int(dim)]
        embeddings = []
        for seed in seeds:
            kwargs = dict(vars(base_config)) if base_config is not None else {}
            kwargs.update(mode=mode, partition=partition, seed=int(seed))
            kwargs.pop("adam_betas", None)
            cfg = TrainConfig(**kwargs) if base_config is None else TrainConfig(
                **{**kwargs, "adam_betas": base_config.adam_betas}
            )
            enc, _ = train(dataset, cfg)
            embeddings.append(enc_mod.embed(enc, dataset.x[eval_idx]))
        pair_r2 = [
            0.5
            * (
                affine_alignment_r2(embeddings[i], embeddings[j])
                + affine_alignment_r2(embeddings[j], embeddings[i])
            )
            for i, j in combinations(range(len(embeddings)), 2)
        ]
        key = tuple(partition) if len(partition) > 1 else partition[0]
        consistency[key] = float(np.mean(pair_r2))
    return consistency
