"""Positive / negative pair construction for the contrastive objectives.

Three positive schemes:
  * time: the next timestep, (t, t+1);
  * supervised: draw an empirical label delta and pick the timestep whose
    label best matches c[t] + delta (exact argmin, linear scan);
  * hybrid: supervised positives for the first (observed) group plus time
    positives for the full embedding.

Negatives are uniform over the dataset, shared across the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["IndexedDataset", "Batch", "build_batch"]

MODES = ("time", "supervised", "hybrid")


@dataclass
class IndexedDataset:
    x: np.ndarray  # (T, D)
    c: np.ndarray | None = None  # (T, k)
    deltas: np.ndarray | None = None  # (T-1, k), label increments

    def __post_init__(self):
        if self.c is not None:
            self.c = np.asarray(self.c, dtype=np.float64)
            if self.c.ndim == 1:
                self.c = self.c[:, None]
            if self.deltas is None:
                self.deltas = np.diff(self.c, axis=0)

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]


@dataclass
class Batch:
    refs: np.ndarray  # (B,)
    positives: dict  # {"time": (B,) or None, "supervised": (B,) or None}
    negatives: np.ndarray  # (N,)
    mode: str


def sample_time_positive(t: int, T: int) -> int:
    if t >= T - 1:
        raise IndexError("reference at series end has no time positive")
    return t + 1


def supervised_positives(
    ds: IndexedDataset, refs: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Exact argmin_t' || c[t'] - c[ref] - delta_tau ||, one tau per reference.

    Ties resolve to the smallest index (np.argmin convention).
    """
    if ds.c is None:
        raise ValueError("supervised sampling requires labels")
    taus = rng.integers(0, len(ds.deltas), size=len(refs))
    targets = ds.c[refs] + ds.deltas[taus]  # (B, k)
    out = np.empty(len(refs), dtype=np.int64)
    c_sq = np.sum(ds.c * ds.c, axis=1)  # (T,)
    chunk = max(1, int(4e7 // max(ds.n_samples, 1)))
    for lo in range(0, len(refs), chunk):
        t = targets[lo : lo + chunk]  # (b, k)
        # ||c - t||^2 up to the constant ||t||^2, BLAS-friendly
        d2 = c_sq[None, :] - 2.0 * (t @ ds.c.T)
        out[lo : lo + chunk] = np.argmin(d2, axis=1)
    return out


def sample_supervised_positive(ds: IndexedDataset, t: int, seed: int) -> int:
    rng = np.random.default_rng(seed)
    return int(supervised_positives(ds, np.array([t]), rng)[0])


def sample_negatives(T: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform with replacement over the full dataset (marginal q)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    return rng.integers(0, T, size=N)


def build_batch(
    ds: IndexedDataset, mode: str, B: int, N: int, seed: int
) -> Batch:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode in ("supervised", "hybrid") and ds.c is None:
        raise ValueError(f"mode {mode!r} requires labels")
    rng = np.random.default_rng(seed)
    T = ds.n_samples
    # references < T-1 so the time positive always exists
    refs = rng.integers(0, T - 1, size=B)
    positives: dict = {"time": None, "supervised": None}
    if mode in ("time", "hybrid"):
        positives["time"] = refs + 1
    if mode in ("supervised", "hybrid"):
        positives["supervised"] = supervised_positives(ds, refs, rng)
    negatives = sample_negatives(T, N, rng)
    return Batch(refs=refs, positives=positives, negatives=negatives, mode=mode)
