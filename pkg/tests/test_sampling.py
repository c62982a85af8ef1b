import numpy as np
import pytest
from scipy import stats

from xcebra import sampling

rng = np.random.default_rng(3)


def _ds(T=500, k=2):
    c = np.cumsum(rng.normal(scale=0.05, size=(T, k)), axis=0)
    x = rng.normal(size=(T, 8))
    return sampling.IndexedDataset(x=x, c=c)


def test_deltas_are_label_increments():
    ds = _ds()
    assert np.allclose(ds.deltas, np.diff(ds.c, axis=0))


def test_time_positive_is_next_step():
    assert sampling.sample_time_positive(3, 10) == 4
    with pytest.raises(IndexError):
        sampling.sample_time_positive(9, 10)


def test_supervised_positive_is_distance_optimal():
    ds = _ds()
    refs = rng.integers(0, ds.n_samples, size=64)
    gen = np.random.default_rng(0)
    taus = np.random.default_rng(0).integers(0, len(ds.deltas), size=len(refs))
    chosen = sampling.supervised_positives(ds, refs, gen)
    targets = ds.c[refs] + ds.deltas[taus]
    # chosen index achieves the minimum distance (up to fp tie slack)
    d_all = np.linalg.norm(ds.c[None, :, :] - targets[:, None, :], axis=2)
    d_chosen = np.linalg.norm(ds.c[chosen] - targets, axis=1)
    assert np.all(d_chosen <= d_all.min(axis=1) + 1e-9)


def test_supervised_requires_labels():
    ds = sampling.IndexedDataset(x=rng.normal(size=(50, 4)))
    with pytest.raises(ValueError):
        sampling.supervised_positives(ds, np.array([0]), np.random.default_rng(0))
    with pytest.raises(ValueError):
        sampling.build_batch(ds, "supervised", 8, 8, 0)


def test_negatives_uniform_chi2():
    T, N = 20, 40000
    neg = sampling.sample_negatives(T, N, np.random.default_rng(1))
    counts = np.bincount(neg, minlength=T)
    p = stats.chisquare(counts).pvalue
    assert p > 1e-3
    with pytest.raises(ValueError):
        sampling.sample_negatives(T, 0, np.random.default_rng(1))


def test_build_batch_modes_and_determinism():
    ds = _ds()
    for mode in sampling.MODES:
        b = sampling.build_batch(ds, mode, B=32, N=64, seed=7)
        assert b.refs.shape == (32,)
        assert b.negatives.shape == (64,)
        assert np.all(b.refs < ds.n_samples - 1)
        if mode in ("time", "hybrid"):
            assert np.array_equal(b.positives["time"], b.refs + 1)
        else:
            assert b.positives["time"] is None
        if mode in ("supervised", "hybrid"):
            assert b.positives["supervised"].shape == (32,)
        b2 = sampling.build_batch(ds, mode, B=32, N=64, seed=7)
        assert np.array_equal(b.refs, b2.refs)
        assert np.array_equal(b.negatives, b2.negatives)
    with pytest.raises(ValueError):
        sampling.build_batch(ds, "contrastive", 8, 8, 0)


def test_single_sample_helper_matches_batch_contract():
    ds = _ds()
    t = sampling.sample_supervised_positive(ds, 10, seed=5)
    assert 0 <= t < ds.n_samples
