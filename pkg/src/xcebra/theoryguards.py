"""Executable claim suites: the collapse result for uninformative labels,
identifiability of the ground-truth zero pattern (including the exact linear
special case), and invariance of binarized attribution maps under
block-diagonal output transforms. Each check returns a Verdict and the suite
can be serialized to claims.json.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import attribution as att
from . import encoder as enc_mod
from . import evaluation as ev
from . import synthgen
from .trainer import TrainConfig, train

__all__ = [
    "Verdict",
    "LinearEncoder",
    "closed_form_linear_encoder",
    "check_theorem1",
    "check_theorem2",
    "check_theorem2_linear",
    "check_def2_invariance",
    "run_claim_suite",
]


@dataclass
class Verdict:
    claim: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    detail: str = ""
    seed: int = 0
    seconds: float = 0.0


@dataclass
class LinearEncoder:
    """Closed-form linear model f(x) = W x, duck-typed like an MLP encoder."""

    W: np.ndarray  # (d, D)

    def embed(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.W.T

    def jacobian_batch(self, X: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.W, (X.shape[0],) + self.W.shape).copy()


def _rebuild_mixing(meta: dict) -> synthgen.MixingFunction:
    """Reconstruct the generator's mixing function from dataset metadata."""
    partition = meta["partition"]
    groups = synthgen.group_index_sets(partition)
    d = sum(partition)
    partition_inputs = [list(groups[0]), list(np.arange(d))]
    return synthgen.build_mixing(
        partition_inputs,
        meta["block_out_dims"],
        seed=meta["seed"] + 1,
        latent_dim=d,
        linear=meta["linear"],
    )


def closed_form_linear_encoder(dataset, seed: int = 0) -> LinearEncoder:
    """Optimal-up-to-indeterminacy encoder for a linear mixing x = M z.

    Returns f(x) = L M^+ x with a random invertible block-diagonal L, so the
    encoder's Jacobian pseudo-inverse M L^{-1} carries the exact zero pattern
    of M.
    """
    if not dataset.meta.get("linear", False):
        raise ValueError("closed-form encoder requires a linear-mixing dataset")
    mixing = _rebuild_mixing(dataset.meta)
    M = synthgen.mixing_jacobian(mixing, np.zeros(mixing.latent_dim))
    rng = np.random.default_rng(seed)
    L = np.zeros((mixing.latent_dim, mixing.latent_dim))
    start = 0
    for p in dataset.meta["partition"]:
        L[start : start + p, start : start + p] = _invertible(rng, p)
        start += p
    return LinearEncoder(W=L @ np.linalg.pinv(M))


def _invertible(rng, k: int, min_sv: float = 0.3) -> np.ndarray:
    B = rng.normal(size=(k, k))
    u, s, vt = np.linalg.svd(B)
    return u @ np.diag(np.clip(s, min_sv, None)) @ vt


def _shuffle_labels(c: np.ndarray, seed: int) -> np.ndarray:
    """Independently permute each label column, destroying all structure."""
    rng = np.random.default_rng(seed)
    out = c.copy()
    for j in range(out.shape[1]):
        out[:, j] = out[rng.permutation(len(out)), j]
    return out


def check_theorem1(
    seed: int = 0, T: int = 10000, steps: int = 800, tol: float = 0.05
) -> Verdict:
    """Uninformative labels force the trivial constant solution.

    Trains supervised-contrastive on independently shuffled labels and
    asserts the final loss sits at log N with a collapsed embedding; a
    matching informative run must end well below log N (negative control).
    """
    t0 = time.time()
    ds = synthgen.make_dataset(T=T, partition=[2, 2], observed_factors=[0, 1], seed=seed)
    cfg = TrainConfig(
        mode="supervised",
        batch_size=256,
        negatives=512,
        steps=steps,
        ramp_start=max(1, steps // 8),
        ramp_end=max(2, steps // 4),
        seed=seed,
        partition=[2, 2],
    )
    shuffled = synthgen.Dataset(
        x=ds.x, c=_shuffle_labels(ds.c, seed + 1), z=ds.z, gt_map=ds.gt_map, meta=ds.meta
    )
    enc_s, trace_s = train(shuffled, cfg)
    emb_s = enc_mod.embed(enc_s, ds.x[:: max(1, T // 2000)])
    collapse = ev.collapse_score(emb_s, output_scale=cfg.output_scale)
    gap_shuffled = abs(trace_s.infonce[-1] - trace_s.log_n)

    enc_i, trace_i = train(ds, cfg)
    gap_informative = trace_i.log_n - trace_i.infonce[-1]

    passed = gap_shuffled < tol and collapse < 0.01 and gap_informative >= 1.0
    return Verdict(
        claim="theorem1_collapse",
        passed=bool(passed),
        metrics={
            "final_infonce_shuffled": trace_s.infonce[-1],
            "log_n": trace_s.log_n,
            "gap_shuffled": gap_shuffled,
            "collapse_score": collapse,
            "gof_informative": gap_informative,
        },
        detail=(
            "shuffled labels converge to log N with a collapsed embedding; "
            "informative labels stay >= 1.0 below log N"
        ),
        seed=seed,
        seconds=time.time() - t0,
    )


def check_theorem2(
    seed: int = 0,
    T: int = 20000,
    steps: int = 4000,
    auroc_tol: float = 0.9,
) -> Verdict:
    """End-to-end zero-pattern identification on nonlinear synthetic data.

    Hybrid-contrastive, regularized training followed by the median-aggregated
    inverted neuron-gradient map must recover the ground-truth connectivity.
    Blockwise linear alignment with the true latents is reported as a metric
    only: the finite-budget encoder matches the latents nonlinearly, so the
    linear R2 understates it and gating on it would measure optimization
    budget, not the claim.
    """
    t0 = time.time()
    ds = synthgen.make_dataset(T=T, partition=[2, 2], observed_factors=[0], seed=seed)
    cfg = TrainConfig(
        mode="hybrid",
        steps=steps,
        batch_size=256,
        negatives=512,
        learning_rate=1e-3,
        temperature=0.01,
        lambda_max=0.3,
        ramp_start=min(1000, steps // 4),
        ramp_end=min(2000, steps // 2),
        seed=seed,
        partition=[2, 2],
    )
    enc, trace = train(ds, cfg)
    gmap = att.compute_global_map(
        enc, ds.x, "inverted_neuron_gradient", aggregation="median"
    )
    roc = ev.auroc(gmap.scores, ds.gt_map)
    sub = slice(None, None, max(1, T // 4000))
    emb = enc_mod.embed(enc, ds.x[sub])
    align = ev.block_alignment(emb, ds.z[sub], ds.meta["partition"])
    within = float(min(align.within_r2))
    passed = roc.auroc >= auroc_tol
    return Verdict(
        claim="theorem2_identification",
        passed=bool(passed),
        metrics={
            "auroc": roc.auroc,
            "min_within_block_r2": within,
            "gof": trace.gof[-1],
        },
        detail="hybrid + regularized + inverted neuron gradient recovers the zero pattern",
        seed=seed,
        seconds=time.time() - t0,
    )


def check_theorem2_linear(seed: int = 0, T: int = 2000) -> Verdict:
    """Exact special case: with linear mixing, the binarized inverted-gradient
    map equals the ground truth exactly and auROC is exactly 1."""
    t0 = time.time()
    ds = synthgen.make_dataset(
        T=T, partition=[2, 2], observed_factors=[0], seed=seed, linear=True
    )
    model = closed_form_linear_encoder(ds, seed=seed)
    gmap = att.compute_global_map(model, ds.x, "inverted_neuron_gradient")
    gmap = att.binarize(gmap, eps=1e-8 * np.abs(gmap.scores).max())
    exact = bool(np.array_equal(gmap.binary, ds.gt_map))
    roc = ev.auroc(gmap.scores, ds.gt_map)
    passed = exact and roc.auroc == 1.0
    return Verdict(
        claim="theorem2_linear_exact",
        passed=bool(passed),
        metrics={"auroc": roc.auroc, "binary_equal": exact},
        detail="linear mixing: pseudo-inverse map matches ground truth with zero tolerance",
        seed=seed,
        seconds=time.time() - t0,
    )


def check_def2_invariance(seed: int = 0, T: int = 2000) -> Verdict:
    """Binarized attribution maps are invariant under invertible
    block-diagonal output transforms, and not under dense ones.

    Uses the closed-form linear pipeline, where the zero pattern is exact:
    composing the encoder with block-diagonal B leaves the binarized
    pseudo-inverse map unchanged; a dense random transform destroys it
    (negative control).
    """
    t0 = time.time()
    ds = synthgen.make_dataset(
        T=T, partition=[2, 2], observed_factors=[0], seed=seed, linear=True
    )
    base = closed_form_linear_encoder(ds, seed=seed)
    rng = np.random.default_rng(seed + 7)
    d = base.W.shape[0]

    def binary_map(model):
        g = att.compute_global_map(model, ds.x, "inverted_neuron_gradient")
        return att.binarize(g, eps=1e-8 * np.abs(g.scores).max()).binary

    ref = binary_map(base)
    identity_ok = bool(np.array_equal(binary_map(LinearEncoder(W=base.W.copy())), ref))

    B = np.zeros((d, d))
    start = 0
    for p in ds.meta["partition"]:
        B[start : start + p, start : start + p] = _invertible(rng, p)
        start += p
    block_ok = bool(np.array_equal(binary_map(LinearEncoder(W=B @ base.W)), ref))

    dense = _invertible(rng, d)
    dense_changed = not np.array_equal(binary_map(LinearEncoder(W=dense @ base.W)), ref)

    passed = identity_ok and block_ok and dense_changed
    return Verdict(
        claim="def2_block_diagonal_invariance",
        passed=bool(passed),
        metrics={
            "identity_invariant": identity_ok,
            "block_diagonal_invariant": block_ok,
            "dense_transform_changes_pattern": bool(dense_changed),
        },
        detail="zero pattern invariant to block-diagonal transforms only",
        seed=seed,
        seconds=time.time() - t0,
    )


def run_claim_suite(seed: int = 0, out_path=None, fast: bool = False) -> list:
    """Run every claim check; optionally write claims.json."""
    checks = [
        check_theorem1(seed) if not fast else check_theorem1(seed, T=4000, steps=400),
        check_theorem2(seed) if not fast else check_theorem2(seed, T=8000, steps=800),
        check_theorem2_linear(seed),
        check_def2_invariance(seed),
    ]
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(json.dumps([asdict(v) for v in checks], indent=2))
    return checks
