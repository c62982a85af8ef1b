"""Training loop for the regularized contrastive objective.

The loss is a sum of per-group InfoNCE terms (time-contrastive,
supervised-contrastive, or the hybrid superposition of both) plus a
lambda-weighted mean squared Frobenius norm of the per-sample encoder
Jacobian. Lambda follows a ramp schedule: zero during warmup, linear to
lambda_max over the ramp window, constant afterwards. Updates are Adam.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import encoder as enc_mod
from . import sampling
from .diffcore import Graph, Tensor

__all__ = [
    "TrainConfig",
    "TrainTrace",
    "similarity",
    "infonce",
    "lambda_schedule",
    "regularized_loss",
    "train",
    "goodness_of_fit",
]


@dataclass
class TrainConfig:
    mode: str = "hybrid"  # time | supervised | hybrid
    batch_size: int = 512
    negatives: int = 512
    steps: int = 4000
    lambda_max: float = 0.1
    ramp_start: int = 1000
    ramp_end: int = 2000
    learning_rate: float = 3e-4
    lr_decay: str = "none"  # or "cosine"
    similarity: str = "neg_sq_euclidean"  # or "dot"
    temperature: float = 1.0
    seed: int = 0
    hidden_width: int = 128
    partition: list = field(default_factory=lambda: [2, 2])
    output_scale: float = 1.1
    geometry: str = "box"
    reg_batch: int = 128  # sub-batch for the Jacobian regularizer
    log_every: int = 50
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.ramp_start < self.ramp_end <= self.steps):
            raise ValueError("need 0 <= ramp_start < ramp_end <= steps")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.mode not in sampling.MODES:
            raise ValueError(f"mode must be one of {sampling.MODES}")
        if self.lr_decay not in ("none", "cosine"):
            raise ValueError("lr_decay must be 'none' or 'cosine'")


@dataclass
class TrainTrace:
    steps: list = field(default_factory=list)
    infonce: list = field(default_factory=list)
    regularizer: list = field(default_factory=list)
    lam: list = field(default_factory=list)
    gof: list = field(default_factory=list)
    log_n: float = 0.0

    def append(self, step, loss_val, reg_val, lam):
        self.steps.append(int(step))
        self.infonce.append(float(loss_val))
        self.regularizer.append(float(reg_val))
        self.lam.append(float(lam))
        self.gof.append(self.log_n - float(loss_val))

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "infonce", "reg", "lambda", "gof"])
            for row in zip(self.steps, self.infonce, self.regularizer, self.lam, self.gof):
                w.writerow(row)


def similarity(kind: str, a: np.ndarray, b: np.ndarray, temperature: float = 1.0) -> float:
    """Reference (non-graph) similarity between two embedding vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("similarity arguments must share a shape")
    if kind == "neg_sq_euclidean":
        return -float(np.sum((a - b) ** 2)) / temperature
    if kind == "dot":
        an = a / np.linalg.norm(a)
        bn = b / np.linalg.norm(b)
        return float(an @ bn) / temperature
    raise ValueError(f"unknown similarity {kind!r}")


def infonce(psi_pos: np.ndarray, psi_neg: np.ndarray) -> float:
    """Reference (non-graph) InfoNCE: mean_b [-psi_pos_b + logsumexp_n psi_neg_bn]."""
    psi_pos = np.asarray(psi_pos, dtype=np.float64)
    psi_neg = np.asarray(psi_neg, dtype=np.float64)
    m = np.max(psi_neg, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(psi_neg - m), axis=1))
    return float(np.mean(lse - psi_pos))


def lambda_schedule(step: int, cfg: TrainConfig) -> float:
    if step < cfg.ramp_start:
        return 0.0
    if step >= cfg.ramp_end:
        return cfg.lambda_max
    frac = (step - cfg.ramp_start) / (cfg.ramp_end - cfg.ramp_start)
    return cfg.lambda_max * frac


# -- graph-side similarity blocks -------------------------------------------


def _slice_cols(z: Tensor, col_slice) -> Tensor:
    if col_slice is None:
        return z
    return z.slice(1, col_slice.start, col_slice.stop)


def _normalize_rows(z: Tensor) -> Tensor:
    inv = z.square().sum(axis=1).rsqrt()
    return z * inv.repeat(z.shape[1], axis=1)


def _psi_pos(kind, temperature, za: Tensor, zb: Tensor) -> Tensor:
    if kind == "neg_sq_euclidean":
        return (za - zb).square().sum(axis=1).scale(-1.0 / temperature)
    za, zb = _normalize_rows(za), _normalize_rows(zb)
    return (za * zb).sum(axis=1).scale(1.0 / temperature)


def _psi_neg(kind, temperature, za: Tensor, zn: Tensor) -> Tensor:
    B, N = za.shape[0], zn.shape[0]
    if kind == "neg_sq_euclidean":
        ra = za.square().sum(axis=1).repeat(N, axis=1)  # (B, N)
        rn = zn.square().sum(axis=1).repeat(B, axis=0)  # (B, N)
        cross = za @ zn.transpose()
        return (cross.scale(2.0) - ra - rn).scale(1.0 / temperature)
    za, zn = _normalize_rows(za), _normalize_rows(zn)
    return (za @ zn.transpose()).scale(1.0 / temperature)


def _infonce_graph(psi_pos: Tensor, psi_neg: Tensor) -> Tensor:
    B = psi_pos.shape[0]
    return (psi_neg.logsumexp_rows() - psi_pos).sum().scale(1.0 / B)


def _objectives(cfg: TrainConfig, enc) -> list:
    """(positive-kind, column slice) per InfoNCE term."""
    slices = enc.partition_slices()
    if cfg.mode == "time":
        return [("time", None)]
    if cfg.mode == "supervised":
        return [("supervised", None)]
    # hybrid: supervised positives on the observed (first) group,
    # time positives on the full embedding
    return [("supervised", slices[0]), ("time", None)]


def regularized_loss(
    graph: Graph,
    params: dict,
    enc,
    cfg: TrainConfig,
    x_data: np.ndarray,
    batch: sampling.Batch,
    lam: float,
):
    """Total loss tape node plus its InfoNCE / regularizer components."""
    z_ref, preacts = enc_mod.forward_graph(graph, params, enc, graph.leaf(x_data[batch.refs]))
    z_neg, _ = enc_mod.forward_graph(graph, params, enc, graph.leaf(x_data[batch.negatives]))
    z_pos = {}
    for kind in ("time", "supervised"):
        idx = batch.positives.get(kind)
        if idx is not None:
            z_pos[kind], _ = enc_mod.forward_graph(graph, params, enc, graph.leaf(x_data[idx]))

    info_terms = []
    for pos_kind, col_slice in _objectives(cfg, enc):
        za = _slice_cols(z_ref, col_slice)
        zb = _slice_cols(z_pos[pos_kind], col_slice)
        zn = _slice_cols(z_neg, col_slice)
        psi_p = _psi_pos(cfg.similarity, cfg.temperature, za, zb)
        psi_n = _psi_neg(cfg.similarity, cfg.temperature, za, zn)
        info_terms.append(_infonce_graph(psi_p, psi_n))
    info = info_terms[0]
    for term in info_terms[1:]:
        info = info + term

    reg = None
    if lam > 0.0:
        nb = min(cfg.reg_batch, preacts[0].shape[0])
        sub = tuple(a.slice(0, 0, nb) for a in preacts)
        reg = enc_mod.jacobian_frobenius_sq_graph(graph, params, enc, sub)
        total = info + reg.scale(lam)
    else:
        total = info
    return total, info, reg


class _Adam:
    def __init__(self, shapes, lr, betas, eps):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}

    def step(self, values: dict, grads: dict, lr_scale: float = 1.0) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        lr = self.lr * lr_scale
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            values[k] -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


def train(dataset, cfg: TrainConfig):
    """Fit an encoder on a dataset; returns (encoder, trace).

    ``dataset`` provides ``x`` (T, D) and optional labels ``c``; seeds fix
    the init, the sampling streams, and hence the entire run.
    """
    ds = sampling.IndexedDataset(x=np.asarray(dataset.x, dtype=np.float64), c=dataset.c)
    if cfg.mode in ("supervised", "hybrid") and ds.c is None:
        raise ValueError(f"mode {cfg.mode!r} requires labels in the dataset")
    partition = list(cfg.partition) if cfg.mode == "hybrid" else [int(sum(cfg.partition))]
    enc = enc_mod.init_encoder(
        seed=cfg.seed,
        input_dim=ds.x.shape[1],
        hidden_width=cfg.hidden_width,
        partition=partition,
        output_scale=cfg.output_scale,
        geometry=cfg.geometry,
    )
    values = {}
    for k, (W, b) in enumerate(enc.weights, start=1):
        values[f"W{k}"] = W
        values[f"b{k}"] = b
    opt = _Adam({k: v.shape for k, v in values.items()}, cfg.learning_rate, cfg.adam_betas, cfg.adam_eps)

    trace = TrainTrace(log_n=float(np.log(cfg.negatives)))
    step_seeds = np.random.SeedSequence(cfg.seed).generate_state(cfg.steps, dtype=np.uint64)

    for step in range(cfg.steps):
        batch = sampling.build_batch(
            ds, cfg.mode, cfg.batch_size, cfg.negatives, int(step_seeds[step])
        )
        lam = lambda_schedule(step, cfg)
        graph = Graph()
        params = {k: graph.leaf(v) for k, v in values.items()}
        total, info, reg = regularized_loss(graph, params, enc, cfg, ds.x, batch, lam)
        if not np.isfinite(total.data):
            raise FloatingPointError(f"non-finite loss at step {step}")
        grads = graph.backward(total)
        if cfg.lr_decay == "cosine":
            lr_scale = 0.5 * (1.0 + np.cos(np.pi * step / cfg.steps))
        else:
            lr_scale = 1.0
        opt.step(
            values,
            {k: grads[t.node_id] for k, t in params.items() if t.node_id in grads},
            lr_scale,
        )
        # encoder weights alias `values`; keep them in sync explicitly
        enc.weights = [(values[f"W{k}"], values[f"b{k}"]) for k in range(1, 5)]
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            trace.append(step, float(info.data), float(reg.data) if reg is not None else 0.0, lam)

    enc.steps_trained = cfg.steps
    return enc, trace


def goodness_of_fit(trace: TrainTrace) -> float:
    """log N minus the final InfoNCE value (KL lower-bound estimate)."""
    if not trace.infonce:
        raise ValueError("empty trace")
    return trace.log_n - trace.infonce[-1]
