"""Partitioned MLP feature encoder and its analytic per-sample Jacobian.

The encoder is a 3-hidden-layer GELU MLP with a scaled-tanh output layer.
The output space is split into contiguous partitions (one per latent factor
group). The Jacobian is assembled analytically as the product of per-layer
Jacobians, using the first-derivative primitives of :mod:`xcebra.diffcore`,
so the Frobenius regularizer stays a first-order quantity.

Weight matrices are stored as (out_dim, in_dim); forward passes act on
batches of row vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore
from .diffcore import Graph, Tensor

__all__ = [
    "MlpEncoder",
    "init_encoder",
    "embed",
    "jacobian",
    "jacobian_batch",
    "jacobian_frobenius_sq",
    "leaf_params",
    "forward_graph",
    "jacobian_frobenius_sq_graph",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class MlpEncoder:
    weights: list  # [(W1, b1), ..., (W4, b4)], W as (out, in)
    input_dim: int
    hidden_width: int
    partition: list
    output_scale: float
    geometry: list = field(default_factory=list)  # "box" or "sphere" per partition
    seed: int = 0
    steps_trained: int = 0

    @property
    def output_dim(self) -> int:
        return int(sum(self.partition))

    def partition_slices(self):
        bounds = np.cumsum([0] + list(self.partition))
        return [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]


def init_encoder(
    seed: int,
    input_dim: int,
    hidden_width: int,
    partition,
    output_scale: float = 1.1,
    geometry="box",
) -> MlpEncoder:
    """Fan-in-scaled Gaussian weights (std = sqrt(2/fan_in)), zero biases."""
    partition = [int(p) for p in partition]
    if not partition:
        raise ValueError("partition must be non-empty")
    if input_dim <= 0:
        raise ValueError("input_dim must be positive")
    if isinstance(geometry, str):
        geometry = [geometry] * len(partition)
    if len(geometry) != len(partition):
        raise ValueError("one geometry entry per partition required")
    d = sum(partition)
    rng = np.random.default_rng(seed)
    dims = [input_dim, hidden_width, hidden_width, hidden_width, d]
    weights = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
        b = np.zeros(fan_out)
        weights.append((W, b))
    return MlpEncoder(
        weights=weights,
        input_dim=input_dim,
        hidden_width=hidden_width,
        partition=partition,
        output_scale=float(output_scale),
        geometry=list(geometry),
        seed=seed,
    )


def _preactivations(enc: MlpEncoder, x: np.ndarray):
    (W1, b1), (W2, b2), (W3, b3), (W4, b4) = enc.weights
    a1 = x @ W1.T + b1
    h1 = diffcore.gelu(a1)
    a2 = h1 @ W2.T + b2
    h2 = diffcore.gelu(a2)
    a3 = h2 @ W3.T + b3
    h3 = diffcore.gelu(a3)
    a4 = h3 @ W4.T + b4
    return a1, a2, a3, a4


def embed(enc: MlpEncoder, x: np.ndarray) -> np.ndarray:
    """Encode a batch of input rows; sphere partitions are unit-normalized."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != enc.input_dim:
        raise ValueError(f"expected width {enc.input_dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    *_, a4 = _preactivations(enc, x)
    z = enc.output_scale * np.tanh(a4)
    for sl, geom in zip(enc.partition_slices(), enc.geometry):
        if geom == "sphere":
            norms = np.linalg.norm(z[:, sl], axis=1, keepdims=True)
            z[:, sl] = z[:, sl] / np.maximum(norms, 1e-12)
    return z[0] if squeeze else z


def jacobian_batch(enc: MlpEncoder, x: np.ndarray) -> np.ndarray:
    """Analytic per-sample Jacobians, shape (B, d, D)."""
    if any(g == "sphere" for g in enc.geometry):
        raise NotImplementedError("analytic Jacobian is implemented for box geometry")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    (W1, _), (W2, _), (W3, _), (W4, _) = enc.weights
    a1, a2, a3, a4 = _preactivations(enc, x)
    t4 = enc.output_scale * (1.0 - np.tanh(a4) ** 2)  # (B, d)
    J = t4[:, :, None] * W4[None, :, :]  # (B, d, h)
    J = (J * diffcore.gelu_d1(a3)[:, None, :]) @ W3
    J = (J * diffcore.gelu_d1(a2)[:, None, :]) @ W2
    J = (J * diffcore.gelu_d1(a1)[:, None, :]) @ W1
    return J


def jacobian(enc: MlpEncoder, x: np.ndarray) -> np.ndarray:
    """Jacobian d(embed)/dx for a single sample, shape (d, D)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("jacobian takes a single sample")
    return jacobian_batch(enc, x[None, :])[0]


def jacobian_frobenius_sq(enc: MlpEncoder, x_batch: np.ndarray) -> float:
    """Mean squared Frobenius norm of the per-sample Jacobians."""
    J = jacobian_batch(enc, x_batch)
    return float(np.mean(np.sum(J * J, axis=(1, 2))))


# ---------------------------------------------------------------------------
# graph-side forward / regularizer, used by the trainer


def leaf_params(graph: Graph, enc: MlpEncoder) -> dict[str, Tensor]:
    params = {}
    for k, (W, b) in enumerate(enc.weights, start=1):
        params[f"W{k}"] = graph.leaf(W)
        params[f"b{k}"] = graph.leaf(b)
    return params


def _affine(params, k, h: Tensor) -> Tensor:
    W = params[f"W{k}"]
    b = params[f"b{k}"]
    B = h.shape[0]
    return (h @ W.transpose()) + b.repeat(B, axis=0)


def forward_graph(graph: Graph, params: dict, enc: MlpEncoder, x: Tensor):
    """Batched encoder forward on the tape.

    Returns the embedding tensor (B, d) and the pre-activations needed to
    assemble the Jacobian on the same tape.
    """
    a1 = _affine(params, 1, x)
    a2 = _affine(params, 2, a1.gelu())
    a3 = _affine(params, 3, a2.gelu())
    a4 = _affine(params, 4, a3.gelu())
    z = a4.tanh().scale(enc.output_scale)
    if any(g == "sphere" for g in enc.geometry):
        parts = []
        for sl, geom in zip(enc.partition_slices(), enc.geometry):
            part = z.slice(1, sl.start, sl.stop)
            if geom == "sphere":
                inv = part.square().sum(axis=1).rsqrt()  # (B,)
                part = part * inv.repeat(sl.stop - sl.start, axis=1)
            parts.append(part)
        z = graph.apply("concat", *parts, axis=1)
    return z, (a1, a2, a3, a4)


def jacobian_frobenius_sq_graph(
    graph: Graph, params: dict, enc: MlpEncoder, preacts
) -> Tensor:
    """Scalar tape node: mean over the batch of sum_ij J(x)_ij^2."""
    if any(g == "sphere" for g in enc.geometry):
        raise NotImplementedError("regularizer is implemented for box geometry")
    a1, a2, a3, a4 = preacts
    B = a1.shape[0]
    d = a4.shape[1]
    h = a1.shape[1]

    t4 = a4.tanh_d1().scale(enc.output_scale)  # (B, d)
    W4r = params["W4"].repeat(B, axis=0)  # (B, d, h)
    J = W4r * t4.repeat(h, axis=2)  # repeat inserts the h axis: (B, d, h)

    def _step(J, a_k, W_k):
        hk = a_k.shape[1]
        g = a_k.gelu_d1().repeat(d, axis=1)  # (B, d, hk)
        flat = (J * g).reshape(B * d, hk) @ W_k
        return flat.reshape(B, d, W_k.shape[1])

    J = _step(J, a3, params["W3"])
    J = _step(J, a2, params["W2"])
    J = _step(J, a1, params["W1"])
    return J.square().sum().scale(1.0 / B)


# ---------------------------------------------------------------------------
# checkpoint format: meta.json + one little-endian float64 raw file per array


def save_checkpoint(enc: MlpEncoder, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for k, (W, b) in enumerate(enc.weights, start=1):
        arrays[f"W{k}"] = W
        arrays[f"b{k}"] = b
    meta = {
        "input_dim": enc.input_dim,
        "hidden_width": enc.hidden_width,
        "partition": list(enc.partition),
        "output_scale": enc.output_scale,
        "geometry": list(enc.geometry),
        "seed": enc.seed,
        "steps_trained": enc.steps_trained,
        "arrays": {name: list(a.shape) for name, a in arrays.items()},
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))
    for name, a in arrays.items():
        (directory / f"{name}.f64").write_bytes(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
        )


def load_checkpoint(directory) -> MlpEncoder:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    arrays = {}
    for name, shape in meta["arrays"].items():
        raw = np.frombuffer((directory / f"{name}.f64").read_bytes(), dtype="<f8")
        arrays[name] = raw.reshape(shape).astype(np.float64)
    n_layers = len(arrays) // 2
    weights = [(arrays[f"W{k}"], arrays[f"b{k}"]) for k in range(1, n_layers + 1)]
    return MlpEncoder(
        weights=weights,
        input_dim=meta["input_dim"],
        hidden_width=meta["hidden_width"],
        partition=meta["partition"],
        output_scale=meta["output_scale"],
        geometry=meta["geometry"],
        seed=meta["seed"],
        steps_trained=meta["steps_trained"],
    )
