"""Ground-truth synthetic time-series: box-bounded Brownian latents, an
injective block mixing function with known connectivity, and the binary
ground-truth attribution map derived from that connectivity.

Each mixing block is (full-column-rank Gaussian expansion) o (u + tanh u)
o (well-conditioned square matrix), composed twice, so injectivity holds by
construction rather than by sampling luck.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

__all__ = [
    "LatentTrajectory",
    "MixingBlock",
    "MixingFunction",
    "Dataset",
    "sample_latents",
    "build_mixing",
    "mix",
    "mixing_jacobian",
    "ground_truth_map",
    "make_dataset",
    "save_dataset",
    "load_dataset",
]


@dataclass
class LatentTrajectory:
    z: np.ndarray  # (T, d)
    partition: list
    sigma: float
    half_width: float = 1.0


@dataclass
class MixingBlock:
    input_indices: np.ndarray  # latent dims consumed by this block
    out_dim: int
    square1: np.ndarray  # (k, k)
    expand1: np.ndarray  # (m, k), full column rank
    square2: np.ndarray  # (m, m)
    expand2: np.ndarray  # (n, m), full column rank
    linear: bool = False  # if True the block is expand1 @ square1 only

    def apply(self, z_sub: np.ndarray) -> np.ndarray:
        u = z_sub @ self.square1.T
        if self.linear:
            return u @ self.expand1.T
        u = u + np.tanh(u)
        u = u @ self.expand1.T @ self.square2.T
        u = u + np.tanh(u)
        return u @ self.expand2.T

    def jacobian(self, z_sub: np.ndarray) -> np.ndarray:
        """d(block output)/d(z_sub) for a single input, shape (n, k)."""
        u1 = self.square1 @ z_sub
        if self.linear:
            return self.expand1 @ self.square1
        d1 = 1.0 + (1.0 - np.tanh(u1) ** 2)
        M = self.square2 @ self.expand1 @ (d1[:, None] * self.square1)
        u2 = self.square2 @ self.expand1 @ (u1 + np.tanh(u1))
        d2 = 1.0 + (1.0 - np.tanh(u2) ** 2)
        return self.expand2 @ (d2[:, None] * M)


@dataclass
class MixingFunction:
    blocks: list
    latent_dim: int

    @property
    def output_dim(self) -> int:
        return sum(b.out_dim for b in self.blocks)


@dataclass
class Dataset:
    x: np.ndarray  # (T, D)
    c: np.ndarray | None  # (T, k) auxiliary labels, or None
    z: np.ndarray | None  # (T, d) ground-truth latents, if synthetic
    gt_map: np.ndarray | None  # (D, d) binary
    meta: dict = field(default_factory=dict)
    extra_arrays: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.x.shape[0]

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]


def _truncnorm_step(prev: np.ndarray, sigma: float, rng, lo=-1.0, hi=1.0):
    """One Brownian step, truncated-normal within [lo, hi] per coordinate."""
    a = ndtr((lo - prev) / sigma)
    b = ndtr((hi - prev) / sigma)
    u = rng.uniform(a, b)
    return prev + sigma * ndtri(u)


def sample_latents(T: int, partition, sigma: float, seed: int) -> LatentTrajectory:
    """Brownian motion in the box [-1, 1]^d with truncated-normal increments.

    The first sample is uniform on the box; factor groups share no noise, so
    they evolve conditionally independently.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    partition = [int(p) for p in partition]
    d = sum(partition)
    rng = np.random.default_rng(seed)
    z = np.empty((T, d))
    z[0] = rng.uniform(-1.0, 1.0, size=d)
    if sigma == 0.0:
        z[1:] = z[0]
    else:
        for t in range(1, T):
            z[t] = _truncnorm_step(z[t - 1], sigma, rng)
    return LatentTrajectory(z=z, partition=partition, sigma=sigma)


def _well_conditioned_square(rng, k: int, min_sv: float = 0.3) -> np.ndarray:
    for _ in range(10):
        M = rng.normal(size=(k, k)) / np.sqrt(k)
        u, s, vt = np.linalg.svd(M)
        if s[-1] < min_sv:
            s = np.clip(s, min_sv, None)
        return u @ np.diag(s) @ vt
    raise RuntimeError("could not draw a well-conditioned square matrix")


def _full_column_rank(rng, n: int, k: int, min_sv: float = 1e-2) -> np.ndarray:
    if n < k:
        raise ValueError("expansion must not reduce dimension")
    for _ in range(10):
        M = rng.normal(size=(n, k)) / np.sqrt(k)
        if np.linalg.svd(M, compute_uv=False)[-1] > min_sv:
            return M
    raise RuntimeError("could not draw a full-column-rank expansion matrix")


def build_mixing(
    partition_inputs, block_out_dims, seed: int, latent_dim: int | None = None,
    linear: bool = False,
) -> MixingFunction:
    """Injective block mixing with declared connectivity.

    ``partition_inputs[i]`` lists the latent dims feeding block ``i``;
    ``block_out_dims[i]`` is that block's output width (>= its input width).
    ``linear=True`` builds purely linear blocks (used by the exact-recovery
    special case).
    """
    rng = np.random.default_rng(seed)
    blocks = []
    all_idx = sorted({j for idx in partition_inputs for j in idx})
    if latent_dim is None:
        latent_dim = max(all_idx) + 1 if all_idx else 0
    for idx, n_out in zip(partition_inputs, block_out_dims):
        idx = np.asarray(sorted(idx), dtype=int)
        k = len(idx)
        if n_out < k:
            raise ValueError(f"block out-dim {n_out} < in-dim {k}")
        m = n_out
        blocks.append(
            MixingBlock(
                input_indices=idx,
                out_dim=int(n_out),
                square1=_well_conditioned_square(rng, k),
                expand1=_full_column_rank(rng, m, k),
                square2=_well_conditioned_square(rng, m),
                expand2=_full_column_rank(rng, n_out, m),
                linear=linear,
            )
        )
    return MixingFunction(blocks=blocks, latent_dim=int(latent_dim))


def mix(mixing: MixingFunction, z: np.ndarray) -> np.ndarray:
    """Apply the mixing function to latents (single sample or batch)."""
    z = np.asarray(z, dtype=np.float64)
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    outs = [b.apply(z[:, b.input_indices]) for b in mixing.blocks]
    x = np.concatenate(outs, axis=1)
    return x[0] if squeeze else x


def mixing_jacobian(mixing: MixingFunction, z: np.ndarray) -> np.ndarray:
    """Analytic Jacobian dx/dz at a single latent point, shape (D, d)."""
    z = np.asarray(z, dtype=np.float64)
    J = np.zeros((mixing.output_dim, mixing.latent_dim))
    row = 0
    for b in mixing.blocks:
        Jb = b.jacobian(z[b.input_indices])
        J[row : row + b.out_dim, b.input_indices] = Jb
        row += b.out_dim
    return J


def ground_truth_map(mixing: MixingFunction) -> np.ndarray:
    """Binary (D, d) connectivity: entry (i, j) = 1 iff latent j feeds the
    block producing output i."""
    A = np.zeros((mixing.output_dim, mixing.latent_dim), dtype=np.uint8)
    row = 0
    for b in mixing.blocks:
        A[row : row + b.out_dim, b.input_indices] = 1
        row += b.out_dim
    return A


def group_index_sets(partition) -> list[np.ndarray]:
    bounds = np.cumsum([0] + [int(p) for p in partition])
    return [np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:])]


def make_dataset(
    T: int,
    partition,
    observed_factors,
    sigma: float = 0.025,
    seed: int = 0,
    block_out_dims=None,
    gamma: str = "identity",
    linear: bool = False,
) -> Dataset:
    """Full synthetic dataset per the two-group generative design.

    Block 1 consumes group 1 only; block 2 consumes all groups. Observed
    groups are exported as labels c = gamma^{-1}(z_observed); the default
    link gamma is the identity, ``cubic`` uses c = z + z^3.
    """
    partition = [int(p) for p in partition]
    observed_factors = sorted(int(i) for i in observed_factors)
    if any(i < 0 or i >= len(partition) for i in observed_factors):
        raise ValueError("observed factor index out of range")
    groups = group_index_sets(partition)
    d = sum(partition)
    if block_out_dims is None:
        block_out_dims = [25, 25]
    traj = sample_latents(T, partition, sigma, seed)
    partition_inputs = [list(groups[0]), list(np.arange(d))]
    mixing = build_mixing(
        partition_inputs, block_out_dims, seed=seed + 1, latent_dim=d, linear=linear
    )
    x = mix(mixing, traj.z)
    obs_dims = np.concatenate([groups[i] for i in observed_factors]) if observed_factors else None
    c = None
    if obs_dims is not None:
        z_obs = traj.z[:, obs_dims]
        if gamma == "identity":
            c = z_obs
        elif gamma == "cubic":
            # strictly monotone (hence bijective) elementwise link
            c = z_obs + z_obs**3
        else:
            raise ValueError(f"unknown gamma {gamma!r}")
    meta = {
        "generator": "synthgen",
        "T": int(T),
        "D": int(mixing.output_dim),
        "d": int(d),
        "partition": partition,
        "observed_factors": observed_factors,
        "sigma": float(sigma),
        "seed": int(seed),
        "gamma": gamma,
        "linear": bool(linear),
        "block_out_dims": [int(n) for n in block_out_dims],
    }
    return Dataset(
        x=x, c=c, z=traj.z, gt_map=ground_truth_map(mixing), meta=meta
    )


# ---------------------------------------------------------------------------
# dataset directory layout: meta.json + raw little-endian arrays


def _write_raw(path: Path, a: np.ndarray, dtype: str) -> None:
    path.write_bytes(np.ascontiguousarray(a, dtype=dtype).tobytes())


def _read_raw(path: Path, dtype: str, shape) -> np.ndarray:
    return np.frombuffer(path.read_bytes(), dtype=dtype).reshape(shape).copy()


def save_dataset(ds: Dataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = dict(ds.meta)
    meta["arrays"] = {}
    _write_raw(directory / "x.f64", ds.x, "<f8")
    meta["arrays"]["x"] = list(ds.x.shape)
    if ds.c is not None:
        _write_raw(directory / "c.f64", ds.c, "<f8")
        meta["arrays"]["c"] = list(ds.c.shape)
    if ds.z is not None:
        _write_raw(directory / "z.f64", ds.z, "<f8")
        meta["arrays"]["z"] = list(ds.z.shape)
    if ds.gt_map is not None:
        _write_raw(directory / "A.u8", ds.gt_map, "u1")
        meta["arrays"]["A"] = list(ds.gt_map.shape)
    for name, arr in getattr(ds, "extra_arrays", {}).items():
        _write_raw(directory / f"{name}.f64", arr, "<f8")
        meta["arrays"][name] = list(arr.shape)
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def load_dataset(directory) -> Dataset:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    shapes = meta.pop("arrays")
    x = _read_raw(directory / "x.f64", "<f8", shapes["x"])
    c = _read_raw(directory / "c.f64", "<f8", shapes["c"]) if "c" in shapes else None
    z = _read_raw(directory / "z.f64", "<f8", shapes["z"]) if "z" in shapes else None
    A = _read_raw(directory / "A.u8", "u1", shapes["A"]) if "A" in shapes else None
    extra = {
        name: _read_raw(directory / f"{name}.f64", "<f8", shape)
        for name, shape in shapes.items()
        if name not in {"x", "c", "z", "A"}
    }
    return Dataset(x=x, c=c, z=z, gt_map=A, meta=meta, extra_arrays=extra)
