"""Rate-based navigation simulator: Ornstein-Uhlenbeck motion in the unit
box plus place, grid, head-direction, and speed cell populations, with
spatial-information and grid-score metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, signal

from .synthgen import Dataset

__all__ = [
    "MotionState",
    "CellPopulation",
    "simulate_trajectory",
    "make_population",
    "firing_rates",
    "ratemap",
    "spatial_information",
    "grid_score",
    "make_nav_dataset",
    "NOISE_SWEEP_LEVELS",
]

NOISE_SWEEP_LEVELS = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5)


@dataclass
class MotionState:
    position: np.ndarray  # (T, 2) meters, inside [0, 1]^2
    speed: np.ndarray  # (T,) m/s, >= 0
    direction: np.ndarray  # (T,) radians
    head_direction: np.ndarray  # (T,) radians, smoothed direction
    dt: float = 0.1


@dataclass
class CellPopulation:
    kind: str  # place | grid | head_direction | speed
    n: int
    params: dict = field(default_factory=dict)
    noise_std: float = 0.0


def simulate_trajectory(
    T: int,
    dt: float = 0.1,
    seed: int = 0,
    speed_mean: float = 0.08,
    speed_tau: float = 0.7,
    speed_noise: float = 0.08,
    rot_tau: float = 1.0,
    rot_noise: float = 2.0,
    hd_tau: float = 0.2,
) -> MotionState:
    """Random foraging trajectory in the unit box.

    Rotational velocity and speed are discretized Ornstein-Uhlenbeck
    processes (speed reflected at 0); heading integrates the rotational
    velocity; borders reflect the velocity specularly. Head direction is an
    exponentially smoothed copy of the heading vector.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    rng = np.random.default_rng(seed)
    pos = np.empty((T, 2))
    v = np.empty(T)
    theta = np.empty(T)
    pos[0] = rng.uniform(0.2, 0.8, size=2)
    theta[0] = rng.uniform(-np.pi, np.pi)
    v[0] = speed_mean
    omega = 0.0
    sq = np.sqrt(dt)
    for t in range(1, T):
        omega += -(omega / rot_tau) * dt + rot_noise * sq * rng.normal()
        theta[t] = theta[t - 1] + omega * dt
        v[t] = abs(
            v[t - 1]
            + ((speed_mean - v[t - 1]) / speed_tau) * dt
            + speed_noise * sq * rng.normal()
        )
        step = v[t] * dt * np.array([np.cos(theta[t]), np.sin(theta[t])])
        p = pos[t - 1] + step
        # specular reflection at the four walls
        for ax in (0, 1):
            if p[ax] < 0.0:
                p[ax] = -p[ax]
                theta[t] = np.pi - theta[t] if ax == 0 else -theta[t]
            elif p[ax] > 1.0:
                p[ax] = 2.0 - p[ax]
                theta[t] = np.pi - theta[t] if ax == 0 else -theta[t]
        pos[t] = np.clip(p, 0.0, 1.0)
    theta = np.arctan2(np.sin(theta), np.cos(theta))
    # circular smoothing of the heading vector
    alpha = min(1.0, dt / hd_tau)
    u = np.empty((T, 2))
    u[0] = [np.cos(theta[0]), np.sin(theta[0])]
    for t in range(1, T):
        u[t] = (1 - alpha) * u[t - 1] + alpha * np.array(
            [np.cos(theta[t]), np.sin(theta[t])]
        )
    hd = np.arctan2(u[:, 1], u[:, 0])
    return MotionState(position=pos, speed=v, direction=theta, head_direction=hd, dt=dt)


def make_population(kind: str, n: int, seed: int, noise_std: float = 0.0) -> CellPopulation:
    rng = np.random.default_rng(seed)
    if kind == "place":
        params = {
            "centers": rng.uniform(0.0, 1.0, size=(n, 2)),
            "width": 0.2,
            "surround_ratio": 1.5,
            "surround_amp": 0.5,
        }
    elif kind == "grid":
        # two modules, scales 0.3 m and 0.4 m, split evenly across cells
        scales = np.where(np.arange(n) < n // 2, 0.3, 0.4)
        params = {
            "scales": scales,
            "orientations": rng.uniform(0.0, np.pi / 3, size=n),
            "phases": rng.uniform(0.0, 1.0, size=(n, 2)),
        }
    elif kind == "head_direction":
        params = {
            "preferred": rng.uniform(-np.pi, np.pi, size=n),
            "concentration": 4.0,
        }
    elif kind == "speed":
        params = {"gains": rng.uniform(0.5, 2.0, size=n)}
    else:
        raise ValueError(f"unknown population kind {kind!r}")
    return CellPopulation(kind=kind, n=n, params=params, noise_std=float(noise_std))


def _rates_noiseless(traj: MotionState, pop: CellPopulation) -> np.ndarray:
    p = pop.params
    if pop.kind == "place":
        d2 = np.sum(
            (traj.position[:, None, :] - p["centers"][None, :, :]) ** 2, axis=2
        )
        s1 = p["width"]
        s2 = p["surround_ratio"] * s1
        dog = np.exp(-d2 / (2 * s1**2)) - p["surround_amp"] * np.exp(-d2 / (2 * s2**2))
        return np.maximum(dog, 0.0)
    if pop.kind == "grid":
        T = traj.position.shape[0]
        n = pop.n
        rates = np.empty((T, n))
        for j in range(n):
            k = 4 * np.pi / (np.sqrt(3.0) * p["scales"][j])
            rel = traj.position - p["phases"][j]
            r = np.zeros(T)
            for m in range(3):
                ang = p["orientations"][j] + m * np.pi / 3
                proj = rel @ np.array([np.cos(ang), np.sin(ang)])
                r += np.maximum(np.cos(k * proj), 0.0)
            rates[:, j] = r / 3.0
        return rates
    if pop.kind == "head_direction":
        diff = traj.head_direction[:, None] - p["preferred"][None, :]
        return np.exp(p["concentration"] * (np.cos(diff) - 1.0))
    if pop.kind == "speed":
        return np.maximum(traj.speed[:, None] * p["gains"][None, :], 0.0)
    raise ValueError(f"unknown population kind {pop.kind!r}")


def firing_rates(traj: MotionState, pop: CellPopulation, seed: int = 0) -> np.ndarray:
    """(T, n) rate matrix: tuning-curve rates plus clipped Gaussian noise."""
    rates = _rates_noiseless(traj, pop)
    if pop.noise_std > 0:
        rng = np.random.default_rng(seed)
        rates = rates + rng.normal(0.0, pop.noise_std, size=rates.shape)
    return np.maximum(rates, 0.0)


def _occupancy_bins(positions: np.ndarray, bins: int):
    ix = np.minimum((positions[:, 0] * bins).astype(int), bins - 1)
    iy = np.minimum((positions[:, 1] * bins).astype(int), bins - 1)
    return ix * bins + iy


def spatial_information(rates: np.ndarray, positions: np.ndarray, bins: int = 10):
    """Skaggs information (bits/spike) per cell.

    SI = sum_i P_i (r_i / rbar) log2(r_i / rbar) over occupied bins, with
    0 * log 0 treated as 0. Cells with zero mean rate get NaN.
    """
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim == 1:
        rates = rates[:, None]
    if bins < 2:
        raise ValueError("bins must be >= 2")
    flat = _occupancy_bins(np.asarray(positions, dtype=np.float64), bins)
    counts = np.bincount(flat, minlength=bins * bins).astype(np.float64)
    if counts.sum() == 0:
        raise ValueError("empty occupancy")
    P = counts / counts.sum()
    occupied = counts > 0
    # mean rate per bin, per cell
    sums = np.zeros((bins * bins, rates.shape[1]))
    np.add.at(sums, flat, rates)
    r_bin = np.zeros_like(sums)
    r_bin[occupied] = sums[occupied] / counts[occupied, None]
    rbar = P @ r_bin  # (n,)
    out = np.full(rates.shape[1], np.nan)
    for j in range(rates.shape[1]):
        if rbar[j] <= 0:
            continue
        ratio = r_bin[occupied, j] / rbar[j]
        terms = np.where(ratio > 0, ratio * np.log2(np.where(ratio > 0, ratio, 1.0)), 0.0)
        out[j] = float(P[occupied] @ terms)
    return out if out.size > 1 else float(out[0])


def ratemap(rates: np.ndarray, positions: np.ndarray, bins: int = 30) -> np.ndarray:
    """Occupancy-normalized mean rate on a bins x bins grid (empty bins 0)."""
    flat = _occupancy_bins(np.asarray(positions, dtype=np.float64), bins)
    counts = np.bincount(flat, minlength=bins * bins).astype(np.float64)
    sums = np.bincount(flat, weights=np.asarray(rates, dtype=np.float64),
                       minlength=bins * bins)
    out = np.zeros(bins * bins)
    occ = counts > 0
    out[occ] = sums[occ] / counts[occ]
    return out.reshape(bins, bins)


def _sac(rm: np.ndarray, min_overlap: int = 20) -> np.ndarray:
    """Spatial autocorrelogram: Pearson correlation over overlapping shifts,
    computed with FFT-based sliding sums."""
    rm = np.asarray(rm, dtype=np.float64)
    ones = np.ones_like(rm)

    def corr(a, b):
        return signal.fftconvolve(a, b[::-1, ::-1], mode="full")

    n = corr(ones, ones)
    sx = corr(rm, ones)
    sy = corr(ones, rm)
    sxy = corr(rm, rm)
    sxx = corr(rm**2, ones)
    syy = corr(ones, rm**2)
    with np.errstate(invalid="ignore", divide="ignore"):
        num = n * sxy - sx * sy
        den = np.sqrt(np.maximum(n * sxx - sx**2, 0.0) * np.maximum(n * syy - sy**2, 0.0))
        sac = np.where((np.round(n) >= min_overlap) & (den > 1e-12), num / den, 0.0)
    return sac


def _central_mask_radius(sac: np.ndarray) -> float:
    """Radius of the first local minimum of the radial autocorrelation."""
    cy, cx = np.array(sac.shape) // 2
    yy, xx = np.mgrid[0 : sac.shape[0], 0 : sac.shape[1]]
    r = np.sqrt((yy - cy) ** 2.0 + (xx - cx) ** 2.0)
    rmax = int(min(cy, cx))
    profile = np.array([sac[(r >= k) & (r < k + 1)].mean() for k in range(rmax)])
    for k in range(1, len(profile) - 1):
        if profile[k] <= profile[k - 1] and profile[k] <= profile[k + 1]:
            return float(k + 1)
    return float(max(2, rmax // 4))


def grid_score(rm: np.ndarray) -> float:
    """Sargolini-style gridness from the ratemap's autocorrelogram.

    The central peak is masked out to the first radial local minimum; the
    remaining annulus is correlated with bilinear rotations of itself and the
    score contrasts the 60/120-degree correlations against 30/90/150.
    """
    rm = np.asarray(rm, dtype=np.float64)
    if rm.shape[0] < 20 or rm.shape[1] < 20:
        raise ValueError("ratemap must be at least 20x20")
    if np.ptp(rm) == 0:
        return 0.0
    sac = _sac(rm)
    cy, cx = np.array(sac.shape) // 2
    yy, xx = np.mgrid[0 : sac.shape[0], 0 : sac.shape[1]]
    r = np.sqrt((yy - cy) ** 2.0 + (xx - cx) ** 2.0)
    r0 = _central_mask_radius(sac)
    mask = (r > r0) & (r <= min(cy, cx))
    base = sac[mask]
    if base.std() == 0:
        return 0.0
    corrs = {}
    for ang in (30, 60, 90, 120, 150):
        rot = ndimage.rotate(sac, ang, reshape=False, order=1, mode="constant")
        a, b = base, rot[mask]
        if b.std() == 0:
            corrs[ang] = 0.0
        else:
            corrs[ang] = float(np.corrcoef(a, b)[0, 1])
    return min(corrs[60], corrs[120]) - max(corrs[30], corrs[90], corrs[150])


def make_nav_dataset(
    seed: int = 0,
    noise_std: float = 0.05,
    T: int = 20000,
    dt: float = 0.1,
    n_per_type: int = 100,
) -> Dataset:
    """Simulated 4-population recording with position labels.

    Rows of x are ordered place, grid, head-direction, speed; the binary
    ground-truth map marks the place and grid rows as driven by the 2-D
    position and everything else as not.
    """
    ss = np.random.SeedSequence(seed).generate_state(6)
    traj = simulate_trajectory(T, dt=dt, seed=int(ss[0]))
    kinds = ["place", "grid", "head_direction", "speed"]
    blocks = []
    cell_meta = []
    for i, kind in enumerate(kinds):
        pop = make_population(kind, n_per_type, seed=int(ss[i + 1]), noise_std=noise_std)
        blocks.append(firing_rates(traj, pop, seed=int(ss[5]) + i))
        cell_meta.append({"kind": kind, "n": pop.n, "noise_std": pop.noise_std})
    x = np.concatenate(blocks, axis=1)
    D = x.shape[1]
    gt = np.zeros((D, 2), dtype=np.uint8)
    gt[: 2 * n_per_type, :] = 1  # place + grid cells depend on position
    meta = {
        "generator": "navsim",
        "T": int(T),
        "D": int(D),
        "dt": float(dt),
        "seed": int(seed),
        "noise_std": float(noise_std),
        "populations": cell_meta,
    }
    return Dataset(
        x=x,
        c=traj.position.copy(),
        z=None,
        gt_map=gt,
        meta=meta,
        extra_arrays={"speed": traj.speed.copy(), "headdir": traj.head_direction.copy()},
    )
