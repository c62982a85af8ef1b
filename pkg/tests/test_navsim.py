import numpy as np
import pytest

from xcebra import navsim as nv

rng = np.random.default_rng(7)


@pytest.fixture(scope="module")
def traj():
    return nv.simulate_trajectory(20000, dt=0.1, seed=0)


def test_trajectory_stays_in_box(traj):
    assert traj.position.shape == (20000, 2)
    assert traj.position.min() >= 0.0 and traj.position.max() <= 1.0
    assert traj.speed.min() >= 0.0
    assert np.isfinite(traj.head_direction).all()


def test_trajectory_covers_environment(traj):
    occupied = nv._occupancy_bins(traj.position, 10)
    assert len(np.unique(occupied)) > 95


def test_zero_noise_is_straight_line():
    t = nv.simulate_trajectory(60, dt=0.1, seed=1, speed_noise=0.0, rot_noise=0.0)
    d = np.diff(t.position[:20], axis=0)
    angles = np.arctan2(d[:, 1], d[:, 0])
    assert np.allclose(angles, angles[0], atol=1e-9)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        nv.simulate_trajectory(1, 0.1, 0)
    with pytest.raises(ValueError):
        nv.simulate_trajectory(10, 0.0, 0)


def test_populations_nonnegative_and_finite(traj):
    for kind in ("place", "grid", "head_direction", "speed"):
        pop = nv.make_population(kind, 20, seed=2, noise_std=0.05)
        r = nv.firing_rates(traj, pop, seed=0)
        assert r.shape == (20000, 20)
        assert r.min() >= 0.0 and np.isfinite(r).all()
    with pytest.raises(ValueError):
        nv.make_population("border", 5, 0)


def test_place_cell_peaks_at_center():
    pop = nv.make_population("place", 5, seed=3)
    centers = pop.params["centers"]
    grid = rng.uniform(0, 1, size=(2000, 2))
    probe = np.vstack([centers, grid])
    t = nv.MotionState(
        position=probe,
        speed=np.zeros(len(probe)),
        direction=np.zeros(len(probe)),
        head_direction=np.zeros(len(probe)),
    )
    r = nv.firing_rates(t, pop)
    for j in range(5):
        assert r[j, j] == r[:, j].max()


def test_speed_cells_zero_at_rest():
    pop = nv.make_population("speed", 5, seed=4, noise_std=0.0)
    t = nv.MotionState(
        position=np.full((10, 2), 0.5),
        speed=np.zeros(10),
        direction=np.zeros(10),
        head_direction=np.zeros(10),
    )
    assert np.all(nv.firing_rates(t, pop) == 0.0)


def _hex_ratemap(bins=40, scale=0.3, orient=0.0):
    g = (np.arange(bins) + 0.5) / bins
    X, Y = np.meshgrid(g, g, indexing="ij")
    pos = np.stack([X.ravel(), Y.ravel()], axis=1)
    k = 4 * np.pi / (np.sqrt(3) * scale)
    r = np.zeros(pos.shape[0])
    for m in range(3):
        ang = orient + m * np.pi / 3
        r += np.maximum(np.cos(k * (pos @ [np.cos(ang), np.sin(ang)])), 0)
    return (r / 3).reshape(bins, bins)


def test_grid_score_hexagonal_field():
    assert nv.grid_score(_hex_ratemap()) > 0.5


def test_grid_score_stripe_negative():
    bins = 40
    g = (np.arange(bins) + 0.5) / bins
    X, _ = np.meshgrid(g, g, indexing="ij")
    stripes = np.maximum(np.cos(4 * np.pi / (np.sqrt(3) * 0.3) * X), 0)
    assert nv.grid_score(stripes) < 0.0


def test_grid_score_constant_and_size_validation():
    assert nv.grid_score(np.ones((30, 30))) == 0.0
    with pytest.raises(ValueError):
        nv.grid_score(np.ones((10, 10)))


def test_sac_first_ring_has_six_peaks():
    sac = nv._sac(_hex_ratemap(bins=50))
    cy, cx = np.array(sac.shape) // 2
    r0 = nv._central_mask_radius(sac)
    yy, xx = np.mgrid[0 : sac.shape[0], 0 : sac.shape[1]]
    rr = np.sqrt((yy - cy) ** 2.0 + (xx - cx) ** 2.0)
    # local maxima (8-neighborhood) within the first ring annulus
    peaks = 0
    ring = (rr > r0) & (rr < 2.6 * r0)
    for y in range(1, sac.shape[0] - 1):
        for x in range(1, sac.shape[1] - 1):
            if not ring[y, x]:
                continue
            patch = sac[y - 1 : y + 2, x - 1 : x + 2]
            if sac[y, x] == patch.max() and sac[y, x] > 0.1:
                peaks += 1
    assert peaks == 6


def test_spatial_information_oracles():
    T = 2000
    pos = rng.uniform(0, 1, size=(T, 2))
    assert nv.spatial_information(np.ones(T), pos, bins=5) == 0.0
    # all rate mass in one of K equally occupied bins -> log2 K
    quad = np.array([[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]] * 500)
    rate = ((quad[:, 0] < 0.5) & (quad[:, 1] < 0.5)).astype(float)
    si = nv.spatial_information(rate, quad, bins=2)
    assert abs(si - 2.0) < 1e-6
    # scale invariance
    assert nv.spatial_information(5.0 * rate, quad, bins=2) == pytest.approx(si)
    # zero-rate cell reported missing
    both = nv.spatial_information(np.stack([rate, np.zeros(len(quad))], 1), quad, 2)
    assert np.isnan(both[1]) and np.isfinite(both[0])
    with pytest.raises(ValueError):
        nv.spatial_information(rate, quad, bins=1)


def test_population_metric_orderings(traj):
    grid = nv.firing_rates(traj, nv.make_population("grid", 20, seed=5))
    place = nv.firing_rates(traj, nv.make_population("place", 20, seed=6))
    speed = nv.firing_rates(traj, nv.make_population("speed", 20, seed=7))
    gs_g = np.median([nv.grid_score(nv.ratemap(grid[:, j], traj.position)) for j in range(20)])
    gs_p = np.median([nv.grid_score(nv.ratemap(place[:, j], traj.position)) for j in range(20)])
    assert gs_g > 0.0 and gs_g > gs_p
    si_p = np.median(nv.spatial_information(place, traj.position))
    si_s = np.median(nv.spatial_information(speed, traj.position))
    assert si_p > si_s


def test_make_nav_dataset_contract():
    ds = nv.make_nav_dataset(seed=0, noise_std=0.0, T=500, n_per_type=10)
    assert ds.x.shape == (500, 40)
    assert ds.c.shape == (500, 2)
    assert np.all(ds.gt_map[:20] == 1) and np.all(ds.gt_map[20:] == 0)
    assert set(ds.extra_arrays) == {"speed", "headdir"}
    assert ds.meta["generator"] == "navsim"
    # zero noise -> deterministic given the seed
    ds2 = nv.make_nav_dataset(seed=0, noise_std=0.0, T=500, n_per_type=10)
    assert np.array_equal(ds.x, ds2.x)
    assert len(nv.NOISE_SWEEP_LEVELS) == 6
