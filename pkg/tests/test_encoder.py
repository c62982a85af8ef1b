import numpy as np
import pytest

from xcebra import encoder as enc_mod
from xcebra.diffcore import Graph

rng = np.random.default_rng(1)


def _enc(seed=0, D=10, h=16, partition=(2, 2), **kw):
    return enc_mod.init_encoder(seed, D, h, list(partition), **kw)


def test_init_shapes_and_scaling():
    enc = _enc()
    dims = [(16, 10), (16, 16), (16, 16), (4, 16)]
    for (W, b), shape in zip(enc.weights, dims):
        assert W.shape == shape
        assert np.allclose(b, 0.0)
    # fan-in scaling: empirical std close to sqrt(2/fan_in)
    big = _enc(seed=3, D=200, h=400)
    W1 = big.weights[0][0]
    assert abs(W1.std() - np.sqrt(2 / 200)) < 0.01


def test_embed_bounded_by_output_scale():
    enc = _enc(output_scale=1.1)
    z = enc_mod.embed(enc, rng.normal(size=(50, 10)))
    assert z.shape == (50, 4)
    assert np.all(np.abs(z) <= 1.1)


def test_partition_slices():
    enc = _enc(partition=(3, 2))
    assert enc.partition_slices() == [slice(0, 3), slice(3, 5)]
    assert enc.output_dim == 5


def test_sphere_geometry_normalizes():
    enc = _enc(partition=(3, 3), geometry=["sphere", "box"])
    z = enc_mod.embed(enc, rng.normal(size=(20, 10)))
    assert np.allclose(np.linalg.norm(z[:, :3], axis=1), 1.0)


def test_jacobian_matches_finite_differences():
    for seed in range(5):
        enc = _enc(seed=seed)
        x = rng.normal(size=10)
        J = enc_mod.jacobian(enc, x)
        h = 1e-6
        for i in range(10):
            e = np.zeros(10)
            e[i] = h
            fd = (enc_mod.embed(enc, x + e) - enc_mod.embed(enc, x - e)) / (2 * h)
            assert np.allclose(J[:, i], fd, atol=1e-6)


def test_jacobian_batch_matches_single():
    enc = _enc(seed=2)
    X = rng.normal(size=(7, 10))
    Jb = enc_mod.jacobian_batch(enc, X)
    for i in range(7):
        assert np.allclose(Jb[i], enc_mod.jacobian(enc, X[i]))


def test_forward_graph_matches_numpy_embed():
    enc = _enc(seed=4)
    X = rng.normal(size=(8, 10))
    g = Graph()
    params = enc_mod.leaf_params(g, enc)
    z, _ = enc_mod.forward_graph(g, params, enc, g.leaf(X))
    assert np.array_equal(z.data, enc_mod.embed(enc, X))


def test_regularizer_graph_matches_numpy_value():
    enc = _enc(seed=5)
    X = rng.normal(size=(6, 10))
    g = Graph()
    params = enc_mod.leaf_params(g, enc)
    _, preacts = enc_mod.forward_graph(g, params, enc, g.leaf(X))
    reg = enc_mod.jacobian_frobenius_sq_graph(g, params, enc, preacts)
    assert np.isclose(float(reg.data), enc_mod.jacobian_frobenius_sq(enc, X), rtol=1e-12)


def test_regularizer_weight_gradient_matches_finite_differences():
    enc = _enc(seed=6, D=6, h=8)
    X = rng.normal(size=(4, 6))

    def reg_value(enc):
        return enc_mod.jacobian_frobenius_sq(enc, X)

    g = Graph()
    params = enc_mod.leaf_params(g, enc)
    _, preacts = enc_mod.forward_graph(g, params, enc, g.leaf(X))
    reg = enc_mod.jacobian_frobenius_sq_graph(g, params, enc, preacts)
    grads = g.backward(reg)
    h = 1e-6
    for k in (1, 2, 3, 4):
        W = enc.weights[k - 1][0]
        gW = grads[params[f"W{k}"].node_id]
        idx = (0, 1)
        W[idx] += h
        up = reg_value(enc)
        W[idx] -= 2 * h
        dn = reg_value(enc)
        W[idx] += h
        fd = (up - dn) / (2 * h)
        assert abs(gW[idx] - fd) / max(abs(fd), 1e-6) < 1e-3


def test_checkpoint_roundtrip_exact():
    enc = _enc(seed=7)
    enc.steps_trained = 123
    X = rng.normal(size=(5, 10))
    z0 = enc_mod.embed(enc, X)
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        enc_mod.save_checkpoint(enc, tmp)
        enc2 = enc_mod.load_checkpoint(tmp)
    assert np.array_equal(enc_mod.embed(enc2, X), z0)
    assert enc2.partition == enc.partition
    assert enc2.steps_trained == 123


def test_input_validation():
    enc = _enc()
    with pytest.raises(ValueError):
        enc_mod.embed(enc, np.zeros((3, 99)))
    with pytest.raises(ValueError):
        enc_mod.embed(enc, np.full((2, 10), np.nan))
    with pytest.raises(ValueError):
        enc_mod.init_encoder(0, 10, 16, [])
