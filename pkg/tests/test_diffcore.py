import numpy as np
import pytest
from scipy.special import erf

from xcebra.diffcore import (
    Graph,
    NumericalError,
    OP_KINDS,
    ShapeError,
    gelu,
    gelu_d1,
    gelu_d2,
    grad_check,
)

rng = np.random.default_rng(0)


def test_forward_values_match_numpy():
    g = Graph()
    A = rng.normal(size=(3, 4))
    B = rng.normal(size=(4, 2))
    a, b = g.leaf(A), g.leaf(B)
    assert np.allclose((a @ b).data, A @ B)
    assert np.allclose((a + a).data, 2 * A)
    assert np.allclose((a - a).data, 0)
    assert np.allclose((a * a).data, A * A)
    assert np.allclose(a.scale(3.0).data, 3 * A)
    assert np.allclose(a.tanh().data, np.tanh(A))
    assert np.allclose(a.square().data, A**2)
    assert np.allclose(a.abs().data, np.abs(A))
    assert np.allclose(a.sum().data, A.sum())
    assert np.allclose(a.sum(axis=1).data, A.sum(axis=1))
    assert np.allclose(a.mean().data, A.mean())
    assert np.allclose(g.leaf(np.abs(A) + 0.1).rsqrt().data, 1 / np.sqrt(np.abs(A) + 0.1))
    assert np.allclose(g.apply("exp", a).data, np.exp(A))
    assert np.allclose(g.apply("log", g.leaf(np.abs(A) + 1)).data, np.log(np.abs(A) + 1))


def test_gelu_matches_definition():
    x = rng.normal(size=100)
    Phi = 0.5 * (1 + erf(x / np.sqrt(2)))
    assert np.allclose(gelu(x), x * Phi)
    # derivative identities by finite differences
    h = 1e-6
    assert np.allclose(gelu_d1(x), (gelu(x + h) - gelu(x - h)) / (2 * h), atol=1e-8)
    assert np.allclose(gelu_d2(x), (gelu_d1(x + h) - gelu_d1(x - h)) / (2 * h), atol=1e-6)


def test_logsumexp_rows_stable_and_correct():
    g = Graph()
    A = rng.normal(size=(5, 7))
    out = g.leaf(A).logsumexp_rows().data
    assert np.allclose(out, np.log(np.exp(A).sum(axis=1)))
    # large values must not overflow
    big = g.leaf(A + 1000.0).logsumexp_rows().data
    assert np.allclose(big, out + 1000.0)


def test_shape_plumbing_ops():
    g = Graph()
    A = rng.normal(size=(2, 3))
    a = g.leaf(A)
    assert np.allclose(a.transpose().data, A.T)
    assert np.allclose(a.reshape(3, 2).data, A.reshape(3, 2))
    assert np.allclose(a.slice(1, 0, 2).data, A[:, :2])
    assert np.allclose(a.repeat(4, axis=1).data, np.repeat(A[:, None, :], 4, axis=1))
    cat = g.apply("concat", a, a, axis=0)
    assert np.allclose(cat.data, np.vstack([A, A]))


def test_backward_simple_quadratic():
    g = Graph()
    w = g.leaf(np.array([1.0, 2.0]))
    loss = w.square().sum()
    grads = g.backward(loss)
    assert np.allclose(grads[w.node_id], [2.0, 4.0])


@pytest.mark.parametrize(
    "fn",
    [
        lambda g, x: x.square().sum(),
        lambda g, x: x.tanh().sum(),
        lambda g, x: x.gelu().sum(),
        lambda g, x: x.gelu_d1().sum(),
        lambda g, x: x.tanh_d1().sum(),
        lambda g, x: g.apply("exp", x).sum(),
        lambda g, x: (x * x).scale(0.5).sum(),
        lambda g, x: x.logsumexp_rows().sum(),
        lambda g, x: x.slice(1, 1, 3).square().sum(),
        lambda g, x: x.transpose().reshape(12).sum(axis=0),
        lambda g, x: x.repeat(3, axis=1).square().sum(),
        lambda g, x: (x.square().sum(axis=1).rsqrt()).sum(),
        lambda g, x: (x @ x.transpose()).sum(),
    ],
)
def test_grad_check_composites(fn):
    point = rng.normal(size=(3, 4))
    report = grad_check(fn, point, h=1e-5, tol=1e-4)
    assert report.passed, report


def test_grad_check_detects_kinks():
    point = np.array([1.0, 0.0, -2.0])
    report = grad_check(lambda g, x: x.abs().sum(), point, h=1e-5)
    assert (1,) in report.nondifferentiable
    assert report.n_checked == 2
    assert report.passed


def test_shape_errors():
    g = Graph()
    a = g.leaf(rng.normal(size=(2, 3)))
    b = g.leaf(rng.normal(size=(2, 2)))
    with pytest.raises(ShapeError):
        g.apply("add", a, b)
    with pytest.raises(ShapeError):
        g.apply("matmul", a, a)
    with pytest.raises(ShapeError):
        g.backward(a)  # non-scalar root


@pytest.mark.filterwarnings("ignore:overflow")
def test_nonfinite_detection():
    g = Graph()
    a = g.leaf(np.array([1000.0]))
    with pytest.raises(NumericalError):
        g.apply("exp", g.apply("exp", a))
    with pytest.raises(NumericalError):
        g.leaf(np.array([-1.0])).rsqrt()


def test_unknown_primitive_rejected():
    g = Graph()
    with pytest.raises(ValueError):
        g.apply("convolve", g.leaf(np.zeros(3)))
    assert "matmul" in OP_KINDS


def test_branching_graph_accumulates_gradients():
    # y = sum(x*x) + sum(x) uses x twice
    g = Graph()
    x = g.leaf(np.array([3.0, -1.0]))
    loss = (x * x).sum() + x.sum()
    grads = g.backward(loss)
    assert np.allclose(grads[x.node_id], [7.0, -1.0])
