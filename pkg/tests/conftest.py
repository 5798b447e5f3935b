import numpy as np
import pytest

from tsclab.data import TimeSeriesDataset, one_hot
from tsclab.tensor import SplitMix64


def central_difference(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def assert_grad_close(analytic, numeric, tol=1e-6):
    err = relative_error(analytic, numeric)
    assert err < tol, f"gradient mismatch: relative error {err:.3e} >= {tol}"


def random_batch(shape, seed=0, scale=1.0):
    rng = SplitMix64(seed)
    return (2.0 * rng.uniform(int(np.prod(shape))) - 1.0).reshape(shape) * scale


def toy_dataset(n=8, T=16, M=1, K=2, seed=0):
    """Random labeled series; labels cycle over classes."""
    X = random_batch((n, T, M), seed=seed)
    labels = [i % K for i in range(n)]
    vocab = tuple(range(K))
    return TimeSeriesDataset(X, one_hot(labels, vocab), vocab)


def separable_dataset(n=20, T=16, M=1, seed=3, margin=1.0):
    """Two classes split by the sign of the series mean, with a clear margin."""
    X = random_batch((n, T, M), seed=seed) * 0.25
    labels = []
    for i in range(n):
        if i % 2 == 0:
            X[i] += margin
            labels.append(1)
        else:
            X[i] -= margin
            labels.append(0)
    vocab = (0, 1)
    return TimeSeriesDataset(X, one_hot(labels, vocab), vocab)


@pytest.fixture
def rng():
    return SplitMix64(0)
