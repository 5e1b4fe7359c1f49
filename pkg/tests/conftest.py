import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from localerr.data import make_blobs, mnist_available
from localerr.network import NetConfig, init_network
from localerr.numerics import make_rng

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

needs_mnist = pytest.mark.skipif(not mnist_available(), reason="MNIST files not found; run scripts/fetch_mnist.py")


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def tiny_net():
    cfg = NetConfig(widths=(6, 5, 4), input_dim=7, seed=3)
    return init_network(cfg)


@pytest.fixture(scope="session")
def blobs():
    return make_blobs(400, make_rng(7), n_features=20, n_classes=3, spread=0.1)


@pytest.fixture(scope="session")
def mnist():
    if not mnist_available():
        pytest.skip("MNIST files not found; run scripts/fetch_mnist.py")
    from localerr.data import load_mnist

    return load_mnist("train"), load_mnist("test")


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def fake_digits(n, seed):
    """Sparse MNIST-like bytes: each class lights ~15% of pixels, with dropout and jitter."""
    templates = make_rng(0).random((10, 784)) < 0.15
    r = make_rng(seed)
    labels = r.integers(0, 10, size=n)
    keep = r.random((n, 784)) < 0.8
    x = templates[labels] * keep * r.uniform(0.5, 1.0, size=(n, 784))
    return np.round(x * 255).astype(np.uint8), labels


@pytest.fixture(scope="session")
def fake_mnist_dir(tmp_path_factory):
    """Tiny IDX files under the official MNIST names."""
    from localerr.data import write_idx

    d = tmp_path_factory.mktemp("fake_mnist")
    for prefix, n, seed in (("train", 400, 1), ("t10k", 150, 2)):
        pixels, labels = fake_digits(n, seed)
        write_idx(d / f"{prefix}-images-idx3-ubyte", d / f"{prefix}-labels-idx1-ubyte", pixels, labels)
    return d


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
