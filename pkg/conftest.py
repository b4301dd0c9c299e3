import numpy as np
import pytest

from voxmamba.autodiff import tensor as T


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="lance les expériences longues")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: expérience longue, lancée avec --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="nécessite --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def float64():
    previous = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(previous)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=range(20))
def seeded_rng(request):
    """Un générateur par graine : les vérifications de gradient tournent sur 20 graines"""
    return np.random.default_rng(request.param)


def numeric_grad_error(fn, tensors, eps=1e-3, max_checks=24, seed=0):
    """Erreur relative max entre gradient analytique et différences centrées.

    ``fn`` rend une perte scalaire ; ``tensors`` sont les feuilles à vérifier.
    Au plus ``max_checks`` coordonnées tirées au hasard par tenseur.
    """
    picker = np.random.default_rng(seed)
    for t in tensors:
        t.grad = None
    T.backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = np.arange(t.data.size)
        if flat.size > max_checks:
            flat = picker.choice(flat, size=max_checks, replace=False)
        numeric = []
        picked = []
        for i in flat:
            idx = np.unravel_index(i, t.data.shape)
            original = t.data[idx]
            with T.no_grad():
                t.data[idx] = original + eps
                plus = fn().item()
                t.data[idx] = original - eps
                minus = fn().item()
            t.data[idx] = original
            numeric.append((plus - minus) / (2 * eps))
            picked.append(analytic[idx])
        numeric = np.asarray(numeric)
        picked = np.asarray(picked)
        scale = max(np.linalg.norm(numeric), np.linalg.norm(picked), 1e-12)
        worst = max(worst, float(np.linalg.norm(numeric - picked) / scale))
    return worst


@pytest.fixture
def grad_error():
    return numeric_grad_error
