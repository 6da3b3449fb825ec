"""
Shared pytest setup: backend/ on sys.path (the modules import as
`services.x` / `core.x`) plus finite-difference helpers.
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'backend'))


def central_difference(loss_fn, array, indices=None, eps=1e-6):
    """d loss / d array[idx] for each idx, by perturbing array in place."""
    if indices is None:
        indices = list(np.ndindex(array.shape))
    out = []
    for idx in indices:
        original = array[idx]
        array[idx] = original + eps
        plus = loss_fn()
        array[idx] = original - eps
        minus = loss_fn()
        array[idx] = original
        out.append((plus - minus) / (2 * eps))
    return np.array(out)


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / denom)


@pytest.fixture
def fd():
    return central_difference


@pytest.fixture
def rel_err():
    return relative_error


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)
