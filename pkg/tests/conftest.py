import numpy as np
import pytest
from hypothesis import strategies as st

from coxcp.survival import SurvivalDataset


def random_dataset(rng, n=40, p=1, tie_prob=0.0, censor=0.3, weights=False, binary=False):
    """Small random dataset; optional ties, weights and binary covariates."""
    t = rng.exponential(1.0, n)
    if tie_prob:
        grid = np.round(t, 1) + 0.1
        t = np.where(rng.random(n) < tie_prob, grid, t)
    d = rng.random(n) > censor
    d[rng.integers(n)] = True
    Z = rng.integers(0, 2, (n, p)).astype(float) if binary else rng.normal(size=(n, p))
    w = rng.integers(1, 4, n) if weights else None
    return SurvivalDataset(t, d, Z, w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def datasets(draw, min_n=6, max_n=30, p=1, ties=True, weights=True):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return random_dataset(
        rng, n=n, p=p,
        tie_prob=draw(st.sampled_from([0.0, 0.5])) if ties else 0.0,
        weights=draw(st.booleans()) if weights else False,
    )
