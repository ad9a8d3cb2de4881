"""Shared builders for the test suite."""

import numpy as np
import pytest

from heca.panel import ForecastPanel


def make_panel(values, target, mask=None, periods=None, experts=None):
    values = np.asarray(values, dtype=np.float64)
    t, m = values.shape
    if mask is None:
        mask = np.isfinite(values)
    if periods is None:
        periods = tuple(f"{2000 + i // 4}Q{i % 4 + 1}" for i in range(t))
    if experts is None:
        experts = tuple(f"e{j + 1}" for j in range(m))
    return ForecastPanel(periods=tuple(periods), experts=tuple(experts),
                         values=values, mask=np.asarray(mask, dtype=bool),
                         target=np.asarray(target, dtype=np.float64))


def trio_panel(horizon=46, n_noise=3, seed=7, noise_scale=0.8):
    """Zero-noise construction: target is the mean of experts 1..3.

    The first three experts are identical copies of the target path, the
    rest add idiosyncratic noise, so every committee size can reproduce the
    target exactly while size 3 uniquely prefers the equal-split trio.
    """
    rng = np.random.default_rng(seed)
    base = np.cumsum(rng.normal(0.1, 0.5, size=horizon)) + 2.0
    cols = [base, base, base]
    for _ in range(n_noise):
        cols.append(base + noise_scale * rng.normal(size=horizon))
    values = np.column_stack(cols)
    return make_panel(values, base.copy())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
