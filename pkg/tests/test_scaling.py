"""Large-n fits: wall clock and memory stay inside the sparse contract."""

import time

import numpy as np
import pytest

from conjnngp.quant.conjugate import fit_latent
from conjnngp.quant.covariance import KernelSpec
from conjnngp.quant.geometry import LocationSet, build_training_neighbors, order_locations
from conjnngp.quant.nig import BetaPrior
from conjnngp.quant.nngp_factor import build_factor
from conjnngp.utils.timing import PeakMemory

M = 10


def _surface(n, seed):
    rng = np.random.default_rng(seed)
    locs = order_locations(LocationSet.from_coords(rng.uniform(size=(n, 2))))
    c = locs.coords
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = X @ [1.0, -5.0] + np.sin(6 * c[:, 0]) * np.cos(6 * c[:, 1]) + 0.3 * rng.standard_normal(n)
    return locs, X, y


def _fit(locs, X, y):
    f = build_factor(locs, build_training_neighbors(locs, M, workers=4), KernelSpec(phi=16.0), workers=4)
    return fit_latent(X, y, f, 0.1, BetaPrior.flat(2.0, float(np.var(y, ddof=1))))


@pytest.mark.slow
def test_hundred_thousand_sites_fit():
    n = 100_000
    locs, X, y = _surface(n, seed=0)
    start = time.perf_counter()
    with PeakMemory() as mem:
        post = _fit(locs, X, y)
    assert time.perf_counter() - start < 10 * 60
    assert post.beta_hat[1] == pytest.approx(-5.0, abs=0.05)
    # a dense n x n matrix would need 80 GB
    assert mem.growth_mb * 2**20 < 64 * n * (M + 1) ** 2


@pytest.mark.slow
def test_two_hundred_thousand_sites_under_eight_gigabytes():
    locs, X, y = _surface(200_000, seed=1)
    with PeakMemory() as mem:
        post = _fit(locs, X, y)
    assert np.all(np.isfinite(post.gamma_hat))
    assert mem.peak_mb < 8 * 1024
