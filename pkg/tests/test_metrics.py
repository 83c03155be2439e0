import numpy as np
import pytest

from conjnngp.exceptions import CapacityError, InvalidInputError
from conjnngp.quant.conjugate import PosteriorDraws
from conjnngp.quant.covariance import KernelSpec
from conjnngp.quant.geometry import LocationSet, build_training_neighbors, order_locations
from conjnngp.quant.metrics import (
    GaussianSpec,
    collapsed_model_builder,
    coverage,
    draw_intervals,
    empirical_kl,
    kl_divergence,
    mse_w,
    parameter_summary,
    rmspe,
    true_collapsed,
)
from conjnngp.quant.nngp_factor import build_factor
from conjnngp.quant.simulate import SimParams, simulate_gp


def _draws(beta, sigma2, delta2, w=None):
    beta = np.atleast_2d(beta)
    L = beta.shape[0]
    return PosteriorDraws(beta=beta, w=np.zeros((L, 0)) if w is None else w, sigma2=np.asarray(sigma2, float),
                          delta2=delta2, phi=1.0, seed=0, draw_index=np.arange(L),
                          iters=np.zeros(L, dtype=int), rel_residuals=np.zeros(L))


def test_kl_identical_is_zero():
    cov = np.array([[2.0, 0.3], [0.3, 1.0]])
    p = GaussianSpec(mean=[1.0, 2.0], cov=cov)
    assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-10)


def test_kl_mean_shift_closed_form():
    p = GaussianSpec(mean=[0.0], cov=[[1.0]])
    q = GaussianSpec(mean=[0.7], cov=[[1.0]])
    assert kl_divergence(p, q) == pytest.approx(0.7 ** 2 / 2)


def test_kl_variance_ratio_closed_form():
    p = GaussianSpec(mean=[0.0], cov=[[2.0]])
    q = GaussianSpec(mean=[0.0], cov=[[1.0]])
    assert kl_divergence(p, q) == pytest.approx(0.5 * (0.5 - np.log(0.5) - 1.0))


def test_kl_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        kl_divergence(GaussianSpec([0.0], [[1.0]]), GaussianSpec([0.0, 0.0], np.eye(2)))
    with pytest.raises(InvalidInputError):
        kl_divergence(GaussianSpec([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]), GaussianSpec([0.0, 0.0], np.eye(2)))
    with pytest.raises(InvalidInputError):
        GaussianSpec([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]])


def test_empirical_kl_at_truth_is_zero():
    rng = np.random.default_rng(0)
    n = 40
    coords = rng.uniform(size=(n, 2))
    locs = order_locations(LocationSet.from_coords(coords))
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    f = build_factor(locs, build_training_neighbors(locs, n - 1), KernelSpec(phi=10.0))
    truth = true_collapsed(locs.coords, X, [1.0, -5.0], 2.0, 0.2, 10.0)
    draws = _draws(np.tile([1.0, -5.0], (3, 1)), [2.0, 2.0, 2.0], 0.1)
    s = empirical_kl(draws, collapsed_model_builder(X, f), truth, workers=2)
    assert s.mean == pytest.approx(0.0, abs=1e-7)
    assert s.hi95 == pytest.approx(0.0, abs=1e-7)
    assert not s.degenerate


def test_empirical_kl_single_draw_degenerate():
    truth = GaussianSpec([0.0], [[1.0]])

    def builder(beta, s2, t2):
        return GaussianSpec([beta[0]], [[s2 + t2]])

    s = empirical_kl(_draws([[0.5]], [1.0], 0.0), builder, truth)
    assert s.degenerate
    assert s.mean == s.lo95 == s.hi95 == pytest.approx(0.125)


def test_true_collapsed_cap(monkeypatch):
    from conjnngp.config import settings

    monkeypatch.setattr(settings, "dense_cap", 3)
    with pytest.raises(CapacityError):
        true_collapsed(np.zeros((4, 2)), np.ones((4, 1)), [0.0], 1.0, 0.1, 1.0)


def test_rmspe_and_mse():
    t = np.array([1.0, 2.0, 3.0])
    assert rmspe(t, t) == 0.0
    assert rmspe(t, t + 0.5) == pytest.approx(0.5)
    assert mse_w(t, t + 0.5) == pytest.approx(0.75)
    with pytest.raises(InvalidInputError):
        rmspe(t, t[:2])


def test_coverage_and_intervals():
    samples = np.random.default_rng(1).standard_normal((4000, 3))
    lo, hi = draw_intervals(samples)
    assert np.allclose(lo, -1.96, atol=0.15)
    assert np.allclose(hi, 1.96, atol=0.15)
    assert coverage(lo, hi, [0.0, 5.0, -0.5]) == pytest.approx(2 / 3)


def test_parameter_summary_layout():
    d = _draws(np.array([[1.0, 2.0], [3.0, 4.0]]), [1.0, 2.0], 0.5)
    df = parameter_summary(d)
    assert list(df["parameter"]) == ["beta_0", "beta_1", "sigma2", "tau2"]
    assert list(df.columns) == ["parameter", "mean", "lo95", "hi95"]
    assert df.loc[df["parameter"] == "tau2", "mean"].item() == pytest.approx(0.75)


def test_simulate_is_reproducible_and_consistent():
    a = simulate_gp(120, seed=3, n_test=20)
    b = simulate_gp(120, seed=3, n_test=20)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.coords, b.coords)
    assert np.allclose(a.y, a.X @ a.beta + a.w + a.eps, rtol=0, atol=1e-12)
    assert a.is_test.sum() == 20
    assert np.all((a.coords >= 0) & (a.coords <= 1))
    assert not np.array_equal(a.y, simulate_gp(120, seed=4).y)


def test_simulate_independent_limit():
    sim = simulate_gp(2000, SimParams(tau2=0.0, phi=1e6, sigma2=2.0), seed=1)
    assert np.var(sim.y - sim.X @ sim.beta) == pytest.approx(2.0, rel=0.1)


def test_simulate_rejects_over_cap():
    with pytest.raises(CapacityError):
        simulate_gp(10, cap=5)
    with pytest.raises(InvalidInputError):
        simulate_gp(10, n_test=10)


def _sym(c):
    return 0.5 * (c + c.T)


def test_kl_rotation_invariant():
    rng = np.random.default_rng(5)
    for _ in range(5):
        a, b = rng.standard_normal((2, 4, 4))
        p = GaussianSpec(rng.standard_normal(4), a @ a.T + 0.5 * np.eye(4))
        q = GaussianSpec(rng.standard_normal(4), b @ b.T + 0.5 * np.eye(4))
        rot, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        p2 = GaussianSpec(rot @ p.mean, _sym(rot @ p.cov @ rot.T))
        q2 = GaussianSpec(rot @ q.mean, _sym(rot @ q.cov @ rot.T))
        assert kl_divergence(p2, q2) == pytest.approx(kl_divergence(p, q), rel=1e-8)
        assert kl_divergence(p, q) > 0


def test_simulated_field_variogram_decays():
    sim = simulate_gp(800, SimParams(tau2=0.0, phi=16.0, sigma2=2.0), seed=5)
    i, j = np.triu_indices(sim.n, k=1)
    h = np.linalg.norm(sim.coords[i] - sim.coords[j], axis=1)
    gamma = 0.5 * (sim.w[i] - sim.w[j]) ** 2

    def semivariance(lo, hi):
        return gamma[(h >= lo) & (h < hi)].mean()

    near, mid, far = semivariance(0.0, 0.03), semivariance(0.08, 0.12), semivariance(0.4, 0.6)
    assert near < mid < far
    assert near / far < 0.5
    assert 0.4 * 2.0 < far < 1.6 * 2.0
