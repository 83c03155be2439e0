import numpy as np
import pytest
import scipy.sparse as sp
from scipy import stats

from conjnngp.exceptions import InvalidInputError, NumericalError
from conjnngp.quant import conjugate
from conjnngp.quant.conjugate import (
    fit_latent,
    fit_response,
    response_beta_quantiles,
    sample_latent,
    sample_response,
)
from conjnngp.quant.covariance import KernelSpec
from conjnngp.quant.geometry import LocationSet, build_training_neighbors, order_locations
from conjnngp.quant.nig import BetaPrior, draw_sigma2
from conjnngp.quant.nngp_factor import NNGPFactor, build_factor
from conjnngp.quant.rng import substream
from conjnngp.quant.sparse_solver import CGConfig

from tests.oracles import dense_conjugate_latent, dense_conjugate_response, exp_corr, stacked_design

TIGHT = CGConfig(rel_tol=1e-12)


def _problem(n, m, phi=6.0, seed=0, target="latent", delta2=0.0):
    rng = np.random.default_rng(seed)
    locs = order_locations(LocationSet.from_coords(rng.uniform(size=(n, 2))))
    f = build_factor(locs, build_training_neighbors(locs, m), KernelSpec(phi=phi), target, delta2)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = X @ [1.0, -2.0] + np.linalg.cholesky(exp_corr(locs.coords, phi)) @ rng.standard_normal(n) \
        + 0.4 * rng.standard_normal(n)
    return locs, f, X, y


def test_single_observation_closed_form():
    f = NNGPFactor(a=sp.csr_matrix((1, 1)), d=np.ones(1), target="latent", phi=1.0)
    y, d2 = 3.0, 0.5
    post = fit_latent(np.zeros((1, 0)), np.array([y]), f, d2, BetaPrior.flat(2.0, 1.0), TIGHT)
    assert post.w_hat[0] == pytest.approx(y / (1 + d2))
    assert post.a_star == 2.5
    assert post.b_star == pytest.approx(1.0 + y ** 2 / (2 * (1 + d2)))


@pytest.mark.parametrize("prior", [BetaPrior.flat(2.0, 1.5),
                                   BetaPrior.proper([0.0, 0.0], [[10.0, 0.0], [0.0, 5.0]], 2.0, 1.5)])
def test_latent_fit_matches_dense_stacking(prior):
    _, f, X, y = _problem(150, 149)
    post = fit_latent(X, y, f, 0.2, prior, TIGHT)
    gamma, a_star, b_star = dense_conjugate_latent(X, y, f, 0.2, prior)
    assert np.allclose(post.gamma_hat, gamma, rtol=1e-6, atol=1e-8)
    assert post.a_star == a_star
    assert post.b_star == pytest.approx(b_star, rel=1e-8)
    assert post.beta_hat.shape == (2,) and post.w_hat.shape == (150,)


def test_latent_fit_scale_equivariance():
    _, f, X, y = _problem(80, 10)
    a = fit_latent(X, y, f, 0.3, BetaPrior.flat(), TIGHT)
    b = fit_latent(X, 4.0 * y, f, 0.3, BetaPrior.flat(), TIGHT)
    assert np.allclose(b.gamma_hat, 4.0 * a.gamma_hat, rtol=1e-7, atol=1e-9)


def test_sigma2_mean():
    _, f, X, y = _problem(40, 5)
    post = fit_latent(X, y, f, 0.3, BetaPrior.flat(), TIGHT)
    assert post.sigma2_mean == pytest.approx(post.b_star / (post.a_star - 1))


def test_latent_fit_rejects_bad_inputs():
    _, f, X, y = _problem(20, 3)
    with pytest.raises(InvalidInputError):
        fit_latent(X, y[:-1], f, 0.3, BetaPrior.flat())
    bad = y.copy()
    bad[4] = np.nan
    with pytest.raises(InvalidInputError) as err:
        fit_latent(X, bad, f, 0.3, BetaPrior.flat())
    assert err.value.index == 4
    _, rf, _, _ = _problem(20, 3, target="response", delta2=0.2)
    with pytest.raises(InvalidInputError):
        fit_latent(X, y, rf, 0.3, BetaPrior.flat())


def test_sample_latent_is_reproducible_across_workers():
    _, f, X, y = _problem(60, 8)
    post = fit_latent(X, y, f, 0.3, BetaPrior.flat())
    one = sample_latent(post, 12, seed=5, workers=1)
    many = sample_latent(post, 12, seed=5, workers=4)
    assert np.array_equal(one.beta, many.beta)
    assert np.array_equal(one.w, many.w)
    assert np.array_equal(one.sigma2, many.sigma2)
    assert np.array_equal(one.tau2, 0.3 * one.sigma2)
    assert list(one.draw_index) == list(range(12))
    assert one.failed == ()
    other = sample_latent(post, 12, seed=6)
    assert not np.array_equal(one.sigma2, other.sigma2)


def test_sample_latent_sigma2_stream():
    _, f, X, y = _problem(30, 4)
    post = fit_latent(X, y, f, 0.3, BetaPrior.flat())
    draws = sample_latent(post, 3, seed=9)
    for l in range(3):
        assert draws.sigma2[l] == draw_sigma2(substream(9, l), post.a_star, post.b_star)


def test_sample_latent_records_failed_draws():
    _, f, X, y = _problem(60, 8)
    post = fit_latent(X, y, f, 0.05, BetaPrior.flat())
    draws = sample_latent(post, 4, seed=1, cfg=CGConfig(rel_tol=1e-14, max_iter=1))
    assert draws.failed == (0, 1, 2, 3)
    assert draws.L == 0
    assert draws.w.shape == (0, 60)


def test_sample_latent_needs_draws():
    _, f, X, y = _problem(20, 3)
    post = fit_latent(X, y, f, 0.3, BetaPrior.flat())
    with pytest.raises(InvalidInputError):
        sample_latent(post, 0, seed=1)


def test_sampler_moments_small():
    _, f, X, y = _problem(25, 24)
    prior = BetaPrior.flat(2.0, 1.0)
    post = fit_latent(X, y, f, 0.3, prior, TIGHT)
    draws = sample_latent(post, 4000, seed=2, cfg=TIGHT, workers=4)
    gam = np.hstack([draws.beta, draws.w])
    se = gam.std(axis=0) / np.sqrt(draws.L)
    assert np.all(np.abs(gam.mean(axis=0) - post.gamma_hat) < 4.5 * se)
    sd_s2 = draws.sigma2.std() / np.sqrt(draws.L)
    assert abs(draws.sigma2.mean() - post.sigma2_mean) < 4.5 * sd_s2
    xs = stacked_design(X, f, 0.3)
    target = post.sigma2_mean * np.linalg.inv(xs.T @ xs)
    emp = np.cov(gam, rowvar=False)
    assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.15


@pytest.mark.slow
def test_sampler_moments_large():
    _, f, X, y = _problem(80, 79, seed=3)
    post = fit_latent(X, y, f, 0.3, BetaPrior.flat(), TIGHT)
    draws = sample_latent(post, 20_000, seed=4, cfg=TIGHT, workers=4)
    gam = np.hstack([draws.beta, draws.w])
    se = gam.std(axis=0) / np.sqrt(draws.L)
    assert np.all(np.abs(gam.mean(axis=0) - post.gamma_hat) < 4.5 * se)
    xs = stacked_design(X, f, 0.3)
    target = post.sigma2_mean * np.linalg.inv(xs.T @ xs)
    assert np.linalg.norm(np.cov(gam, rowvar=False) - target) / np.linalg.norm(target) < 0.10


def test_response_fit_matches_dense_oracle():
    locs, f, X, y = _problem(150, 149, target="response", delta2=0.25)
    prior = BetaPrior.flat(2.0, 1.0)
    rp = fit_response(X, y, f, prior)
    k = exp_corr(locs.coords, 6.0) + 0.25 * np.eye(150)
    mu, v, a, b = dense_conjugate_response(X, y, k, prior)
    assert np.allclose(rp.mu_star, mu, rtol=1e-7, atol=1e-10)
    assert np.allclose(rp.v_star, v, rtol=1e-7, atol=1e-12)
    assert rp.a_star == a
    assert rp.b_star == pytest.approx(b, rel=1e-8)
    assert np.allclose(rp.resid, y - X @ mu)


def test_response_fit_needs_response_factor():
    _, f, X, y = _problem(20, 3)
    with pytest.raises(InvalidInputError):
        fit_response(X, y, f, BetaPrior.flat())


def test_response_fit_rejects_negative_scale(monkeypatch):
    _, f, X, _ = _problem(60, 8, target="response", delta2=0.2)
    y = X @ [2.0, -8.0] + 0.1 * np.random.default_rng(5).standard_normal(60)
    real_solve = conjugate.cho_solve
    monkeypatch.setattr(conjugate, "cho_solve", lambda cf, b: 10.0 * real_solve(cf, b))
    with pytest.raises(NumericalError, match="b_star"):
        fit_response(X, y, f, BetaPrior.flat(2.0, 1.0))


def test_response_draws_follow_t_marginals():
    _, f, X, y = _problem(100, 10, target="response", delta2=0.3)
    rp = fit_response(X, y, f, BetaPrior.flat())
    draws = sample_response(rp, 5000, seed=3)
    assert draws.model == "response"
    assert draws.w.shape == (5000, 0)
    assert np.array_equal(draws.tau2, rp.delta2 * draws.sigma2)
    scale = np.sqrt(rp.b_star / rp.a_star * rp.v_star[1, 1])
    t_dist = stats.t(df=2 * rp.a_star, loc=rp.mu_star[1], scale=scale)
    assert stats.kstest(draws.beta[:, 1], t_dist.cdf).pvalue > 0.01
    q = response_beta_quantiles(rp)
    assert q.shape == (2, 3)
    assert q[1, 1] == pytest.approx(rp.mu_star[1])
    assert q[1, 0] == pytest.approx(t_dist.ppf(0.025))
