import dataclasses

import numpy as np
import pytest

from conjnngp.exceptions import CapacityError, InvalidInputError
from conjnngp.quant.conjugate import fit_latent, fit_response, sample_latent
from conjnngp.quant.covariance import KernelSpec
from conjnngp.quant.geometry import (
    LocationSet,
    build_prediction_neighbors,
    build_training_neighbors,
    order_locations,
)
from conjnngp.quant.nig import BetaPrior
from conjnngp.quant.nngp_factor import build_factor, build_prediction_factor
from conjnngp.quant.prediction import (
    PredictiveSummary,
    predict_mean,
    predict_response_mean,
    predictive_t_exact,
    sample_predictive,
    summarize_draws,
)
from conjnngp.quant.simulate import simulate_gp
from conjnngp.quant.sparse_solver import CGConfig

from tests.oracles import exp_corr, stacked_design

PHI = 5.0
TIGHT = CGConfig(rel_tol=1e-12)


def _setup(n=80, m=None, n_pred=10, seed=0, delta2=0.3):
    rng = np.random.default_rng(seed)
    locs = order_locations(LocationSet.from_coords(rng.uniform(size=(n, 2))))
    m = m or n - 1
    f = build_factor(locs, build_training_neighbors(locs, m), KernelSpec(phi=PHI))
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = X @ [0.5, 1.5] + np.linalg.cholesky(exp_corr(locs.coords, PHI)) @ rng.standard_normal(n) \
        + np.sqrt(delta2) * rng.standard_normal(n)
    post = fit_latent(X, y, f, delta2, BetaPrior.flat(), TIGHT)
    pred = LocationSet.from_coords(rng.uniform(size=(n_pred, 2)))
    pm = min(m, n)
    pf = build_prediction_factor(locs, pred, build_prediction_neighbors(locs, pred, pm), KernelSpec(phi=PHI))
    Xu = np.column_stack([np.ones(n_pred), rng.standard_normal(n_pred)])
    return locs, X, y, post, pred, pf, Xu


def test_predict_mean_matches_dense_kriging():
    locs, _, _, post, pred, pf, Xu = _setup(m=80)
    mu_w, mu_y = predict_mean(post, Xu, pf)
    m = exp_corr(locs.coords, PHI)
    c = exp_corr(pred.coords, PHI, locs.coords)
    assert np.allclose(mu_w, c @ np.linalg.solve(m, post.w_hat), atol=1e-6)
    assert np.allclose(mu_y, Xu @ post.beta_hat + mu_w)


def test_exact_t_matches_dense_oracle():
    locs, X, _, post, pred, pf, Xu = _setup(m=80)
    s = predictive_t_exact(post, Xu, pf, cfg=TIGHT)
    xs = stacked_design(X, post.factor, post.delta2)
    cov = np.linalg.inv(xs.T @ xs)
    g = np.hstack([Xu, pf.a_u.toarray()])
    quad = np.einsum("ij,jk,ik->i", g, cov, g)
    expected = post.b_star / post.a_star * (quad + post.delta2 + pf.d_u)
    assert np.allclose(s.var_y_marginal, expected, rtol=1e-8)
    assert s.dof == 2 * post.a_star == 2 * 2.0 + 80
    lo, hi = s.interval()
    assert np.all(lo < s.mean_y) and np.all(s.mean_y < hi)
    assert np.allclose(s.sd_y ** 2, expected * s.dof / (s.dof - 2))
    frame = s.to_frame()
    assert list(frame.columns) == ["mean_w", "mean_y", "sd_y", "lo95", "hi95"]


def test_exact_t_coincident_site():
    locs, X, _, post, _, _, _ = _setup(n=40)
    pred = LocationSet.from_coords(locs.coords[[5]])
    pf = build_prediction_factor(locs, pred, build_prediction_neighbors(locs, pred, 39), KernelSpec(phi=PHI))
    xu = np.array([[1.0, 0.2]])
    s = predictive_t_exact(post, xu, pf, cfg=TIGHT)
    assert pf.d_u[0] == 0.0
    xs = stacked_design(X, post.factor, post.delta2)
    g = np.concatenate([xu[0], pf.a_u.toarray()[0]])
    quad = g @ np.linalg.solve(xs.T @ xs, g)
    assert s.var_y_marginal[0] == pytest.approx(post.b_star / post.a_star * (post.delta2 + quad), rel=1e-8)


def test_exact_t_cap():
    _, _, _, post, _, pf, Xu = _setup(n_pred=10)
    with pytest.raises(CapacityError):
        predictive_t_exact(post, Xu, pf, cap=5)


def test_prediction_checks_shapes_and_phi():
    locs, _, _, post, pred, pf, Xu = _setup()
    with pytest.raises(InvalidInputError):
        predict_mean(post, Xu[:, :1], pf)
    other = build_prediction_factor(locs, pred, build_prediction_neighbors(locs, pred, 5), KernelSpec(phi=PHI + 1))
    with pytest.raises(InvalidInputError):
        predict_mean(post, Xu, other)


def test_sample_predictive_shapes_and_determinism():
    _, _, _, post, _, pf, Xu = _setup(m=10, n_pred=25)
    draws = sample_latent(post, 20, seed=3)
    a = sample_predictive(draws, Xu, pf, post.delta2, seed=4, block=7, workers=1)
    b = sample_predictive(draws, Xu, pf, post.delta2, seed=4, block=7, workers=3)
    assert a.w.shape == a.y.shape == (25, 20)
    assert a.L == 20
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.w, b.w)


def test_sample_predictive_streams_by_chunk():
    _, _, _, post, pred, pf, Xu = _setup(m=10, n_pred=20)
    draws = sample_latent(post, 5, seed=1)
    whole = sample_predictive(draws, Xu, pf, post.delta2, seed=2, block=10)
    first = sample_predictive(draws, Xu[:10], _rows(pf, slice(0, 10)), post.delta2, seed=2, block=10)
    second = sample_predictive(draws, Xu[10:], _rows(pf, slice(10, 20)), post.delta2, seed=2, block=10,
                               first_block=1)
    assert np.array_equal(whole.y, np.vstack([first.y, second.y]))


def _rows(pf, sl):
    from conjnngp.quant.nngp_factor import PredictionFactor

    return PredictionFactor(a_u=pf.a_u[sl], d_u=pf.d_u[sl], phi=pf.phi, target=pf.target, delta2=pf.delta2)


def test_sample_predictive_coincident_site_has_no_stage_one_noise():
    locs, _, _, post, _, _, _ = _setup(n=30, m=5)
    pred = LocationSet.from_coords(locs.coords[[2]])
    pf = build_prediction_factor(locs, pred, build_prediction_neighbors(locs, pred, 5), KernelSpec(phi=PHI))
    draws = sample_latent(post, 6, seed=0)
    out = sample_predictive(draws, np.array([[1.0, 0.0]]), pf, post.delta2, seed=1)
    assert np.allclose(out.w[0], (pf.a_u @ draws.w.T)[0])


def test_sample_predictive_variance_matches_exact():
    _, _, _, post, _, pf, Xu = _setup(n=40, n_pred=3, seed=2)
    draws = sample_latent(post, 6000, seed=5, cfg=TIGHT, workers=4)
    out = sample_predictive(draws, Xu, pf, post.delta2, seed=6)
    exact = predictive_t_exact(post, Xu, pf, cfg=TIGHT)
    assert np.allclose(out.y.var(axis=1), exact.sd_y ** 2, rtol=0.1)
    assert np.allclose(out.y.mean(axis=1), exact.mean_y, atol=4 * exact.sd_y / np.sqrt(6000))


def test_sample_predictive_rejects_bad_inputs():
    _, _, _, post, _, pf, Xu = _setup(n_pred=2)
    draws = sample_latent(post, 2, seed=0)
    with pytest.raises(InvalidInputError):
        sample_predictive(draws, Xu[:, :1], pf, post.delta2, seed=0)
    with pytest.raises(InvalidInputError):
        sample_predictive(dataclasses.replace(draws, model="response"), Xu, pf, post.delta2, seed=0)


def test_summarize_draws():
    _, _, _, post, _, pf, Xu = _setup(m=10, n_pred=4)
    pd_draws = sample_predictive(sample_latent(post, 200, seed=0), Xu, pf, post.delta2, seed=0)
    frame = summarize_draws(pd_draws)
    assert frame.shape == (4, 5)
    assert np.all(frame["lo95"] < frame["mean_y"])
    assert np.all(frame["mean_y"] < frame["hi95"])


def test_predictive_summary_interval_width():
    s = PredictiveSummary(mean_w=np.zeros(1), mean_y=np.zeros(1), var_y_marginal=np.ones(1), dof=1e6)
    lo, hi = s.interval()
    assert hi[0] == pytest.approx(1.959964, abs=1e-4)
    assert lo[0] == pytest.approx(-hi[0])


def test_response_mean_predictor():
    rng = np.random.default_rng(0)
    n = 50
    locs = order_locations(LocationSet.from_coords(rng.uniform(size=(n, 2))))
    kernel = KernelSpec(phi=PHI)
    f = build_factor(locs, build_training_neighbors(locs, n - 1), kernel, "response", 0.2)
    X = np.column_stack([np.ones(n), rng.standard_normal(n)])
    y = X @ [1.0, 1.0] + rng.standard_normal(n)
    rp = fit_response(X, y, f, BetaPrior.flat())
    pred = LocationSet.from_coords(rng.uniform(size=(4, 2)))
    pf = build_prediction_factor(locs, pred, build_prediction_neighbors(locs, pred, n), kernel, "response", 0.2)
    Xu = np.column_stack([np.ones(4), rng.standard_normal(4)])
    k = exp_corr(locs.coords, PHI) + 0.2 * np.eye(n)
    c = exp_corr(pred.coords, PHI, locs.coords)
    expected = Xu @ rp.mu_star + c @ np.linalg.solve(k, y - X @ rp.mu_star)
    assert np.allclose(predict_response_mean(rp, Xu, pf), expected, atol=1e-8)
    with pytest.raises(InvalidInputError):
        predict_mean(fit_latent(X, y, build_factor(locs, build_training_neighbors(locs, 5), kernel), 0.2,
                                BetaPrior.flat()), Xu, pf)


def test_far_site_reverts_to_regression_mean():
    locs, _, _, post, _, _, _ = _setup(n=60, m=10)
    far = LocationSet.from_coords(locs.coords[:3] + 1e3)
    pf = build_prediction_factor(locs, far, build_prediction_neighbors(locs, far, 10), KernelSpec(phi=PHI))
    assert np.allclose(pf.a_u.toarray(), 0.0, atol=1e-12)
    assert np.allclose(pf.d_u, 1.0, atol=1e-12)
    Xu = np.array([[1.0, 0.3], [1.0, -1.2], [1.0, 2.0]])
    mu_w, mu_y = predict_mean(post, Xu, pf)
    assert np.allclose(mu_w, 0.0, atol=1e-12)
    assert np.allclose(mu_y, Xu @ post.beta_hat)
    s = predictive_t_exact(post, Xu, pf, cfg=TIGHT)
    assert np.all(s.var_y_marginal > post.b_star / post.a_star * (1.0 + post.delta2))


@pytest.mark.slow
def test_exact_t_coverage_on_simulated_fields():
    hits, total = 0, 0
    for seed in range(8):
        sim = simulate_gp(700, seed=seed, n_test=200)
        train = ~sim.is_test
        locs = order_locations(LocationSet.from_coords(sim.coords[train]))
        X, y = sim.X[train][locs.order], sim.y[train][locs.order]
        kernel = KernelSpec(phi=16.0)
        f = build_factor(locs, build_training_neighbors(locs, 10), kernel)
        post = fit_latent(X, y, f, 0.1, BetaPrior.flat(2.0, float(np.var(y, ddof=1))))
        test = LocationSet.from_coords(sim.coords[sim.is_test])
        pf = build_prediction_factor(locs, test, build_prediction_neighbors(locs, test, 10), kernel)
        lo, hi = predictive_t_exact(post, sim.X[sim.is_test], pf).interval()
        hits += int(np.sum((lo <= sim.y[sim.is_test]) & (sim.y[sim.is_test] <= hi)))
        total += int(sim.is_test.sum())
    assert 0.93 <= hits / total <= 0.97
