"""Posterior predictive inference at new locations.

Provides:
- predict_mean: [X(U) : A_u] gamma_hat.
- sample_predictive: two-stage sampler, one stream per (draw, site block).
- predictive_t_exact: exact multivariate-t marginals, one CG solve per site
  (desk scale, capped).
- predict_response_mean: kriging predictor of the response model.
- summarize_draws: per-site summary of predictive draws.

Summaries share the column layout mean_w, mean_y, sd_y, lo95, hi95.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from conjnngp.exceptions import CapacityError, InvalidInputError
from conjnngp.quant.conjugate import NIGPosterior, PosteriorDraws, ResponsePosterior
from conjnngp.quant.nngp_factor import PredictionFactor
from conjnngp.quant.rng import substream
from conjnngp.quant.sparse_solver import CGConfig, cg_solve

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PredictiveSummary:
    """`var_y_marginal` is the squared scale of the marginal t; the variance
    proper is var_y_marginal * dof / (dof - 2)."""

    mean_w: np.ndarray
    mean_y: np.ndarray
    var_y_marginal: np.ndarray
    dof: float
    interval_level: float = 0.95

    @property
    def sd_y(self) -> np.ndarray:
        return np.sqrt(self.var_y_marginal * self.dof / (self.dof - 2.0))

    def interval(self) -> tuple[np.ndarray, np.ndarray]:
        q = stats.t.ppf(0.5 + self.interval_level / 2.0, df=self.dof)
        half = q * np.sqrt(self.var_y_marginal)
        return self.mean_y - half, self.mean_y + half

    def to_frame(self) -> pd.DataFrame:
        lo, hi = self.interval()
        return pd.DataFrame({"mean_w": self.mean_w, "mean_y": self.mean_y,
                             "sd_y": self.sd_y, "lo95": lo, "hi95": hi})


@dataclass(frozen=True, eq=False)
class PredictiveDraws:
    """w and y are (n', L)."""

    w: np.ndarray
    y: np.ndarray
    seed: int

    @property
    def L(self) -> int:
        return int(self.y.shape[1])


def _check(Xu, pf: PredictionFactor, p: int, n: int, phi: float) -> np.ndarray:
    Xu = np.asarray(Xu, dtype=float)
    if Xu.ndim != 2 or Xu.shape != (pf.n_pred, p):
        raise InvalidInputError(f"prediction design must be ({pf.n_pred}, {p}), got {Xu.shape}")
    if pf.a_u.shape[1] != n:
        raise InvalidInputError(f"prediction factor has {pf.a_u.shape[1]} training columns, posterior has n={n}")
    if not np.isclose(pf.phi, phi, rtol=1e-12, atol=0.0):
        raise InvalidInputError(f"prediction factor phi={pf.phi} differs from posterior phi={phi}")
    return Xu


def predict_mean(post: NIGPosterior, Xu, pf: PredictionFactor) -> tuple[np.ndarray, np.ndarray]:
    if pf.target != "latent":
        raise InvalidInputError("latent prediction needs a latent-target prediction factor")
    Xu = _check(Xu, pf, post.p, post.n, post.phi)
    mu_w = pf.a_u @ post.w_hat
    return mu_w, Xu @ post.beta_hat + mu_w


def sample_predictive(draws: PosteriorDraws, Xu, pf: PredictionFactor, delta2: float, seed: int,
                      block: int | None = None, workers: int = 1, first_block: int = 0) -> PredictiveDraws:
    """w(U) ~ N(A_u w, sigma2 D_u), then y(U) ~ N(X(U) beta + w(U), delta2 sigma2 I).

    Site block b of draw l uses substream(seed, l, first_block + b); a caller
    streaming sites chunk by chunk (chunk size == block) passes the chunk
    number as first_block and gets the same numbers as one big call.
    """
    if draws.L < 1:
        raise InvalidInputError("no posterior draws to propagate")
    if draws.model != "latent":
        raise InvalidInputError("two-stage sampling needs latent-model draws")
    Xu = _check(Xu, pf, draws.beta.shape[1], draws.w.shape[1], draws.phi)
    if block is None:
        from conjnngp.config import settings
        block = settings.predict_block
    n_pred = pf.n_pred
    sd_u = np.sqrt(pf.d_u)
    starts = list(range(0, n_pred, block))
    w_out = np.empty((n_pred, draws.L))
    y_out = np.empty((n_pred, draws.L))

    def one(l: int):
        s2 = draws.sigma2[l]
        counter = int(draws.draw_index[l])
        for b, start in enumerate(starts):
            sl = slice(start, min(start + block, n_pred))
            rng = substream(seed, counter, first_block + b)
            k = sl.stop - sl.start
            w_u = pf.a_u[sl] @ draws.w[l] + np.sqrt(s2) * sd_u[sl] * rng.standard_normal(k)
            w_out[sl, l] = w_u
            y_out[sl, l] = Xu[sl] @ draws.beta[l] + w_u + np.sqrt(delta2 * s2) * rng.standard_normal(k)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        list(pool.map(one, range(draws.L)))
    return PredictiveDraws(w=w_out, y=y_out, seed=int(seed))


def predictive_t_exact(post: NIGPosterior, Xu, pf: PredictionFactor, delta2: float | None = None,
                       cfg: CGConfig | None = None, cap: int | None = None,
                       level: float = 0.95) -> PredictiveSummary:
    """Per site g = [x_u ; a_u]: scale^2 = (b*/a*) (g^T (X*^T X*)^{-1} g + delta2 + d_u)."""
    if cap is None:
        from conjnngp.config import settings
        cap = settings.exact_predict_cap
    if pf.n_pred > cap:
        raise CapacityError(f"exact t prediction is capped at {cap} sites (got {pf.n_pred}); "
                            "use sample_predictive for larger sets")
    mu_w, mu_y = predict_mean(post, Xu, pf)
    Xu = np.asarray(Xu, dtype=float)
    d2 = post.delta2 if delta2 is None else float(delta2)
    quad = np.empty(pf.n_pred)
    for i in range(pf.n_pred):
        g = np.concatenate([Xu[i], pf.a_u[i].toarray().ravel()])
        quad[i] = g @ cg_solve(post.sys, g, cfg).x if np.any(g) else 0.0
    var = post.b_star / post.a_star * (quad + d2 + pf.d_u)
    return PredictiveSummary(mean_w=mu_w, mean_y=mu_y, var_y_marginal=var,
                             dof=2.0 * post.a_star, interval_level=level)


def predict_response_mean(rp: ResponsePosterior, Xu, pf: PredictionFactor) -> np.ndarray:
    """X(U) mu* + A_u (y - X mu*), with A_u built on C(Pa, Pa) + delta2 I."""
    if pf.target != "response":
        raise InvalidInputError("response prediction needs a response-target prediction factor")
    Xu = _check(Xu, pf, rp.p, rp.resid.size, rp.phi)
    return Xu @ rp.mu_star + pf.a_u @ rp.resid


def summarize_draws(pd_draws: PredictiveDraws, level: float = 0.95) -> pd.DataFrame:
    tail = 50.0 * (1.0 - level)
    lo, hi = np.percentile(pd_draws.y, [tail, 100.0 - tail], axis=1)
    ddof = 1 if pd_draws.L > 1 else 0
    return pd.DataFrame({
        "mean_w": pd_draws.w.mean(axis=1),
        "mean_y": pd_draws.y.mean(axis=1),
        "sd_y": pd_draws.y.std(axis=1, ddof=ddof),
        "lo95": lo,
        "hi95": hi,
    })
