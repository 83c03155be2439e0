"""Exact NIG posteriors for fixed (phi, delta2).

Latent model: gamma = [beta; w] solves the augmented least-squares problem
min ||y* - X* gamma||^2 with

    X* = [ X/d   I/d              ]      y* = [ y/d        ]
         [ L^-1  0                ]           [ L^-1 mu    ]   (proper prior only)
         [ 0     D^{-1/2} (I - A) ]           [ 0          ]

where d = sqrt(delta2) and V = L L^T. The posterior is
sigma2 | y ~ IG(a*, b*), gamma | sigma2, y ~ N(gamma_hat, sigma2 (X*^T X*)^{-1}).

Response model: w is integrated out and K = M + delta2*I is replaced by its
NNGP approximation; only (beta, sigma2) are inferred and all dense algebra is
p x p.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy import stats
from scipy.linalg import cho_factor, cho_solve

from conjnngp.exceptions import CGConvergenceError, InvalidInputError, NumericalError
from conjnngp.quant.nig import BetaPrior, draw_sigma2
from conjnngp.quant.nngp_factor import NNGPFactor
from conjnngp.quant.rng import substream
from conjnngp.quant.sparse_solver import (
    CGConfig,
    CGResult,
    SparseSym,
    assemble_normal_equations,
    assemble_rhs,
    cg_solve,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NIGPosterior:
    gamma_hat: np.ndarray
    sys: SparseSym
    a_star: float
    b_star: float
    delta2: float
    phi: float
    factor: NNGPFactor = field(repr=False)
    prior: BetaPrior = field(repr=False)
    cg: Optional[CGResult] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.sys.n

    @property
    def p(self) -> int:
        return self.sys.p

    @property
    def beta_hat(self) -> np.ndarray:
        return self.gamma_hat[: self.p]

    @property
    def w_hat(self) -> np.ndarray:
        return self.gamma_hat[self.p:]

    @property
    def sigma2_mean(self) -> float:
        if self.a_star <= 1:
            raise InvalidInputError("posterior mean of sigma2 needs a* > 1")
        return self.b_star / (self.a_star - 1.0)

    def stacked_transpose(self, u: np.ndarray) -> np.ndarray:
        """X*^T u for u = [u1 (n); u2 (p, proper prior only); u3 (n)]."""
        n, p = self.n, self.p
        d = np.sqrt(self.delta2)
        u1 = u[:n]
        k = 0 if self.prior.is_flat else p
        u2, u3 = u[n:n + k], u[n + k:]
        top = self.sys.x.T @ u1 / d
        if k:
            top = top + self.prior.l_inv_t(u2)
        f = self.factor
        bottom = u1 / d + f.i_minus_a().T @ (u3 / np.sqrt(f.d))
        return np.concatenate([top, bottom])

    @property
    def stacked_rows(self) -> int:
        return 2 * self.n + (0 if self.prior.is_flat else self.p)


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Successful draws only; `draw_index` maps rows back to draw counters.
    Response-model draws carry an (L, 0) `w`."""

    beta: np.ndarray
    w: np.ndarray
    sigma2: np.ndarray
    delta2: float
    phi: float
    seed: int
    draw_index: np.ndarray
    iters: np.ndarray
    rel_residuals: np.ndarray
    failed: tuple[int, ...] = ()
    model: Literal["latent", "response"] = "latent"

    @property
    def L(self) -> int:
        return int(self.sigma2.size)

    @property
    def tau2(self) -> np.ndarray:
        return self.delta2 * self.sigma2


@dataclass(frozen=True, eq=False)
class ResponsePosterior:
    mu_star: np.ndarray
    v_star: np.ndarray
    a_star: float
    b_star: float
    delta2: float
    phi: float
    resid: np.ndarray = field(repr=False)

    @property
    def p(self) -> int:
        return int(self.mu_star.size)

    @property
    def sigma2_mean(self) -> float:
        if self.a_star <= 1:
            raise InvalidInputError("posterior mean of sigma2 needs a* > 1")
        return self.b_star / (self.a_star - 1.0)


def _as_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise InvalidInputError(f"design {X.shape} and response {y.shape} disagree")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("response contains NaN or Inf", index=int(np.flatnonzero(~np.isfinite(y))[0]))
    return X, y


def fit_latent(X, y, factor: NNGPFactor, delta2: float, prior: BetaPrior,
               cfg: CGConfig | None = None) -> NIGPosterior:
    X, y = _as_xy(X, y)
    n, p = X.shape
    sys = assemble_normal_equations(X, factor, delta2, prior)
    rhs = assemble_rhs(X, y, factor, delta2, prior)
    res = cg_solve(sys, rhs, cfg)

    gamma = res.x
    beta, w = gamma[:p], gamma[p:]
    resid = y - X @ beta - w
    ww = factor.whiten(w)
    b_star = prior.b_sigma + 0.5 * (resid @ resid / delta2 + prior.quad(beta) + ww @ ww)
    a_star = prior.a_sigma + n / 2.0
    logger.debug("fit_latent n=%d p=%d phi=%g delta2=%g a_star=%g b_star=%.6g cg_iters=%d",
                 n, p, factor.phi, delta2, a_star, b_star, res.iters)
    return NIGPosterior(gamma_hat=gamma, sys=sys, a_star=a_star, b_star=float(b_star),
                        delta2=float(delta2), phi=factor.phi, factor=factor, prior=prior, cg=res)


def sample_latent(post: NIGPosterior, L: int, seed: int, cfg: CGConfig | None = None,
                  workers: int = 1) -> PosteriorDraws:
    """Draw l uses substream(seed, l) only, so output is schedule-independent."""
    if L < 1:
        raise InvalidInputError("number of draws L must be >= 1")
    if seed is None:
        raise InvalidInputError("seed is mandatory for posterior sampling")
    n, p = post.n, post.p
    rows = post.stacked_rows

    def one(l: int):
        rng = substream(seed, l)
        s2 = draw_sigma2(rng, post.a_star, post.b_star)
        u = np.sqrt(s2) * rng.standard_normal(rows)
        try:
            res = cg_solve(post.sys, post.stacked_transpose(u), cfg)
        except CGConvergenceError as exc:
            logger.warning("sample_latent draw=%d failed iters=%d rel_residual=%.3e",
                           l, exc.iters, exc.rel_residual)
            return l, None
        return l, (post.gamma_hat + res.x, s2, res.iters, res.rel_residual)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(pool.map(one, range(L)))

    ok = [(l, r) for l, r in results if r is not None]
    failed = tuple(l for l, r in results if r is None)
    gam = np.array([r[0] for _, r in ok]).reshape(len(ok), n + p)
    return PosteriorDraws(
        beta=gam[:, :p],
        w=gam[:, p:],
        sigma2=np.array([r[1] for _, r in ok], dtype=float),
        delta2=post.delta2,
        phi=post.phi,
        seed=int(seed),
        draw_index=np.array([l for l, _ in ok], dtype=np.int64),
        iters=np.array([r[2] for _, r in ok], dtype=np.int64),
        rel_residuals=np.array([r[3] for _, r in ok], dtype=float),
        failed=failed,
    )


def fit_response(X, y, factor: NNGPFactor, prior: BetaPrior) -> ResponsePosterior:
    if factor.target != "response":
        raise InvalidInputError("fit_response needs a response-target factor")
    X, y = _as_xy(X, y)
    n, p = X.shape
    if X.shape[0] != factor.n:
        raise InvalidInputError(f"design has {n} rows, factor has n={factor.n}")
    prior.check_dim(p)
    if prior.is_flat and p > 0 and p >= n:
        raise InvalidInputError(f"flat prior with p={p} >= n={n} is not identifiable")

    wx = factor.whiten(X) if p else np.zeros((n, 0))
    wy = factor.whiten(y)
    prec = prior.precision(p) + wx.T @ wx
    rhs = prior.precision_mean(p) + wx.T @ wy
    if p:
        cf = cho_factor(prec, lower=True)
        mu_star = cho_solve(cf, rhs)
        v_star = cho_solve(cf, np.eye(p))
    else:
        mu_star, v_star = np.zeros(0), np.zeros((0, 0))
    energy = prior.mean_quad() + wy @ wy
    explained = mu_star @ prec @ mu_star
    b_star = prior.b_sigma + 0.5 * (energy - explained)
    # energy - explained is a sum of squares; only round-off may push it below zero
    if b_star < prior.b_sigma - 1e-10 * max(1.0, energy):
        raise NumericalError(
            f"response b_star={b_star:.6g} below b_sigma={prior.b_sigma:g} "
            f"(energy={energy:.6g} explained={explained:.6g}); the normal equations are ill-conditioned"
        )
    b_star = max(b_star, prior.b_sigma)
    a_star = prior.a_sigma + n / 2.0
    logger.debug("fit_response n=%d p=%d phi=%g delta2=%g b_star=%.6g", n, p, factor.phi, factor.delta2, b_star)
    return ResponsePosterior(mu_star=mu_star, v_star=v_star, a_star=a_star,
                             b_star=float(b_star), delta2=factor.delta2,
                             phi=factor.phi, resid=y - X @ mu_star)


def sample_response(rp: ResponsePosterior, L: int, seed: int) -> PosteriorDraws:
    """sigma2 ~ IG(a*, b*), beta | sigma2 ~ N(mu*, sigma2 V*)."""
    if L < 1:
        raise InvalidInputError("number of draws L must be >= 1")
    p = rp.p
    chol = np.linalg.cholesky(rp.v_star) if p else np.zeros((0, 0))
    beta = np.empty((L, p))
    s2 = np.empty(L)
    for l in range(L):
        rng = substream(seed, l)
        s2[l] = draw_sigma2(rng, rp.a_star, rp.b_star)
        beta[l] = rp.mu_star + np.sqrt(s2[l]) * (chol @ rng.standard_normal(p))
    return PosteriorDraws(
        beta=beta, w=np.zeros((L, 0)), sigma2=s2, delta2=rp.delta2, phi=rp.phi, seed=int(seed),
        draw_index=np.arange(L), iters=np.zeros(L, dtype=np.int64), rel_residuals=np.zeros(L),
        model="response",
    )


def response_beta_quantiles(rp: ResponsePosterior, probs=(0.025, 0.5, 0.975)) -> np.ndarray:
    """Analytic marginal quantiles: beta_j ~ t_{2a*}(mu*_j, (b*/a*) V*_jj). Shape (p, len(probs))."""
    scale = np.sqrt(rp.b_star / rp.a_star * np.diag(rp.v_star))
    q = stats.t.ppf(np.asarray(probs, dtype=float), df=2.0 * rp.a_star)
    return rp.mu_star[:, None] + scale[:, None] * q[None, :]
