"""Global Fréchet regression of SPD responses on Euclidean covariates.

The fitted value at ``x`` minimizes the weighted objective

    F(x, S) = mean_i w(x, X_i) W²(S, Q_i),
    w(x, X_i) = 1 + (x - X̄)^T Σ̂_ρ^{-1} (X_i - X̄),

and is computed by Riemannian gradient descent on the Bures-Wasserstein
manifold (``S <- G S G`` with ``G = I + η·mean_i w_i (T_S^{Q_i} - I)``).
Fits at many query points are run as one batch.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .config import DEFAULT, NumericConfig
from .errors import DimensionMismatch, NotPositiveDefinite, SingularCovariance
from .geometry import _ot_map, _w2, check_spd, sym

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    """Paired covariates ``(n, p)`` and SPD responses ``(n, d, d)``."""

    covariates: np.ndarray
    responses: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        Q = np.asarray(self.responses, dtype=float)
        if Q.ndim == 2:
            Q = Q[None]
        if X.ndim != 2 or Q.ndim != 3:
            raise DimensionMismatch("covariates must be (n, p) and responses (n, d, d)")
        if X.shape[0] != Q.shape[0]:
            raise DimensionMismatch(f"{X.shape[0]} covariate rows but {Q.shape[0]} responses")
        if X.shape[0] < 2:
            raise DimensionMismatch("need at least two samples")
        if not np.all(np.isfinite(X)):
            raise DimensionMismatch("covariates must be finite")
        check_spd(Q, name="response")
        object.__setattr__(self, "covariates", X)
        object.__setattr__(self, "responses", sym(Q))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def d(self) -> int:
        return self.responses.shape[-1]


@dataclass(frozen=True)
class MomentEstimates:
    mean: np.ndarray
    cov_reg: np.ndarray
    rho: float
    cov: np.ndarray = field(repr=False)

    @property
    def precision(self) -> np.ndarray:
        return np.linalg.inv(self.cov_reg)


@dataclass(frozen=True)
class FitConfig:
    """Settings for the gradient descent fit.

    ``init`` is ``"identity"``, ``"mean"`` (arithmetic mean of the
    responses) or an explicit SPD matrix.
    """

    eta: float = 1.0
    max_iters: int = 30
    eps: float = 1e-6
    init: Literal["identity", "mean"] | np.ndarray = "identity"

    def __post_init__(self):
        if not self.eta > 0 or not self.eps > 0 or self.max_iters < 1:
            raise ValueError("need eta > 0, eps > 0 and max_iters >= 1")
        if isinstance(self.init, str) and self.init not in ("identity", "mean"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class RegressionFit:
    """Result of one fit.

    ``grad_norm`` is the Frobenius norm of ``mean_i w_i (T_S^{Q_i} - I)`` at
    the last iterate where it was evaluated; when ``converged`` that iterate
    is ``estimate`` itself.
    """

    estimate: np.ndarray
    grad_norm: float
    iters: int
    converged: bool


def _mean0(a: np.ndarray) -> np.ndarray:
    # pairwise summation over the sample axis: reduce over a contiguous last axis
    return np.ascontiguousarray(np.moveaxis(a, 0, -1)).sum(axis=-1) / a.shape[0]


def empirical_moments(data: Dataset, rho: float | None = None, cfg: NumericConfig = DEFAULT) -> MomentEstimates:
    """Sample mean and ridge-regularized covariance of the covariates.

    ``rho=None`` uses ``1/n``. With ``rho=0`` a numerically singular
    covariance raises :class:`SingularCovariance`.
    """
    X = data.covariates
    n = data.n
    if rho is None:
        rho = 1.0 / n
    rho = float(rho)
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    if rho != 0.0 and not np.isclose(rho, 1.0 / n, rtol=1e-12, atol=0.0):
        warnings.warn(f"rho={rho} is neither 0 nor 1/n", stacklevel=2)
    mean = _mean0(X)
    Z = X - mean
    cov = sym(_mean0(Z[:, :, None] * Z[:, None, :]))
    if rho == 0.0:
        lam = np.linalg.eigvalsh(cov)
        if lam[0] <= 0 or lam[-1] / lam[0] > cfg.cond_max:
            raise SingularCovariance("covariate covariance is singular; use rho > 0")
    cov_reg = cov + rho * np.eye(data.p)
    return MomentEstimates(mean=mean, cov_reg=cov_reg, rho=rho, cov=cov)


def weight_matrix(xs: np.ndarray, moments: MomentEstimates, data: Dataset) -> np.ndarray:
    """Weights ``w(x_k, X_i)`` for a stack of query points, shape ``(m, n)``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[1] != data.p:
        raise DimensionMismatch(f"query point has {xs.shape[1]} coordinates, covariates have {data.p}")
    try:
        a = np.linalg.solve(moments.cov_reg, (xs - moments.mean).T).T
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(str(exc)) from exc
    return 1.0 + a @ (data.covariates - moments.mean).T


def weights(x, moments: MomentEstimates, data: Dataset) -> np.ndarray:
    return weight_matrix(np.reshape(np.asarray(x, dtype=float), (1, -1)), moments, data)[0]


def objective(x, S: np.ndarray, data: Dataset, moments: MomentEstimates) -> float:
    """Weighted Fréchet objective ``mean_i w(x, X_i) W²(S, Q_i)``; may be negative."""
    S = check_spd(S, name="S")
    w = weights(x, moments, data)
    return float(_mean0(w * _w2(S[None], data.responses)))


def _initial(init, data: Dataset) -> np.ndarray:
    if isinstance(init, str):
        if init == "identity":
            return np.eye(data.d)
        return sym(_mean0(data.responses))
    S0 = check_spd(np.asarray(init, dtype=float), name="init")
    if S0.shape != (data.d, data.d):
        raise DimensionMismatch("custom init has the wrong dimension")
    return S0


def _weighted_residual(S: np.ndarray, w: np.ndarray, data: Dataset, cfg: NumericConfig) -> np.ndarray:
    T = _ot_map(S[:, None], data.responses[None], cfg)
    R = T - np.eye(data.d)
    return _mean0(np.moveaxis(w[:, :, None, None] * R, 1, 0))


def fit_many(
    xs: np.ndarray,
    data: Dataset,
    moments: MomentEstimates,
    config: FitConfig = FitConfig(),
    cfg: NumericConfig = DEFAULT,
) -> list[RegressionFit]:
    """Fit the regression at every row of ``xs`` in one batch.

    Each query point follows its own iteration independently; batching only
    shares the linear algebra calls.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    W = weight_matrix(xs, moments, data)
    m, d = xs.shape[0], data.d
    S = np.broadcast_to(_initial(config.init, data), (m, d, d)).copy()
    grad_norm = np.full(m, np.inf)
    iters = np.zeros(m, dtype=int)
    done = np.zeros(m, dtype=bool)
    eye = np.eye(d)
    for t in range(1, config.max_iters + 1):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        grad = _weighted_residual(S[act], W[act], data, cfg)
        gn = np.linalg.norm(grad, axis=(-2, -1))
        grad_norm[act] = gn
        iters[act] = t
        stop = config.eta * gn < config.eps
        done[act[stop]] = True
        move = act[~stop]
        if move.size == 0:
            continue
        G = eye + config.eta * grad[~stop]
        S_new = sym(G @ S[move] @ G)
        lam, V = np.linalg.eigh(S_new)
        low = lam[:, 0]
        if np.any(low <= -cfg.eig_floor):
            k = int(move[np.argmin(low)])
            raise NotPositiveDefinite(
                f"iterate lost positive definiteness at iteration {t}", iteration=t, query=k
            )
        clamp = low <= cfg.eig_floor
        if np.any(clamp):
            warnings.warn(f"clamping near-singular iterate at iteration {t}", RuntimeWarning, stacklevel=2)
            lam_c = np.maximum(lam[clamp], cfg.eig_floor)
            S_new[clamp] = sym((V[clamp] * lam_c[:, None, :]) @ np.swapaxes(V[clamp], -1, -2))
        S[move] = S_new
    fits = [
        RegressionFit(estimate=S[k].copy(), grad_norm=float(grad_norm[k]), iters=int(iters[k]), converged=bool(done[k]))
        for k in range(m)
    ]
    if not np.all(done):
        log.debug("%d of %d fits hit max_iters", int((~done).sum()), m)
    return fits


def fit(x, data: Dataset, moments: MomentEstimates, config: FitConfig = FitConfig(), cfg: NumericConfig = DEFAULT) -> RegressionFit:
    """Fitted SPD matrix at the covariate value ``x``."""
    return fit_many(np.reshape(np.asarray(x, dtype=float), (1, -1)), data, moments, config, cfg)[0]


def barycenter(data: Dataset, moments: MomentEstimates, config: FitConfig = FitConfig(), cfg: NumericConfig = DEFAULT) -> RegressionFit:
    """Fit at ``x = X̄``, where every weight is 1: the Fréchet mean of the responses."""
    return fit(moments.mean, data, moments, config, cfg)
