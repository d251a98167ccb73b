r"""Pointwise CLT intervals and the Wasserstein F-test of no covariate effect.

The test statistic is

    T = sum_i || H · (Q̂(X_i) - Q̂(X̄)) ||_F²,   H = -mean_i dT_{Q̂(X̄)}^{Q_i},

and under the null it is asymptotically ``sum_k λ_k χ²_p``, with ``λ_k`` the
eigenvalues of ``mean_i (T_i - I) ⊗ (T_i - I)``, ``T_i`` the transport map
from the barycenter to ``Q_i``. Null quantiles are Monte-Carlo estimates
from a seeded Philox stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .config import DEFAULT, NumericConfig
from .errors import DimensionMismatch, NonConvergence, NotPositiveDefinite, NumericalBreakdown, RankDeficientSurrogate, SingularOperator
from .geometry import SymOperator, _ot_map, dt_matrices, sym, vec
from .regression import (
    Dataset,
    FitConfig,
    MomentEstimates,
    RegressionFit,
    _mean0,
    empirical_moments,
    fit_many,
    weights,
)

DEFAULT_MC = 200_000


@dataclass(frozen=True)
class AugmentedMoments:
    """Second moments of ``(1, X)``: plain and with ``rho`` added to the covariate block."""

    vec_sigma_hat: np.ndarray
    vec_sigma_hat_reg: np.ndarray


def augmented_moments(data: Dataset, moments: MomentEstimates) -> AugmentedMoments:
    Xa = np.hstack([np.ones((data.n, 1)), data.covariates])
    sig = sym(_mean0(Xa[:, :, None] * Xa[:, None, :]))
    reg = sig.copy()
    reg[1:, 1:] += moments.rho * np.eye(data.p)
    return AugmentedMoments(sig, reg)


@dataclass(frozen=True)
class CltEstimate:
    xi_hat: SymOperator
    h_hat_inv: SymOperator
    omega_hat: np.ndarray
    entry_variances: np.ndarray


def clt_terms(x, data: Dataset, fit: RegressionFit, moments: MomentEstimates, cfg: NumericConfig = DEFAULT):
    """Per-sample influence terms ``(V1, V2)``, each of shape ``(n, d, d)``.

    ``V1_i = w_i (T_i - I)`` is the response noise and ``V2_i`` the effect
    of estimating the covariate moments, with ``T_i`` the map from the fit
    to ``Q_i``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d, n = data.d, data.n
    w = weights(x, moments, data)
    R = _ot_map(fit.estimate[None], data.responses, cfg) - np.eye(d)
    V1 = w[:, None, None] * R

    aug = augmented_moments(data, moments)
    P = np.linalg.inv(aug.vec_sigma_hat_reg)
    Xa = np.hstack([np.ones((n, 1)), data.covariates])
    left = np.concatenate([[1.0], x]) @ P
    # a_i = x⃗^T P (X⃗_i X⃗_i^T - Σ⃗) P, one row per sample
    a = ((Xa @ left)[:, None] * Xa - (left @ aug.vec_sigma_hat)[None, :]) @ P
    B = _mean0(Xa[:, :, None, None] * R[:, None])  # (p+1, d, d): mean_j X⃗_j[k] R_j
    V2 = -np.einsum("ik,kab->iab", a, B)
    return V1, V2


def clt_covariance(
    x,
    data: Dataset,
    fit: RegressionFit,
    moments: MomentEstimates,
    cfg: NumericConfig = DEFAULT,
) -> CltEstimate:
    """Plug-in asymptotic covariance of ``√n (Q̂(x) - Q*(x))``.

    The covariance operator is ``Ĥ⁻¹ Ξ̂ Ĥ⁻¹`` where ``Ξ̂ = mean_i vec(V_i) vec(V_i)^T``
    with ``V_i`` from :func:`clt_terms`, and ``Ĥ = mean_i(-w_i dT_{Q̂}^{Q_i})``.

    Raises
    ------
    SingularOperator
        If ``Ĥ`` has an eigenvalue below ``cfg.operator_floor`` on symmetric
        matrices.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    d = data.d
    V1, V2 = clt_terms(x, data, fit, moments, cfg)
    V = vec(V1 + V2)
    xi = sym(_mean0(V[:, :, None] * V[:, None, :]))

    w = weights(x, moments, data)
    Hm = _mean0(-w[:, None, None] * dt_matrices(fit.estimate[None], data.responses, cfg))
    H = SymOperator(sym(Hm))
    low = H.eigvalsh()[0]
    if low < cfg.operator_floor:
        raise SingularOperator(f"plug-in Hessian is singular at this x (smallest eigenvalue {low:.3g})")
    Hinv = H.inverse()
    omega = sym(Hinv.matrix @ xi @ Hinv.matrix.T)
    var = np.diag(omega).reshape(d, d, order="F")
    return CltEstimate(xi_hat=SymOperator(xi), h_hat_inv=Hinv, omega_hat=omega, entry_variances=var)


def confidence_interval(x, entry, level: float, clt: CltEstimate, fit: RegressionFit, n: int) -> tuple[float, float]:
    """Normal-theory interval for one entry of the fitted matrix at ``x``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    i, j = entry
    center = float(fit.estimate[i, j])
    v = max(float(clt.entry_variances[i, j]), 0.0)
    if v == 0.0:
        return center, center
    half = norm.ppf(0.5 * (1.0 + level)) * np.sqrt(v / n)
    return center - half, center + half


@dataclass(frozen=True)
class StatisticResult:
    statistic: float
    fits: list[RegressionFit]
    bary: RegressionFit
    h_hat: SymOperator


def test_statistic(data: Dataset, moments: MomentEstimates, config: FitConfig = FitConfig(), cfg: NumericConfig = DEFAULT) -> StatisticResult:
    """Wasserstein F-statistic from ``n + 1`` fits (every ``X_i`` and ``X̄``).

    Raises
    ------
    NonConvergence
        Listing the indices of fits that hit ``max_iters`` (index ``n`` is
        the barycenter).
    """
    xs = np.vstack([data.covariates, moments.mean[None]])
    fits = fit_many(xs, data, moments, config, cfg)
    failed = [k for k, f in enumerate(fits) if not f.converged]
    if failed:
        raise NonConvergence(f"{len(failed)} of {len(fits)} fits did not converge", indices=failed)
    bary = fits[-1]
    H = SymOperator(sym(-_mean0(dt_matrices(bary.estimate[None], data.responses, cfg))))
    diffs = vec(np.stack([f.estimate for f in fits[:-1]]) - bary.estimate)
    terms = np.sum((diffs @ H.matrix.T) ** 2, axis=1)
    terms[terms < cfg.tangent_floor**2] = 0.0
    stat = float(np.sum(terms))
    return StatisticResult(statistic=stat, fits=fits[:-1], bary=bary, h_hat=H)


test_statistic.__test__ = False  # not a pytest test


def null_eigenvalues(data, bary, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    """Eigenvalues of ``mean_i vec(T_i - I) vec(T_i - I)^T``, descending.

    ``data`` is a :class:`Dataset` or a stack of responses; ``bary`` a
    :class:`RegressionFit` or the barycenter matrix itself.
    """
    Q = np.asarray(getattr(data, "responses", data), dtype=float)
    if Q.ndim == 2:
        Q = Q[None]
    center = np.asarray(getattr(bary, "estimate", bary), dtype=float)
    d = Q.shape[-1]
    R = vec(_ot_map(center[None], Q, cfg) - np.eye(d))
    R[np.linalg.norm(R, axis=1) < cfg.tangent_floor] = 0.0
    gram = sym(_mean0(R[:, :, None] * R[:, None, :]))
    lam = np.linalg.eigvalsh(gram)[::-1]
    tol = cfg.null_neg_tol * max(1.0, float(lam[0]))
    if lam[-1] < -tol:
        raise NumericalBreakdown(f"null operator has negative eigenvalue {lam[-1]:.3g}")
    return np.maximum(lam, 0.0)


def _null_draws(lambdas, p_dof: int, mc: int, seed: int, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    lam = np.asarray(lambdas, dtype=float)
    if np.any(lam < 0):
        raise ValueError("weights of the chi-square mixture must be nonnegative")
    if mc < 1000:
        raise ValueError("mc must be at least 1000")
    top = lam.max(initial=0.0)
    lam = lam[lam > cfg.null_rel_drop * top] if top > 0 else lam[:0]
    rng = np.random.Generator(np.random.Philox(seed))
    if lam.size == 0:
        return np.zeros(mc)
    draws = rng.chisquare(p_dof, size=(mc, lam.size)) @ lam
    return np.sort(draws)


def _upper_quantile(sorted_draws: np.ndarray, alpha: float) -> float:
    k = int(np.ceil((1.0 - alpha) * sorted_draws.size)) - 1
    return float(sorted_draws[min(max(k, 0), sorted_draws.size - 1)])


def weighted_chisq_quantile(lambdas, p_dof: int, alpha: float, mc: int = DEFAULT_MC, seed: int = 0) -> float:
    """Monte-Carlo ``1 - alpha`` quantile of ``sum_k λ_k w_k`` with ``w_k`` iid χ²_p.

    Deterministic for a fixed ``(seed, mc)``; the same draws are used for
    every ``alpha``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return _upper_quantile(_null_draws(lambdas, p_dof, mc, seed), alpha)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    eigenvalues: np.ndarray
    p_dof: int
    quantile: float
    p_value: float
    reject: bool
    mc_samples: int
    seed: int
    alpha: float

    __test__ = False

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "p_dof": self.p_dof,
            "quantile": self.quantile,
            "p_value": self.p_value,
            "reject": self.reject,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
            "alpha": self.alpha,
        }


def run_test(
    data: Dataset,
    alpha: float = 0.05,
    config: FitConfig = FitConfig(),
    mc: int = DEFAULT_MC,
    seed: int = 0,
    rho: float | None = None,
    cfg: NumericConfig = DEFAULT,
    keep_null: bool = False,
):
    """Level-``alpha`` test of no covariate effect.

    The p-value is the share of null draws at or above the statistic, from
    the same draws that give the quantile. With ``keep_null=True`` the sorted
    null draws are returned alongside the result.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    moments = empirical_moments(data, rho, cfg)
    st = test_statistic(data, moments, config, cfg)
    lam = null_eigenvalues(data, st.bary, cfg)
    draws = _null_draws(lam, data.p, mc, seed, cfg)
    q = _upper_quantile(draws, alpha) if alpha < 1.0 else -np.inf
    exceed = draws.size - np.searchsorted(draws, st.statistic, side="left")
    res = TestResult(
        statistic=st.statistic,
        eigenvalues=lam,
        p_dof=data.p,
        quantile=q,
        p_value=float(exceed / draws.size),
        reject=bool(st.statistic > q),
        mc_samples=mc,
        seed=seed,
        alpha=alpha,
    )
    return (res, draws) if keep_null else res


def estimated_covariance_test(
    covariates: np.ndarray,
    surrogate_responses: np.ndarray,
    alpha: float = 0.05,
    config: FitConfig = FitConfig(),
    mc: int = DEFAULT_MC,
    seed: int = 0,
    rho: float | None = None,
    cfg: NumericConfig = DEFAULT,
    keep_null: bool = False,
):
    """:func:`run_test` with sample covariances standing in for the responses."""
    try:
        data = Dataset(covariates, surrogate_responses)
    except NotPositiveDefinite as exc:
        raise RankDeficientSurrogate(f"surrogate response is singular: {exc}") from exc
    except DimensionMismatch:
        raise
    return run_test(data, alpha, config, mc, seed, rho, cfg, keep_null)
