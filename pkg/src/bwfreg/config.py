"""Numeric tolerances shared by every module."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class NumericConfig:
    """Tolerances used for validation and clamping.

    eig_floor
        Smallest eigenvalue an SPD matrix may have.
    sym_rtol
        Relative asymmetry tolerated before a matrix is rejected.
    radicand_tol
        Negative squared distances down to ``-radicand_tol`` are clamped to 0.
    operator_floor
        Smallest eigenvalue of the plug-in Hessian operator on symmetric
        matrices before it is declared singular.
    psd_slack
        Negative eigenvalue slack for covariance operators built as Gram sums.
    null_neg_tol
        Negative eigenvalue slack for the null-distribution operator.
    null_rel_drop
        Null eigenvalues below ``null_rel_drop * largest`` are discarded.
    cond_max
        Largest acceptable condition number of the unregularized covariate
        covariance.
    tangent_floor
        Dimensionless tangent vectors (``T - I`` and ``Ĥ`` applied to a fit
        difference) with Frobenius norm below this are rounding noise and
        count as exact zeros in the test.
    """

    eig_floor: float = 1e-12
    sym_rtol: float = 1e-10
    radicand_tol: float = 1e-10
    operator_floor: float = 1e-10
    psd_slack: float = 1e-8
    null_neg_tol: float = 1e-10
    null_rel_drop: float = 1e-12
    cond_max: float = 1e12
    tangent_floor: float = 1e-12


DEFAULT = NumericConfig()
