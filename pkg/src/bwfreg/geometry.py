r"""Bures-Wasserstein primitives on symmetric positive definite matrices.

All functions accept single ``(d, d)`` matrices or stacks ``(..., d, d)``
and broadcast over the leading axes.

Matrices are vectorized column-major over all :math:`d^2` entries, so the
Frobenius inner product is the plain dot product of the vectors and linear
operators on symmetric matrices are stored as ``(d*d, d*d)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .config import DEFAULT, NumericConfig
from .errors import DimensionMismatch, NotPositiveDefinite, NumericalBreakdown


def sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def vec(M: np.ndarray) -> np.ndarray:
    """Column-major vectorization over the last two axes."""
    d = M.shape[-1]
    return np.swapaxes(M, -1, -2).reshape(M.shape[:-2] + (d * d,))


def unvec(v: np.ndarray) -> np.ndarray:
    d = int(round(np.sqrt(v.shape[-1])))
    return np.swapaxes(v.reshape(v.shape[:-1] + (d, d)), -1, -2)


def vec_index(i: int, j: int, d: int) -> int:
    """Position of entry ``(i, j)`` in :func:`vec`."""
    return i + d * j


def check_symmetric(A: np.ndarray, cfg: NumericConfig = DEFAULT, name: str = "matrix") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise DimensionMismatch(f"{name} must be square, got shape {A.shape}")
    scale = 1.0 + np.max(np.abs(A), initial=0.0)
    asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)), initial=0.0)
    if asym > cfg.sym_rtol * scale:
        raise DimensionMismatch(f"{name} is not symmetric (max asymmetry {asym:.3g})")
    return A


def check_spd(A: np.ndarray, cfg: NumericConfig = DEFAULT, name: str = "matrix") -> np.ndarray:
    """Validate that ``A`` (or every matrix of a stack) is SPD and return it as float."""
    A = check_symmetric(A, cfg, name)
    lam = np.linalg.eigvalsh(sym(A))
    bad = lam[..., 0] <= cfg.eig_floor
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))
        raise NotPositiveDefinite(
            f"{name} is not positive definite (smallest eigenvalue {float(np.min(lam[..., 0])):.3g})",
            index=idx[0].tolist() if idx.size else None,
        )
    return A


def _same_dim(*mats: np.ndarray) -> int:
    dims = {m.shape[-1] for m in mats}
    if len(dims) != 1:
        raise DimensionMismatch(f"matrix dimensions differ: {sorted(dims)}")
    return dims.pop()


def _spectral(A: np.ndarray, fn) -> np.ndarray:
    lam, V = np.linalg.eigh(sym(A))
    return sym((V * fn(lam)[..., None, :]) @ np.swapaxes(V, -1, -2))


def _psd_sqrt(A: np.ndarray) -> np.ndarray:
    # inner products of SPD factors; tiny negative eigenvalues are rounding noise
    return _spectral(A, lambda lam: np.sqrt(np.clip(lam, 0.0, None)))


def _roots(A: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray]:
    lam, V = np.linalg.eigh(sym(A))
    lam = np.maximum(lam, floor)
    Vt = np.swapaxes(V, -1, -2)
    r = np.sqrt(lam)
    return sym((V * r[..., None, :]) @ Vt), sym((V / r[..., None, :]) @ Vt)


def sqrtm(A: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    """Principal square root of an SPD matrix via its eigendecomposition.

    Raises
    ------
    NotPositiveDefinite
        If any eigenvalue is at or below ``cfg.eig_floor``.
    """
    A = check_spd(A, cfg)
    return _spectral(A, np.sqrt)


def inv_sqrtm(A: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    A = check_spd(A, cfg)
    return _spectral(A, lambda lam: 1.0 / np.sqrt(lam))


def _w2(A: np.ndarray, B: np.ndarray, cfg: NumericConfig = DEFAULT, A_half: np.ndarray | None = None):
    if A_half is None:
        A_half = _spectral(A, lambda lam: np.sqrt(np.clip(lam, 0.0, None)))
    M = A_half @ B @ A_half
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(sym(M)), 0.0, None)).sum(axis=-1)
    rad = np.trace(A, axis1=-2, axis2=-1) + np.trace(B, axis1=-2, axis2=-1) - 2.0 * cross
    if np.any(rad < -cfg.radicand_tol):
        raise NumericalBreakdown(f"negative squared distance {float(np.min(rad)):.3g}")
    return np.maximum(rad, 0.0)


def bw_distance_sq(A: np.ndarray, B: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    """Squared Bures-Wasserstein distance ``tr A + tr B - 2 tr (A^½ B A^½)^½``."""
    A = check_spd(A, cfg, "A")
    B = check_spd(B, cfg, "B")
    _same_dim(A, B)
    out = _w2(A, B, cfg)
    return out[()] if np.ndim(out) == 0 else out


def bw_distance(A: np.ndarray, B: np.ndarray, cfg: NumericConfig = DEFAULT):
    """Bures-Wasserstein distance between SPD matrices.

    Equal to the 2-Wasserstein distance between ``N(0, A)`` and ``N(0, B)``.

    Raises
    ------
    DimensionMismatch
        If the matrix sizes differ.
    NumericalBreakdown
        If the squared distance comes out below ``-cfg.radicand_tol``.
    """
    out = np.sqrt(bw_distance_sq(A, B, cfg))
    return float(out) if np.ndim(out) == 0 else out


def _ot_map(Q: np.ndarray, S: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    # source-side form: only the source has to be well conditioned
    Qh, Qih = _roots(Q, cfg.eig_floor)
    return sym(Qih @ _psd_sqrt(Qh @ S @ Qh) @ Qih)


def ot_map(Q: np.ndarray, S: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    """Optimal transport map pushing ``N(0, Q)`` forward to ``N(0, S)``.

    Evaluated as ``Q^{-½} (Q^½ S Q^½)^½ Q^{-½}``, which equals
    ``S^½ (S^½ Q S^½)^{-½} S^½``.
    """
    Q = check_spd(Q, cfg, "Q")
    S = check_spd(S, cfg, "S")
    _same_dim(Q, S)
    return _ot_map(Q, S, cfg)


def w2_gradient(Q: np.ndarray, S: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    """Frobenius gradient ``I - T_Q^S`` of ``W²(·, S)`` at ``Q``."""
    T = ot_map(Q, S, cfg)
    return np.eye(T.shape[-1]) - T


def _dt_factors(Q: np.ndarray, S: np.ndarray, cfg: NumericConfig = DEFAULT):
    # S^½ Q S^½ = V diag(lam) V^T; with A = S^½ V the differential reads
    # H -> -A (C ∘ (A^T H A)) A^T, C_ij = 1 / (√l_i √l_j (√l_i + √l_j))
    Sh = _psd_sqrt(S)
    lam, V = np.linalg.eigh(sym(Sh @ Q @ Sh))
    r = np.sqrt(np.maximum(lam, cfg.eig_floor))
    C = 1.0 / (r[..., :, None] * r[..., None, :] * (r[..., :, None] + r[..., None, :]))
    return Sh @ V, C


def dt_map(Q: np.ndarray, S: np.ndarray, H: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    """Directional derivative of ``Q -> T_Q^S`` along the symmetric direction ``H``.

    Uses the eigendecomposition of ``S^½ Q S^½`` directly. Non-symmetric
    ``H`` is symmetrized first.
    """
    Q = check_spd(Q, cfg, "Q")
    S = check_spd(S, cfg, "S")
    H = sym(np.asarray(H, dtype=float))
    _same_dim(Q, S, H)
    A, C = _dt_factors(Q, S, cfg)
    At = np.swapaxes(A, -1, -2)
    return sym(-(A @ (C * (At @ H @ A)) @ At))


@lru_cache(maxsize=None)
def _transpose_perm(d: int) -> np.ndarray:
    idx = np.arange(d * d)
    i, j = idx % d, idx // d
    return j + d * i


@lru_cache(maxsize=None)
def sym_basis(d: int) -> np.ndarray:
    """Orthonormal basis of symmetric matrices, as columns of a ``(d*d, d(d+1)/2)`` array."""
    cols = []
    for j in range(d):
        for i in range(j + 1):
            E = np.zeros((d, d))
            if i == j:
                E[i, i] = 1.0
            else:
                E[i, j] = E[j, i] = 1.0 / np.sqrt(2.0)
            cols.append(vec(E))
    B = np.stack(cols, axis=1)
    B.setflags(write=False)
    return B


def sym_projector(d: int) -> np.ndarray:
    """Matrix of ``H -> (H + H^T) / 2`` in vectorized coordinates."""
    P = np.eye(d * d)
    return 0.5 * (P + P[:, _transpose_perm(d)])


def _kron_self(A: np.ndarray) -> np.ndarray:
    # (A ⊗ A)[i + d j, k + d l] = A_ik A_jl, i.e. vec(A Y A^T) = (A ⊗ A) vec(Y)
    d = A.shape[-1]
    K = np.einsum("...ik,...jl->...jilk", A, A)
    return K.reshape(A.shape[:-2] + (d * d, d * d))


def _dt_matrices(Q: np.ndarray, S: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    A, C = _dt_factors(Q, S, cfg)
    K = _kron_self(A)
    c = vec(C)
    M = -np.einsum("...ik,...k,...jk->...ij", K, c, K)
    d = A.shape[-1]
    # restrict to symmetric inputs: columns act on (E_kl + E_lk) / 2
    return 0.5 * (M + M[..., :, _transpose_perm(d)])


@dataclass(frozen=True)
class SymOperator:
    """Self-adjoint linear operator on symmetric ``d x d`` matrices.

    ``matrix`` acts on column-major vectorized matrices and vanishes on
    antisymmetric ones.
    """

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    def __call__(self, H: np.ndarray) -> np.ndarray:
        return unvec(vec(np.asarray(H, dtype=float)) @ self.matrix.T)

    def restricted(self) -> np.ndarray:
        """Matrix of the operator in the orthonormal symmetric basis."""
        B = sym_basis(self.dim)
        return sym(B.T @ self.matrix @ B)

    def eigvalsh(self) -> np.ndarray:
        """Eigenvalues on the symmetric subspace, ascending."""
        return np.linalg.eigvalsh(self.restricted())

    def inverse(self) -> "SymOperator":
        B = sym_basis(self.dim)
        return SymOperator(sym(B @ np.linalg.inv(self.restricted()) @ B.T))

    def __neg__(self) -> "SymOperator":
        return SymOperator(-self.matrix)


def dt_operator(Q: np.ndarray, S: np.ndarray, cfg: NumericConfig = DEFAULT) -> SymOperator:
    """``dt_map(Q, S, ·)`` as a ``(d*d, d*d)`` operator matrix."""
    Q = check_spd(Q, cfg, "Q")
    S = check_spd(S, cfg, "S")
    _same_dim(Q, S)
    if Q.ndim != 2 or S.ndim != 2:
        raise DimensionMismatch("dt_operator takes single matrices; use dt_matrices for stacks")
    return SymOperator(sym(_dt_matrices(Q, S, cfg)))


def dt_matrices(Q: np.ndarray, S: np.ndarray, cfg: NumericConfig = DEFAULT) -> np.ndarray:
    """Stacked operator matrices of :func:`dt_operator` (no validation)."""
    return _dt_matrices(np.asarray(Q, float), np.asarray(S, float), cfg)
