import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given
from hypothesis import strategies as st

from bwfreg.errors import DimensionMismatch, NotPositiveDefinite, NumericalBreakdown
from bwfreg.geometry import (
    SymOperator,
    bw_distance,
    bw_distance_sq,
    dt_map,
    dt_matrices,
    dt_operator,
    inv_sqrtm,
    ot_map,
    sqrtm,
    sym_basis,
    sym_projector,
    unvec,
    vec,
    vec_index,
    w2_gradient,
)
from helpers import random_spd, random_sym, rel

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(2, 8)


def fd_dt(Q, S, H, h=1e-5):
    return (ot_map(Q + h * H, S) - ot_map(Q - h * H, S)) / (2 * h)


# --- matrix roots and distance ---------------------------------------------


def test_sqrtm_identity_and_diagonal():
    assert np.allclose(sqrtm(np.eye(2)), np.eye(2), atol=0)
    assert np.allclose(sqrtm(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), rtol=1e-14)


def test_sqrtm_squares_back(rng):
    A = random_spd(rng, 5)
    R = sqrtm(A)
    assert rel(R @ R, A) < 1e-10
    # independent Schur-based oracle
    assert rel(R, sla.sqrtm(A).real) < 1e-10
    assert rel(inv_sqrtm(A), np.linalg.inv(R)) < 1e-10


def test_sqrtm_rejects_indefinite():
    with pytest.raises(NotPositiveDefinite):
        sqrtm(np.diag([1.0, -1.0]))


def test_distance_examples(rng):
    A = random_spd(rng, 3)
    assert bw_distance(A, A) == pytest.approx(0.0, abs=1e-7)
    assert bw_distance(np.eye(2), 4 * np.eye(2)) == pytest.approx(np.sqrt(2), rel=1e-14)


def test_distance_matches_scipy_oracle(rng):
    for _ in range(20):
        d = rng.integers(2, 7)
        A, B = random_spd(rng, d), random_spd(rng, d)
        Ah = sla.sqrtm(A).real
        oracle = np.trace(A) + np.trace(B) - 2 * np.trace(sla.sqrtm(Ah @ B @ Ah).real)
        assert bw_distance_sq(A, B) == pytest.approx(oracle, rel=1e-9)


def test_commuting_distance_closed_form(rng):
    a, b = rng.uniform(0.1, 5, 4), rng.uniform(0.1, 5, 4)
    assert bw_distance(np.diag(a), np.diag(b)) == pytest.approx(np.linalg.norm(np.sqrt(a) - np.sqrt(b)), rel=1e-12)


def test_rotation_invariance_example(rng):
    from bwfreg.simulation import haar_orthogonal

    A, B = random_spd(rng, 4), random_spd(rng, 4)
    O = haar_orthogonal(4, rng)
    assert bw_distance(O @ A @ O.T, O @ B @ O.T) == pytest.approx(bw_distance(A, B), rel=1e-10)


def test_distance_batches(rng):
    A = np.stack([random_spd(rng, 3) for _ in range(4)])
    B = random_spd(rng, 3)
    got = bw_distance(A, B)
    assert got.shape == (4,)
    assert np.allclose(got, [bw_distance(a, B) for a in A], rtol=1e-13)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        bw_distance(np.eye(2), np.eye(3))


def test_radicand_breakdown_is_reported():
    from bwfreg.config import NumericConfig
    from bwfreg.geometry import _w2

    # a deliberately wrong square root forces a clearly negative radicand
    with pytest.raises(NumericalBreakdown):
        _w2(np.eye(2), np.eye(2), NumericConfig(), A_half=3 * np.eye(2))


# --- transport map and gradient --------------------------------------------


def test_ot_map_examples(rng):
    Q = random_spd(rng, 3)
    assert rel(ot_map(Q, Q), np.eye(3)) < 1e-12
    assert rel(ot_map(np.eye(2), np.diag([4.0, 9.0])), np.diag([2.0, 3.0])) < 1e-14


def test_ot_map_pushforward_and_inverse(rng):
    Q, S = random_spd(rng, 5), random_spd(rng, 5)
    T = ot_map(Q, S)
    assert rel(T @ Q @ T, S) < 1e-8
    assert rel(ot_map(S, Q), np.linalg.inv(T)) < 1e-8
    assert np.all(np.linalg.eigvalsh(T) > 0)


def test_gradient_examples(rng):
    Q = random_spd(rng, 3)
    assert np.abs(w2_gradient(Q, Q)).max() < 1e-12
    assert rel(w2_gradient(np.eye(2), 4 * np.eye(2)), -np.eye(2)) < 1e-14


def test_gradient_finite_difference(rng):
    h = 1e-5
    Q, S, H = random_spd(rng, 4), random_spd(rng, 4), random_sym(rng, 4)
    fd = (bw_distance_sq(Q + h * H, S) - bw_distance_sq(Q - h * H, S)) / (2 * h)
    assert np.sum(w2_gradient(Q, S) * H) == pytest.approx(fd, rel=1e-5)


# --- derivative of the transport map ---------------------------------------


def test_dt_identity_case(rng):
    H = random_sym(rng, 4)
    assert rel(dt_map(np.eye(4), np.eye(4), H), -H / 2) < 1e-14
    assert rel(fd_dt(np.eye(4), np.eye(4), H), -H / 2) < 1e-8
    assert np.abs(dt_map(random_spd(rng, 4), random_spd(rng, 4), np.zeros((4, 4)))).max() == 0.0


@pytest.mark.parametrize("d", [2, 3, 4, 5, 6])
def test_dt_finite_difference(rng, d):
    Q, S, H = random_spd(rng, d), random_spd(rng, d), random_sym(rng, d)
    assert rel(dt_map(Q, S, H), fd_dt(Q, S, H)) < 1e-5


def test_dt_symmetrizes_input(rng):
    Q, S = random_spd(rng, 3), random_spd(rng, 3)
    A = rng.standard_normal((3, 3))
    assert rel(dt_map(Q, S, A), dt_map(Q, S, 0.5 * (A + A.T))) < 1e-14


def test_dt_operator_identity_case():
    d = 3
    M = dt_operator(np.eye(d), np.eye(d)).matrix
    assert np.allclose(M, -0.5 * sym_projector(d), atol=1e-15)


def test_dt_operator_columns_match_map(rng):
    # column oracle: apply dt_map to each symmetric basis element
    d = 4
    Q, S = random_spd(rng, d), random_spd(rng, d)
    op = dt_operator(Q, S)
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d))
            E[i, j] = E[j, i] = 1.0
            assert rel(op(E), dt_map(Q, S, E)) < 1e-12
            assert rel(op.matrix @ vec(E), vec(dt_map(Q, S, E))) < 1e-12


def test_dt_matrices_batched(rng):
    Q = np.stack([random_spd(rng, 3) for _ in range(3)])
    S = random_spd(rng, 3)
    batch = dt_matrices(Q, S)
    for k in range(3):
        assert rel(batch[k], dt_operator(Q[k], S).matrix) < 1e-13


def test_dt_bound_scalar_case():
    # Q = q I, S = I: T = q^{-1/2} I so dT(X) = -q^{-3/2} X / 2
    q = 2.7
    X = np.array([[1.0, 2.0], [2.0, -1.0]])
    assert rel(dt_map(q * np.eye(2), np.eye(2), X), -0.5 * q**-1.5 * X) < 1e-13


# --- vectorization and operator helpers ------------------------------------


def test_vec_is_column_major(rng):
    M = rng.standard_normal((3, 3))
    v = vec(M)
    for i in range(3):
        for j in range(3):
            assert v[vec_index(i, j, 3)] == M[i, j]
    assert np.array_equal(v, M.flatten(order="F"))
    assert np.array_equal(unvec(v), M)


def test_sym_basis_orthonormal():
    for d in (1, 2, 5):
        B = sym_basis(d)
        assert B.shape == (d * d, d * (d + 1) // 2)
        assert np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-14)
        assert np.allclose(B @ B.T, sym_projector(d), atol=1e-14)


def test_sym_operator_inverse(rng):
    d = 3
    op = -dt_operator(random_spd(rng, d), random_spd(rng, d))
    inv = op.inverse()
    X = random_sym(rng, d)
    assert rel(inv(op(X)), X) < 1e-10
    assert isinstance(inv, SymOperator) and inv.dim == d


# --- property suite ----------------------------------------------------------


@given(seeds, dims, st.floats(1e-3, 1e3))
def test_scaling_homogeneity(seed, d, c):
    rng = np.random.default_rng(seed)
    A, B = random_spd(rng, d), random_spd(rng, d)
    assert bw_distance(c * A, c * B) == pytest.approx(np.sqrt(c) * bw_distance(A, B), rel=1e-10, abs=1e-12)


@given(seeds, dims)
def test_rotation_invariance(seed, d):
    rng = np.random.default_rng(seed)
    A, B = random_spd(rng, d), random_spd(rng, d)
    O, _ = np.linalg.qr(rng.standard_normal((d, d)))
    assert bw_distance(O @ A @ O.T, O @ B @ O.T) == pytest.approx(bw_distance(A, B), rel=1e-10, abs=1e-12)


@given(seeds, dims)
def test_symmetry_and_triangle(seed, d):
    rng = np.random.default_rng(seed)
    A, B, C = (random_spd(rng, d) for _ in range(3))
    ab, bc, ac = bw_distance(A, B), bw_distance(B, C), bw_distance(A, C)
    assert ab == pytest.approx(bw_distance(B, A), rel=1e-9, abs=1e-12)
    assert ac <= ab + bc + 1e-9


@given(seeds, dims)
def test_pushforward_property(seed, d):
    rng = np.random.default_rng(seed)
    Q, S = random_spd(rng, d), random_spd(rng, d)
    T = ot_map(Q, S)
    assert rel(T @ Q @ T, S) < 1e-8
    assert rel(ot_map(S, Q), np.linalg.inv(T)) < 1e-8


@given(seeds, dims, st.floats(-3, 3), st.floats(-3, 3))
def test_dt_linearity(seed, d, a, b):
    rng = np.random.default_rng(seed)
    Q, S = random_spd(rng, d), random_spd(rng, d)
    H1, H2 = random_sym(rng, d), random_sym(rng, d)
    lhs = dt_map(Q, S, a * H1 + b * H2)
    rhs = a * dt_map(Q, S, H1) + b * dt_map(Q, S, H2)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * max(np.linalg.norm(rhs), 1.0)


@given(seeds, dims)
def test_dt_self_adjoint_nsd_and_bounds(seed, d):
    rng = np.random.default_rng(seed)
    Q, S = random_spd(rng, d), random_spd(rng, d)
    X, Y = random_sym(rng, d), random_sym(rng, d)
    assert np.sum(dt_map(Q, S, X) * Y) == pytest.approx(np.sum(X * dt_map(Q, S, Y)), abs=1e-9)
    quad = -np.sum(dt_map(Q, S, X) * X)
    assert -quad <= 1e-10
    Sh = sqrtm(S)
    lam = np.linalg.eigvalsh(Sh @ Q @ Sh)
    Qi = inv_sqrtm(Q)
    norm2 = np.linalg.norm(Qi @ X @ Qi) ** 2
    assert np.sqrt(lam[0]) / 2 * norm2 * (1 - 1e-9) <= quad <= np.sqrt(lam[-1]) / 2 * norm2 * (1 + 1e-9)


@given(seeds, dims)
def test_dt_operator_spectrum_nonpositive(seed, d):
    rng = np.random.default_rng(seed)
    op = dt_operator(random_spd(rng, d), random_spd(rng, d))
    assert np.allclose(op.matrix, op.matrix.T, atol=1e-12)
    assert op.eigvalsh().max() <= 1e-10


@given(seeds, st.integers(2, 6))
def test_dt_finite_difference_property(seed, d):
    rng = np.random.default_rng(seed)
    Q, S, H = random_spd(rng, d, 0.5, 3.0), random_spd(rng, d, 0.5, 3.0), random_sym(rng, d)
    assert rel(dt_map(Q, S, H), fd_dt(Q, S, H)) < 1e-5


def frobenius_bracket(Q0, Q1):
    """Lower and upper multiples of ||Q1 - Q0||_F^2 that bracket W^2(Q0, Q1).

    The upper constant is lmax0 lmin0^-2 / (1 + lmin1 / lmax0). The lower one is
    1/2 lmin0 lmax0^-2 / (1 + lmax1 / lmin0), obtained from the quadratic
    expansion of W^2 around Q0 together with the derivative bound.
    """
    l0, l1 = np.linalg.eigvalsh(Q0), np.linalg.eigvalsh(Q1)
    lo = 0.5 * l0[0] * l0[-1] ** -2 / (1 + l1[-1] / l0[0])
    hi = l0[-1] * l0[0] ** -2 / (1 + l1[0] / l0[-1])
    return lo, hi


@given(seeds, dims)
def test_frobenius_bracketing(seed, d):
    rng = np.random.default_rng(seed)
    Q0, Q1 = random_spd(rng, d), random_spd(rng, d)
    lo, hi = frobenius_bracket(Q0, Q1)
    f = np.linalg.norm(Q1 - Q0) ** 2
    w = bw_distance_sq(Q0, Q1)
    assert lo * f * (1 - 1e-10) <= w <= hi * f * (1 + 1e-10)


def test_frobenius_bracket_is_tight_in_one_dimension():
    # in 1-D W^2 = (q1 - q0)^2 / (sqrt q0 + sqrt q1)^2 and both sides are explicit
    q0, q1 = 2.0, 7.0
    lo, hi = frobenius_bracket(np.array([[q0]]), np.array([[q1]]))
    assert lo == pytest.approx(1 / (2 * (q0 + q1)))
    assert hi == pytest.approx(1 / (q0 + q1))
