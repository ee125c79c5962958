import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nlschwarz.sparse_core import (
    GMRES_MAX_ITER,
    SingularMatrixError,
    export_matrix_market,
    finalize,
    gmres,
    lu_factorize,
    lu_solve,
    submatrix,
)


def random_dominant(n, density, seed):
    rng = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=rng, format="csr")
    A = A - A.T * 0.5
    rowsum = np.asarray(abs(A).sum(axis=1)).ravel()
    return (A + sp.diags(rowsum + 1.0)).tocsr()


def test_finalize_sums_duplicates():
    A = finalize([0, 0, 1], [1, 1, 0], [1.0, 2.0, 5.0], (2, 2))
    assert A[0, 1] == 3.0 and A[1, 0] == 5.0
    assert A.nnz == 2
    assert A.has_sorted_indices


def test_finalize_rejects_nan():
    with pytest.raises(FloatingPointError):
        finalize([0], [0], [np.nan], (1, 1))


def test_submatrix():
    A = sp.csr_matrix(np.arange(16.0).reshape(4, 4))
    B = submatrix(A, [1, 3])
    np.testing.assert_array_equal(B.toarray(), [[5, 7], [13, 15]])


def test_lu_identity():
    x = lu_solve(lu_factorize(sp.identity(5, format="csr")), np.arange(1.0, 6.0))
    np.testing.assert_array_equal(x, np.arange(1.0, 6.0))


def test_lu_needs_pivoting():
    A = sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(lu_factorize(A).solve([3.0, 7.0]), [7.0, 3.0])


def test_lu_matches_dense_elimination():
    A = random_dominant(50, 0.1, 3)
    b = np.random.default_rng(4).standard_normal(50)
    x = lu_factorize(A).solve(b)
    np.testing.assert_allclose(x, np.linalg.solve(A.toarray(), b), rtol=1e-10, atol=1e-12)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 60), seed=st.integers(0, 2**31 - 1))
def test_lu_residual_property(n, seed):
    A = random_dominant(n, 0.2, seed)
    b = np.random.default_rng(seed + 1).standard_normal(n)
    x = lu_factorize(A).solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_lu_singular_reports_row():
    A = sp.csr_matrix(np.array([[1.0, 2.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 1.0]]))
    with pytest.raises(SingularMatrixError) as err:
        lu_factorize(A)
    assert err.value.row == 1


def test_lu_singular_dense_locate():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SingularMatrixError):
        lu_factorize(A)


def test_lu_rejects_wrong_rhs():
    with pytest.raises(ValueError):
        lu_factorize(sp.identity(3)).solve(np.ones(4))


def test_gmres_identity_one_iteration():
    b = np.random.default_rng(0).standard_normal(20)
    x, rep = gmres(lambda v: v, b)
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(x, b)


def test_gmres_diagonal_exact_breakdown():
    D = np.array([1.0, 2.0, 3.0])
    x, rep = gmres(lambda v: D * v, np.ones(3), rel_tol=1e-12)
    assert rep.iterations <= 3
    assert rep.converged
    np.testing.assert_allclose(x, [1.0, 0.5, 1.0 / 3.0], rtol=1e-12)


def test_gmres_breakdown_flag_distinct_from_convergence():
    # rhs in a 2-dim invariant subspace: Krylov space is exhausted at step 2
    D = np.array([1.0, 2.0, 3.0, 4.0])
    x, rep = gmres(lambda v: D * v, np.array([1.0, 1.0, 0.0, 0.0]), rel_tol=0.0)
    assert rep.breakdown and rep.iterations == 2
    np.testing.assert_allclose(D * x, [1.0, 1.0, 0.0, 0.0], atol=1e-14)


def test_gmres_random_well_conditioned():
    rng = np.random.default_rng(7)
    A = np.eye(100) * 4 + rng.standard_normal((100, 100)) / 10
    b = rng.standard_normal(100)
    x, rep = gmres(lambda v: A @ v, b, rel_tol=1e-8)
    assert rep.converged and rep.rel_residual <= 1e-8
    assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-7


def test_gmres_non_convergence_reported():
    A = np.diag(np.linspace(1, 1e4, 200))
    x, rep = gmres(lambda v: A @ v, np.ones(200), rel_tol=1e-12, max_iter=5)
    assert not rep.converged and rep.iterations == 5
    assert rep.rel_residual > 1e-12


@settings(max_examples=20, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 2**31 - 1))
def test_gmres_properties(n, seed):
    rng = np.random.default_rng(seed)
    A = np.eye(n) * 3 + rng.standard_normal((n, n))
    b = rng.standard_normal(n)
    x, rep = gmres(lambda v: A @ v, b, rel_tol=0.0)
    assert rep.iterations <= n
    h = np.array(rep.history)
    assert np.all(np.diff(h) <= 1e-12)
    if rep.converged:
        assert rep.rel_residual <= 0.0 + 1e-300


def test_gmres_zero_rhs():
    x, rep = gmres(lambda v: v, np.zeros(4))
    assert rep.converged and rep.iterations == 0 and not x.any()


def test_gmres_cap():
    assert GMRES_MAX_ITER == 500


def test_matrix_market_roundtrip(tmp_path):
    import scipy.io

    A = random_dominant(10, 0.3, 1)
    export_matrix_market(tmp_path / "a.mtx", A, comment="test")
    B = scipy.io.mmread(str(tmp_path / "a.mtx"))
    np.testing.assert_allclose(B.toarray(), A.toarray())
