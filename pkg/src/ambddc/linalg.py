"""Dense and sparse symmetric kernels shared by every other module.

Small systems go through LAPACK (Cholesky, Bunch-Kaufman ``sytrf``); larger
sparse systems go through SuperLU with a multiple-minimum-degree ordering.
For SPD input SuperLU is run with diagonal pivoting only, which turns the LU
into a symmetric LDL^T whose pivots reveal definiteness.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import lapack

from .errors import NotPositiveDefinite, Singular, ZeroMatrix

DENSE_LIMIT = 600
QR_RANK_TOL = 1e-10
PINV_DROP_TOL = 1e-8


def as_sparse(M):
    if sp.issparse(M):
        return M.tocsc()
    return sp.csc_matrix(np.asarray(M, dtype=float))


def as_dense(M):
    if sp.issparse(M):
        return M.toarray()
    return np.asarray(M, dtype=float)


def symmetrize(M):
    """Return the exactly symmetric matrix defined by the upper triangle."""
    if sp.issparse(M):
        U = sp.triu(M, k=0, format="csr")
        return (U + sp.triu(M, k=1, format="csr").T).tocsr()
    M = np.asarray(M, dtype=float)
    U = np.triu(M)
    return U + np.triu(M, 1).T


def is_symmetric(M, rtol=0.0):
    if sp.issparse(M):
        diff = abs(M - M.T)
        dmax = diff.max() if diff.nnz else 0.0
        scale = abs(M).max() if M.nnz else 0.0
    else:
        M = np.asarray(M)
        dmax = np.abs(M - M.T).max() if M.size else 0.0
        scale = np.abs(M).max() if M.size else 0.0
    return dmax <= rtol * scale


@dataclass
class Factorization:
    """Reusable factorization of a symmetric matrix.

    ``kind`` is ``"spd"`` or ``"indefinite"``. ``inertia`` is a tuple
    ``(n_pos, n_neg, n_zero)`` when the backend exposes it (always for the
    dense paths and for the SPD sparse path).
    """

    kind: str
    n: int
    backend: str
    perm: Optional[np.ndarray]
    factors: object
    inertia: Optional[tuple] = None

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.n:
            raise ValueError(f"rhs has {b.shape[0]} rows, matrix has {self.n}")
        if self.n == 0:
            return b.copy()
        if self.backend == "cholesky":
            return sla.cho_solve(self.factors, b, check_finite=False)
        if self.backend == "sytrf":
            ldu, ipiv = self.factors
            x, info = lapack.dsytrs(ldu, ipiv, b, lower=1)
            if info != 0:
                raise Singular(f"dsytrs failed with info={info}")
            return x
        if b.ndim == 2 and b.shape[1] == 0:
            return b.copy()
        return self.factors.solve(b)

    __call__ = solve


def _spd_dense(M):
    M = as_dense(M)
    try:
        c = sla.cho_factor(M, lower=False, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    piv = np.diag(c[0]) ** 2
    if piv.min() <= 1e-14 * np.abs(np.diag(M)).max():
        raise NotPositiveDefinite(f"pivot {piv.min():.3e} is numerically zero")
    return Factorization("spd", M.shape[0], "cholesky", None, c, (M.shape[0], 0, 0))


def _spd_sparse(M):
    A = as_sparse(M)
    n = A.shape[0]
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise NotPositiveDefinite("off-diagonal pivot needed: matrix is not SPD")
    d = lu.U.diagonal()
    scale = np.abs(A.diagonal()).max() if n else 1.0
    if d.min() <= 1e-14 * scale:
        raise NotPositiveDefinite(f"nonpositive pivot {d.min():.3e}")
    return Factorization("spd", n, "superlu", lu.perm_c.copy(), lu, (n, 0, 0))


def factor_spd(M, dense_limit=DENSE_LIMIT):
    """Factor a symmetric positive-definite matrix.

    Raises :class:`NotPositiveDefinite` on a nonpositive pivot, which in this
    library usually means missing constraints or a bad assembly.
    """
    n = M.shape[0]
    if n == 0:
        return Factorization("spd", 0, "cholesky", None, None, (0, 0, 0))
    if n <= dense_limit:
        return _spd_dense(M)
    return _spd_sparse(M)


def _sytrf_blocks(ldu, ipiv):
    n = ldu.shape[0]
    blocks = []
    k = 0
    while k < n:
        if ipiv[k] > 0:
            blocks.append(np.array([[ldu[k, k]]]))
            k += 1
        else:
            blocks.append(np.array([[ldu[k, k], ldu[k + 1, k]],
                                    [ldu[k + 1, k], ldu[k + 1, k + 1]]]))
            k += 2
    return blocks


def factor_saddle(M, dense_limit=DENSE_LIMIT):
    """Factor a symmetric indefinite (saddle-point) matrix.

    Dense systems use Bunch-Kaufman 1x1/2x2 pivoting and report inertia;
    larger sparse systems use SuperLU with threshold pivoting (no inertia).
    Raises :class:`Singular` on a numerically zero pivot, typically caused by
    linearly dependent constraint rows.
    """
    n = M.shape[0]
    if n == 0:
        return Factorization("indefinite", 0, "sytrf", None, None, (0, 0, 0))
    if n <= dense_limit:
        A = as_dense(M)
        scale = np.abs(A).max()
        ldu, ipiv, info = lapack.dsytrf(A, lower=1)
        if info > 0:
            raise Singular(f"exactly zero pivot at position {info}")
        blocks = _sytrf_blocks(ldu, ipiv)
        eig = np.concatenate([np.linalg.eigvalsh(b) for b in blocks])
        tiny = n * np.finfo(float).eps * scale * 10
        if np.abs(eig).min() <= tiny:
            raise Singular(f"numerically zero pivot {np.abs(eig).min():.3e}")
        inertia = (int((eig > 0).sum()), int((eig < 0).sum()), 0)
        return Factorization("indefinite", n, "sytrf", ipiv.copy(), (ldu, ipiv), inertia)
    A = as_sparse(M)
    try:
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise Singular(str(exc)) from None
    d = np.abs(lu.U.diagonal())
    if d.min() <= n * np.finfo(float).eps * abs(A).max() * 10:
        raise Singular(f"numerically zero pivot {d.min():.3e}")
    return Factorization("indefinite", n, "superlu", lu.perm_c.copy(), lu, None)


@dataclass
class DenseEig:
    values: np.ndarray
    vectors: np.ndarray


def dense_sym_eig(M):
    """Full symmetric eigendecomposition with eigenvalues in descending order."""
    M = as_dense(M)
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    return DenseEig(w[::-1].copy(), V[:, ::-1].copy())


def pseudoinverse_psd(M, drop_tol=PINV_DROP_TOL):
    """V diag(1/lam) V^T over eigenvalues above ``drop_tol * lam_max``."""
    eig = dense_sym_eig(M)
    lam = eig.values
    if lam.size == 0 or lam[0] <= 0:
        raise ZeroMatrix("no positive eigenvalues")
    keep = lam > drop_tol * lam[0]
    V = eig.vectors[:, keep]
    P = (V / lam[keep]) @ V.T
    return 0.5 * (P + P.T)


def reduced_qr_rows(rows, tol=QR_RANK_TOL):
    """Orthonormal basis (as rows) for the span of ``rows``.

    Rank is revealed by column-pivoted QR of ``rows^T``; diagonal entries of
    R below ``tol`` times the largest are treated as zero.

    Returns ``(Q_rows, rank)``.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size == 0 or rows.shape[0] == 0:
        return np.zeros((0, rows.shape[1] if rows.ndim == 2 else 0)), 0
    Q, R, _ = sla.qr(rows.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0.0:
        return np.zeros((0, rows.shape[1])), 0
    rank = int((d > tol * d[0]).sum())
    sign = np.where(np.diag(R)[:rank] < 0, -1.0, 1.0)
    return (Q[:, :rank] * sign).T.copy(), rank


def null_space_rows(C, tol=QR_RANK_TOL):
    """Orthonormal basis (columns) of null(C)."""
    C = np.atleast_2d(C)
    n = C.shape[1]
    if C.shape[0] == 0:
        return np.eye(n)
    return sla.null_space(C, rcond=tol)
