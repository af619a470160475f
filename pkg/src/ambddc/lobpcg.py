"""Block LOBPCG for the largest eigenpairs of a symmetric semidefinite pencil."""
from dataclasses import dataclass

import numpy as np

from .errors import BreakdownError


@dataclass
class LobpcgResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: np.ndarray
    restarted: bool = False

    @property
    def all_converged(self):
        return bool(np.all(self.converged))


def _orth(Y, against=None, drop=1e-10):
    """Orthonormal columns spanning ``Y`` (after removing ``against``)."""
    if Y.shape[1] == 0:
        return Y
    if against is not None and against.shape[1]:
        Y = Y - against @ (against.T @ Y)
        Y = Y - against @ (against.T @ Y)
    nrm = np.linalg.norm(Y, axis=0)
    Y = Y[:, nrm > 0] / nrm[nrm > 0]
    if Y.shape[1] == 0:
        return Y
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    return U[:, s > drop * max(s[0], 1.0)]


def _pencil_top(gA, gB, m, drop=1e-12):
    """Top ``m`` eigenpairs of the small pencil ``(gA, gB)``."""
    gA = 0.5 * (gA + gA.T)
    gB = 0.5 * (gB + gB.T)
    w, V = np.linalg.eigh(gB)
    keep = w > drop * max(w.max(), 0.0)
    if not np.any(keep):
        return None, None
    T = V[:, keep] / np.sqrt(w[keep])
    lam, Y = np.linalg.eigh(T.T @ gA @ T)
    if lam.size < m:
        return None, None
    order = np.argsort(lam)[::-1][:m]
    return lam[order], T @ Y[:, order]


def lobpcg(A, B, M, X0, max_iters=15, tol=1e-6, project=None, rng=None):
    """Largest eigenpairs of ``A x = lambda B x``.

    ``A``, ``B`` and ``M`` (preconditioner, may be None) act on blocks of
    columns. ``project`` maps a block into the admissible subspace (the
    complement of ``null(B)``) and is applied to every new direction.
    Residuals are ``||proj(A x - lambda B x)|| / (||A x|| + |lambda| ||B x||)``.
    If the Rayleigh-Ritz basis loses rank the block is restarted once from
    random vectors; a second loss raises :class:`BreakdownError`.
    """
    proj = project if project is not None else (lambda Y: Y)
    prec = M if M is not None else (lambda Y: Y)
    rng = np.random.default_rng(0) if rng is None else rng
    m = X0.shape[1]
    restarted = False

    def start(X):
        X = _orth(proj(X))
        if X.shape[1] < m:
            return None
        AX, BX = A(X), B(X)
        lam, Y = _pencil_top(X.T @ AX, X.T @ BX, m)
        if lam is None:
            return None
        return X @ Y, AX @ Y, BX @ Y, lam

    state = start(np.asarray(X0, dtype=float))
    if state is None:
        restarted = True
        state = start(rng.standard_normal(X0.shape))
        if state is None:
            raise BreakdownError("initial block is rank deficient in the admissible subspace")
    X, AX, BX, lam = state
    P = None
    it = 0
    while True:
        Rm = proj(AX - BX * lam)
        den = np.linalg.norm(AX, axis=0) + np.abs(lam) * np.linalg.norm(BX, axis=0)
        res = np.linalg.norm(Rm, axis=0) / np.where(den > 0, den, 1.0)
        conv = res <= tol
        if np.all(conv) or it >= max_iters:
            break
        it += 1
        active = ~conv
        W = proj(prec(Rm[:, active]))
        Xo = _orth(X)
        blocks = [W] if P is None else [W, P]
        S = _orth(np.hstack(blocks), against=Xo)
        # normalising small directions magnifies rounding outside the subspace
        S = _orth(proj(S), against=Xo)
        if S.shape[1] == 0:
            break
        AS, BS = A(S), B(S)
        basis = np.hstack([X, S])
        Abasis = np.hstack([AX, AS])
        Bbasis = np.hstack([BX, BS])
        lam_new, Y = _pencil_top(basis.T @ Abasis, basis.T @ Bbasis, m)
        if lam_new is None:
            if restarted:
                raise BreakdownError("Rayleigh-Ritz basis degenerated after a restart")
            restarted = True
            state = start(rng.standard_normal(X.shape))
            if state is None:
                raise BreakdownError("restart block is rank deficient")
            X, AX, BX, lam = state
            P = None
            continue
        k = X.shape[1]
        Ys = Y[k:]
        P = S @ Ys
        X, AX, BX = basis @ Y, Abasis @ Y, Bbasis @ Y
        lam = lam_new
    return LobpcgResult(lam, X, res, it, conv, restarted)
