"""Preconditioned conjugate gradients with a Lanczos condition estimate."""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import IndefiniteDetected


@dataclass
class PcgResult:
    x: np.ndarray
    iterations: int
    converged: bool
    residuals: list
    alphas: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    cond: float = 1.0
    lambda_min: float = 1.0
    lambda_max: float = 1.0


def _as_op(op):
    if op is None:
        return lambda v: v.copy()
    if callable(op):
        return op
    return lambda v: op @ v


def lanczos_tridiagonal(alphas, betas):
    """Symmetric tridiagonal matrix from CG coefficients.

    ``betas[j]`` is the coefficient used to form ``p_{j+1}``; only the first
    ``len(alphas) - 1`` of them enter.
    """
    k = len(alphas)
    T = np.zeros((k, k))
    for j in range(k):
        T[j, j] = 1.0 / alphas[j]
        if j > 0:
            T[j, j] += betas[j - 1] / alphas[j - 1]
        if j + 1 < k:
            T[j, j + 1] = T[j + 1, j] = np.sqrt(betas[j]) / alphas[j]
    return T


def lanczos_condition(alphas, betas):
    """``lambda_max / lambda_min`` of the PCG tridiagonal; returns ``(kappa, lmin, lmax)``."""
    if len(alphas) == 0:
        return 1.0, 1.0, 1.0
    lam = np.linalg.eigvalsh(lanczos_tridiagonal(alphas, betas))
    lmin, lmax = float(lam[0]), float(lam[-1])
    if lmin <= 0:
        return float("inf"), lmin, lmax
    return lmax / lmin, lmin, lmax


def pcg(A, M, b, rtol=1e-8, max_iters=500, x0=None, preconditioned_norm=False):
    """PCG stopping on ``||b - A x|| / ||b|| <= rtol``.

    ``A`` and ``M`` are matrices or callables. With ``preconditioned_norm``
    the test uses ``sqrt(r^T M r)`` relative to its initial value instead.
    MaxIterations is reported through ``converged=False``.
    """
    Aop, Mop = _as_op(A), _as_op(M)
    b = np.asarray(b, dtype=float)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    r = b - Aop(x) if x0 is not None else b.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return PcgResult(x, 0, True, [0.0])
    z = Mop(r)
    rz = float(r @ z)

    def measure(r, rz):
        if preconditioned_norm:
            return np.sqrt(max(rz, 0.0)) / rz0
        return np.linalg.norm(r) / bnorm

    rz0 = np.sqrt(max(rz, 0.0)) or 1.0
    res = [measure(r, rz)]
    alphas, betas = [], []
    p = z.copy()
    converged = res[0] <= rtol
    it = 0
    while not converged and it < max_iters:
        q = Aop(p)
        pq = float(p @ q)
        if pq <= 0 or rz <= 0:
            raise IndefiniteDetected(f"<p, Ap> = {pq:.3e}, <r, Mr> = {rz:.3e} at iteration {it + 1}")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        it += 1
        alphas.append(alpha)
        z = Mop(r)
        rz_new = float(r @ z)
        res.append(measure(r, rz_new))
        if res[-1] <= rtol:
            converged = True
            break
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
    kappa, lmin, lmax = lanczos_condition(alphas, betas)
    return PcgResult(x, it, converged, res, alphas, betas, kappa, lmin, lmax)


def write_residuals(path, result):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "relative_residual"])
        for k, v in enumerate(result.residuals):
            w.writerow([k, repr(float(v))])
