"""Adaptive coarse dofs from generalized eigenproblems on face-adjacent pairs.

For a pair ``(s, t)`` the unknowns are the interface values of both
subdomains, ``x = (x_s, x_t)``. The pencil is

    A = Pi (I - E)^T S (I - E) Pi,    B = Pi S Pi,

with ``S = diag(S^s, S^t)``, ``E`` the pair average on the shared dofs
(identity elsewhere) and ``Pi`` the orthogonal projection onto the kernel of
``D``, whose rows ``[c, -c]`` ask the existing shared coarse dofs to agree.
"""
import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .errors import AmbddcError, RigidModeLeak, StageError
from .lobpcg import lobpcg
from .linalg import PINV_DROP_TOL, pseudoinverse_psd, reduced_qr_rows
from .partition import FACE
from .substructure import ADAPTIVE, CoarseGroup, constrained_solve_gamma, pmap, schur_apply


@dataclass
class AdaptiveConfig:
    tau: float = 2.0
    max_vectors: int = 10
    max_iters: int = 15
    tol: float = 1e-6
    pinv_tol: float = PINV_DROP_TOL
    edge_zeroing: bool = True
    recheck: bool = False
    seed: int = 0
    dense_factor: int = 3

    def __post_init__(self):
        if not self.tau > 1:
            raise ValueError("tau must exceed 1")
        if self.max_vectors < 1 or self.max_iters < 1:
            raise ValueError("eigenvector and iteration limits must be at least 1")


@dataclass
class PairResult:
    s: int
    t: int
    omega_pre: float
    omega_post: float
    added: int
    iterations: int
    converged: bool
    capped: bool
    values: np.ndarray
    asymmetry: float = 0.0
    recheck: Optional[float] = None
    solver: str = "lobpcg"


@dataclass
class LevelAdaptReport:
    level: int
    pairs: list = field(default_factory=list)
    tau: float = float("inf")

    @property
    def omega(self):
        vals = [p.omega_post for p in self.pairs]
        return max(vals) if vals else 1.0

    @property
    def omega_pre(self):
        vals = [p.omega_pre for p in self.pairs]
        return max(vals) if vals else 1.0

    @property
    def added(self):
        return sum(p.added for p in self.pairs)

    @property
    def capped(self):
        return any(p.capped for p in self.pairs)

    @property
    def flagged(self):
        return [(p.s, p.t) for p in self.pairs if p.recheck is not None and p.recheck > self.tau]


class PairProblem:
    """Operators of the pair pencil; all act on blocks of columns."""

    def __init__(self, lev, s, t, pinv_tol=PINV_DROP_TOL):
        self.lev = lev
        self.s, self.t = s, t
        self.ss, self.st = lev.subs[s], lev.subs[t]
        gs, gt = self.ss.g_gamma, self.st.g_gamma
        self.ns, self.nt = gs.size, gt.size
        self.n = self.ns + self.nt
        self.common = np.intersect1d(gs, gt)
        self.ps = np.searchsorted(gs, self.common)
        self.pt = np.searchsorted(gt, self.common)
        ws, wt = self.ss.weights[self.ps], self.st.weights[self.pt]
        self.a_s = ws / (ws + wt)
        self.a_t = wt / (ws + wt)
        self.pinv_tol = pinv_tol

        self.shared_groups = [k for k, g in enumerate(lev.groups) if s in g.owners and t in g.owners]
        rows = []
        for k in self.shared_groups:
            g = lev.groups[k]
            rs = np.zeros((g.size, self.n))
            rs[:, np.searchsorted(gs, g.dofs)] = g.rows
            rs[:, self.ns + np.searchsorted(gt, g.dofs)] = -g.rows
            rows.append(rs)
        self.set_jumps(np.vstack(rows) if rows else np.zeros((0, self.n)))

        ids = np.union1d(self.ss.coarse_ids, self.st.coarse_ids)
        self.coarse_ids = ids
        Psi = np.zeros((self.n, ids.size))
        G = np.zeros((ids.size, ids.size))
        for sub, off, n in ((self.ss, 0, self.ns), (self.st, self.ns, self.nt)):
            loc = np.searchsorted(ids, sub.coarse_ids)
            Psi[off:off + n, loc] = sub.Psi[sub.gamma]
            G[np.ix_(loc, loc)] += sub.coarse_matrix
        self.Psi = Psi
        self.G_pinv = pseudoinverse_psd(G, pinv_tol) if ids.size else np.zeros((0, 0))
        self.Z = self._null_basis()

    # -- projections -------------------------------------------------------
    def set_jumps(self, D):
        self.D = D
        if D.shape[0]:
            self._DDt = sla.cho_factor(D @ D.T)
        else:
            self._DDt = None

    def Pi(self, X):
        if self._DDt is None:
            return X
        return X - self.D.T @ sla.cho_solve(self._DDt, self.D @ X)

    def project(self, X):
        X = self.Pi(X)
        if self.Z.shape[1]:
            X = X - self.Z @ (self.Z.T @ X)
        return X

    # -- operators ---------------------------------------------------------
    def S(self, X):
        X = np.asarray(X, dtype=float)
        return np.concatenate([schur_apply(self.ss, X[:self.ns]),
                               schur_apply(self.st, X[self.ns:])], axis=0)

    def IE(self, X):
        Y = np.zeros_like(X)
        jump = X[self.ps] - X[self.ns + self.pt]
        Y[self.ps] = self.a_t[:, None] * jump if X.ndim == 2 else self.a_t * jump
        Y[self.ns + self.pt] = -(self.a_s[:, None] * jump if X.ndim == 2 else self.a_s * jump)
        return Y

    def IEt(self, Y):
        X = np.zeros_like(Y)
        a_t = self.a_t[:, None] if Y.ndim == 2 else self.a_t
        a_s = self.a_s[:, None] if Y.ndim == 2 else self.a_s
        v = a_t * Y[self.ps] - a_s * Y[self.ns + self.pt]
        X[self.ps] = v
        X[self.ns + self.pt] = -v
        return X

    def A(self, X):
        X = self.Pi(X)
        return self.Pi(self.IEt(self.S(self.IE(X))))

    def B(self, X):
        return self.Pi(self.S(self.Pi(X)))

    def M(self, X):
        X = self.Pi(np.asarray(X, dtype=float))
        out = np.zeros_like(X)
        for sub, off, n in ((self.ss, 0, self.ns), (self.st, self.ns, self.nt)):
            out[off:off + n] = constrained_solve_gamma(sub, X[off:off + n])
        if self.coarse_ids.size:
            out += self.Psi @ (self.G_pinv @ (self.Psi.T @ X))
        return self.Pi(out)

    def _scale(self):
        return max(self.ss.K_GG.diagonal().max(initial=0.0),
                   self.st.K_GG.diagonal().max(initial=0.0), 1e-300)

    def _null_basis(self):
        R = self.lev.problem.rigid_modes
        Rp = np.vstack([R[self.ss.g_gamma], R[self.st.g_gamma]])
        Rp = self.Pi(Rp)
        Q = _orth_cols(Rp)
        if Q.shape[1] == 0:
            return Q
        gB = Q.T @ self.B(Q)
        w, V = np.linalg.eigh(0.5 * (gB + gB.T))
        Z = Q @ V[:, w <= 1e-9 * self._scale()]
        return _orth_cols(Z)

    # -- dense forms (oracles and small pairs) -------------------------------
    def admissible_basis(self):
        """Orthonormal basis of ``range(Pi)`` minus the detected null space."""
        Pd = self.Pi(np.eye(self.n))
        w, V = np.linalg.eigh(0.5 * (Pd + Pd.T))
        Q = V[:, w > 0.5]
        if self.Z.shape[1]:
            Q = _orth_cols(Q - self.Z @ (self.Z.T @ Q))
        return Q

    def dense_matrices(self):
        I = np.eye(self.n)
        return self.A(I), self.B(I), self.Pi(I)

    def dense_eigs(self):
        """All eigenpairs on the admissible subspace, descending."""
        Q = self.admissible_basis()
        if Q.shape[1] == 0:
            return np.zeros(0), np.zeros((self.n, 0))
        gA, gB = Q.T @ self.A(Q), Q.T @ self.B(Q)
        lam, Y = sla.eigh(0.5 * (gA + gA.T), 0.5 * (gB + gB.T))
        return lam[::-1].copy(), Q @ Y[:, ::-1]

    def check_rigid(self):
        """``A z`` must vanish on the detected null space of ``B``."""
        if self.Z.shape[1] == 0:
            return 0.0
        AZ = self.A(self.Z)
        leak = np.linalg.norm(AZ) / self._scale()
        if leak > 1e-6:
            raise RigidModeLeak(f"pair ({self.s}, {self.t}): ||A z|| / scale = {leak:.2e}")
        return leak


def _orth_cols(Y, drop=1e-10):
    if Y.shape[1] == 0:
        return Y
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return Y[:, :0]
    return U[:, s > drop * s[0]]


def build_pair_problem(lev, s, t, pinv_tol=PINV_DROP_TOL):
    pp = PairProblem(lev, s, t, pinv_tol)
    pp.check_rigid()
    return pp


def pair_preconditioner(pp):
    return pp.M


def solve_pair(pp, cfg, m=None, rng=None):
    """Top eigenpairs of the pair pencil: LOBPCG, or dense when the space is small."""
    m = cfg.max_vectors if m is None else m
    n_eff = pp.n - pp.D.shape[0] - pp.Z.shape[1]
    if n_eff <= 0:
        return np.zeros(0), np.zeros((pp.n, 0)), 0, True, "dense"
    if n_eff <= cfg.dense_factor * m + 1:
        lam, V = pp.dense_eigs()
        return lam[:m], V[:, :m], 0, True, "dense"
    rng = np.random.default_rng([cfg.seed, pp.lev.index, pp.s, pp.t]) if rng is None else rng
    X0 = rng.standard_normal((pp.n, m))
    res = lobpcg(pp.A, pp.B, pp.M, X0, cfg.max_iters, cfg.tol, pp.project, rng)
    return res.values, res.vectors, res.iterations, res.all_converged, "lobpcg"


def face_dofs_mask(pp):
    """True at shared dofs that belong to a face glob of the pair."""
    lev = pp.lev
    p = lev.problem
    keep = np.zeros(pp.common.size, dtype=bool)
    for g in lev.globs:
        if g.kind == FACE and set(g.sharing) == {pp.s, pp.t}:
            dofs = np.concatenate([p.node_dofs[v] for v in g.nodes])
            keep |= np.isin(pp.common, dofs)
    return keep


def constraint_rows(pp, vectors):
    """``c_l = (A w_l)^T`` split into the halves on each side of the pair."""
    C = pp.A(vectors).T
    cs = C[:, pp.ps]
    ct = C[:, pp.ns + pp.pt]
    return C, cs, ct


def extract_constraints(pp, values, vectors, tau, max_k=10, edge_zeroing=True):
    """New coarse dofs from eigenvectors with eigenvalue above ``tau``.

    Returns ``(group_or_None, k, asymmetry)`` where ``asymmetry`` measures
    ``max |c^s + c^t|`` on the shared dofs relative to the row size.
    """
    values = np.asarray(values)
    k = int(min(np.sum(values > tau), max_k))
    if k == 0:
        return None, 0, 0.0
    C, cs, ct = constraint_rows(pp, vectors[:, :k])
    scale = np.abs(C).max(initial=0.0) or 1.0
    asym = float(np.abs(cs + ct).max(initial=0.0) / scale)
    rows = 0.5 * (cs - ct)
    # remove what the existing shared coarse dofs already enforce
    if pp.D.shape[0]:
        Q = _orth_cols(pp.D[:, pp.ps].T)
        rows = rows - (rows @ Q) @ Q.T
    if edge_zeroing:
        # after the projection: corner and edge rows live off the face
        rows[:, ~face_dofs_mask(pp)] = 0.0
    support = np.flatnonzero(np.abs(rows).max(axis=0, initial=0.0) > 0)
    rows, rank = reduced_qr_rows(rows[:, support])
    if rank == 0:
        return None, k, asym
    dofs = pp.common[support]
    group = CoarseGroup(ADAPTIVE, dofs, rows, (pp.s, pp.t), -np.ones(rank, dtype=np.int64),
                        pair=(pp.s, pp.t))
    return group, k, asym


def unique_pairs(pairs):
    seen = []
    for p in pairs:
        if (p.s, p.t) not in seen:
            seen.append((p.s, p.t))
    return seen


def adapt_level(lev, cfg, workers=1, add=True):
    """Solve every pair pencil, add coarse dofs and rebuild the coarse space.

    ``omega_post`` of a pair is the first eigenvalue not turned into a
    constraint (the last computed one when the budget is exhausted). With
    ``add=False`` (or ``tau = inf``) only the indicator is evaluated.
    """
    report = LevelAdaptReport(lev.index, tau=cfg.tau)
    todo = unique_pairs(lev.pairs)

    def work(st):
        s, t = st
        try:
            pp = build_pair_problem(lev, s, t, cfg.pinv_tol)
            lam, V, its, conv, how = solve_pair(pp, cfg)
            if lam.size == 0:
                return PairResult(s, t, 0.0, 0.0, 0, its, conv, False, lam, solver=how), None
            group, k, asym = (None, 0, 0.0)
            if add and np.isfinite(cfg.tau):
                group, k, asym = extract_constraints(pp, lam, V, cfg.tau, cfg.max_vectors,
                                                     cfg.edge_zeroing)
            post = float(lam[k]) if k < lam.size else float(lam[-1])
            capped = k >= cfg.max_vectors and lam[-1] > cfg.tau
            added = group.size if group is not None else 0
            return PairResult(s, t, float(lam[0]), post, added, its, conv, bool(capped), lam,
                              asym, solver=how), group
        except AmbddcError as exc:
            raise StageError(f"level {lev.index} pair ({s}, {t})", exc) from exc

    results = pmap(work, todo, workers)
    new_groups = [g for _, g in results if g is not None]
    report.pairs = [r for r, _ in results]
    if new_groups:
        lev.set_groups(lev.groups + new_groups)
    if cfg.recheck and new_groups:
        def again(r):
            pp = build_pair_problem(lev, r.s, r.t, cfg.pinv_tol)
            lam, _, _, _, _ = solve_pair(pp, cfg, m=min(3, cfg.max_vectors))
            return float(lam[0]) if lam.size else 0.0
        for r, v in zip(report.pairs, pmap(again, report.pairs, workers)):
            r.recheck = v
    return report


def condition_indicator(reports):
    """Product of the per-level indicators."""
    out = 1.0
    for r in reports:
        out *= r.omega if hasattr(r, "omega") else float(r)
    return out


def write_pair_audit(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "s", "t", "omega_pre", "omega_post", "iterations",
                    "added", "converged", "capped", "recheck", "solver"])
        for rep in reports:
            for p in rep.pairs:
                w.writerow([rep.level, p.s, p.t, f"{p.omega_pre:.6g}", f"{p.omega_post:.6g}",
                            p.iterations, p.added, int(p.converged), int(p.capped),
                            "" if p.recheck is None else f"{p.recheck:.6g}", p.solver])
