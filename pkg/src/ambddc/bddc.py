"""Multilevel BDDC: level set-up, the preconditioner sweep and dense oracles."""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NotPositiveDefinite, StageError
from .level import LevelProblem
from .linalg import DENSE_LIMIT, factor_spd, null_space_rows, symmetrize
from .substructure import (assemble_constraints, build_subdomain, coarse_basis,
                           constrained_solve_gamma, dof_multiplicity, group_offsets, pmap,
                           stiffness_scaling_weights)


@dataclass
class Level:
    problem: LevelProblem
    dec: object
    globs: list
    pairs: list
    subs: list
    groups: list = field(default_factory=list)
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))
    coarse_A: sp.csr_matrix = None
    workers: int = 1

    @property
    def index(self):
        return self.problem.level

    @property
    def n_coarse(self):
        return int(self.offsets[-1])

    def set_groups(self, groups, dense_limit=DENSE_LIMIT):
        """Install coarse dofs, rebuild coarse bases and the coarse matrix."""
        self.groups = list(groups)
        self.offsets = group_offsets(self.groups)

        def work(sub):
            assemble_constraints(sub, self.groups, self.offsets)
            try:
                coarse_basis(sub, dense_limit)
            except Exception as exc:
                raise StageError(f"level {self.index} subdomain {sub.id}", exc) from exc
            return sub

        pmap(work, self.subs, self.workers)
        nc = self.n_coarse
        rows, cols, vals = [], [], []
        for sub in self.subs:
            ids = sub.coarse_ids
            rows.append(np.repeat(ids, ids.size))
            cols.append(np.tile(ids, ids.size))
            vals.append(sub.coarse_matrix.ravel())
        if nc:
            A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                              shape=(nc, nc))
            A.sum_duplicates()
            self.coarse_A = symmetrize(A)
        else:
            self.coarse_A = sp.csr_matrix((0, 0))
        return self

    def next_problem(self):
        """The level ``i + 1`` problem: subdomains become elements, groups nodes."""
        p = self.problem
        dof_node = np.empty(p.n_dofs, dtype=np.int64)
        for v, d in enumerate(p.node_dofs):
            dof_node[d] = v
        node_dofs = [np.arange(self.offsets[k], self.offsets[k + 1]) for k in range(len(self.groups))]
        coords = np.array([p.node_coords[np.unique(dof_node[g.dofs])].mean(axis=0)
                           for g in self.groups]).reshape(len(self.groups), 3)
        elem_nodes = [np.array([k for k, g in enumerate(self.groups) if s.id in g.owners],
                               dtype=np.int64) for s in self.subs]
        centroids = np.array([p.elem_centroids[s.elements].mean(axis=0) for s in self.subs])
        R = np.vstack([g.rows @ p.rigid_modes[g.dofs] for g in self.groups]) if self.groups \
            else np.zeros((0, p.rigid_modes.shape[1]))
        comp = np.concatenate([g.components for g in self.groups]).astype(np.int64) \
            if self.groups else np.zeros(0, dtype=np.int64)
        return LevelProblem(
            level=p.level + 1, A=self.coarse_A, elem_dofs=[s.coarse_ids for s in self.subs],
            elem_mats=[s.coarse_matrix for s in self.subs], elem_nodes=elem_nodes,
            node_dofs=node_dofs, node_coords=coords, elem_centroids=centroids,
            rigid_modes=R, dof_component=comp, bbox=p.bbox, formulation=p.formulation,
            node_labels=[g.kind for g in self.groups],
        )


def setup_level(problem, dec, globs, pairs, groups, workers=1, dense_limit=DENSE_LIMIT):
    mult = dof_multiplicity(problem, dec)

    def build(s):
        try:
            return build_subdomain(problem, dec, s, mult, dense_limit)
        except Exception as exc:
            raise StageError(f"level {problem.level} subdomain {s}", exc) from exc

    subs = pmap(build, range(dec.n_sub), workers)
    stiffness_scaling_weights(subs, problem.n_dofs)
    lev = Level(problem, dec, globs, pairs, subs, workers=workers)
    lev.set_groups(groups, dense_limit)
    return lev


@dataclass
class PreconditionerHierarchy:
    levels: list
    top_problem: LevelProblem
    top: object

    @property
    def n_levels(self):
        return len(self.levels) + 1

    @property
    def n(self):
        return self.levels[0].problem.n_dofs

    def __call__(self, r):
        return apply_preconditioner(self, r)


def factor_top(problem, dense_limit=DENSE_LIMIT):
    try:
        return factor_spd(problem.A, dense_limit)
    except NotPositiveDefinite as exc:
        raise NotPositiveDefinite(f"coarse problem of level {problem.level - 1}: {exc}") from None


def setup_hierarchy(levels, dense_limit=DENSE_LIMIT):
    """Attach the direct solver for the coarse problem of the last level."""
    top = levels[-1].next_problem()
    return PreconditionerHierarchy(levels, top, factor_top(top, dense_limit))


def _apply_level(h, i, r):
    lev = h.levels[i]
    A = lev.problem.A
    u_I = np.zeros_like(r)
    for sub in lev.subs:
        if sub.interior.size:
            u_I[sub.g_interior] = sub.KII_factor.solve(r[sub.g_interior])
    r_B = r - A @ u_I
    rc = np.zeros((lev.n_coarse,) + r.shape[1:])
    w_delta = []
    for sub in lev.subs:
        if not sub.gamma.size:
            w_delta.append(None)
            continue
        g = sub.weights.reshape((-1,) + (1,) * (r.ndim - 1)) * r_B[sub.g_gamma]
        w_delta.append(constrained_solve_gamma(sub, g))
        if sub.coarse_ids.size:
            np.add.at(rc, sub.coarse_ids, sub.Psi[sub.gamma].T @ g)
    if i + 1 < len(h.levels):
        uc = _apply_level(h, i + 1, rc)
    else:
        uc = h.top.solve(rc)
    u = u_I
    u_B = np.zeros_like(r)
    for sub, w in zip(lev.subs, w_delta):
        if not sub.gamma.size:
            continue
        y = w + sub.Psi[sub.gamma] @ uc[sub.coarse_ids]
        np.add.at(u_B, sub.g_gamma, sub.weights.reshape((-1,) + (1,) * (r.ndim - 1)) * y)
    for sub in lev.subs:
        if sub.interior.size:
            u[sub.g_interior] -= sub.KII_factor.solve(sub.K_IG @ u_B[sub.g_gamma])
    on_gamma = np.zeros(r.shape[0], dtype=bool)
    for sub in lev.subs:
        on_gamma[sub.g_gamma] = True
    u[on_gamma] = u_B[on_gamma]
    return u


def apply_preconditioner(h, r):
    """One multilevel BDDC sweep. ``r`` may be a vector or a block of columns."""
    r = np.asarray(r, dtype=float)
    if r.shape[0] != h.n:
        raise DimensionMismatch(f"residual has {r.shape[0]} entries, level 1 has {h.n} dofs")
    return _apply_level(h, 0, r)


def preconditioner_matrix(h):
    """Dense ``M`` (test oracle; small problems only)."""
    M = apply_preconditioner(h, np.eye(h.n))
    return 0.5 * (M + M.T)


def dense_operators(lev):
    """Explicit ``W``-space matrices of a level (test oracle).

    Returns a dict with ``R`` (U -> W copy), ``E`` (W -> U averaging),
    ``H`` (U -> U, the map ``I - P``), ``PW`` (the projection ``P`` on W),
    ``KW`` (block-diagonal stiffness), ``T_delta`` (basis of functions with
    zero coarse dofs), ``Psi`` (basis of the coarse space in W) and
    ``slices`` (local ranges of each subdomain in W).
    """
    p = lev.problem
    n = p.n_dofs
    sizes = [s.n_local for s in lev.subs]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    nW = int(starts[-1])
    R = np.zeros((nW, n))
    E = np.zeros((n, nW))
    KW = np.zeros((nW, nW))
    PW = np.zeros((nW, nW))
    T_delta, Psi = [], np.zeros((nW, lev.n_coarse))
    for sub, a in zip(lev.subs, starts[:-1]):
        sl = slice(a, a + sub.n_local)
        R[a + np.arange(sub.n_local), sub.gdofs] = 1.0
        w = np.ones(sub.n_local)
        w[sub.gamma] = sub.weights
        E[sub.gdofs, a + np.arange(sub.n_local)] = w
        KW[sl, sl] = sub.K.toarray()
        # P on W: interior part of the local solve with zero interface
        loc = np.zeros((sub.n_local, sub.n_local))
        if sub.interior.size:
            Kii = sub.K_II.toarray()
            Kig = sub.K_IG.toarray()
            X = np.linalg.solve(Kii, np.hstack([Kii, Kig]))
            cols = np.concatenate([sub.interior, sub.gamma])
            loc[np.ix_(sub.interior, cols)] = X
        PW[sl, sl] = loc
        Z = null_space_rows(sub.C)
        block = np.zeros((nW, Z.shape[1]))
        block[sl] = Z
        T_delta.append(block)
        Psi[sl][:, sub.coarse_ids] = 0.0
        Psi[a:a + sub.n_local, sub.coarse_ids] = sub.Psi
    A = p.A.toarray()
    on_gamma = np.zeros(n, dtype=bool)
    for sub in lev.subs:
        on_gamma[sub.g_gamma] = True
    I_ = np.flatnonzero(~on_gamma)
    G = np.flatnonzero(on_gamma)
    H = np.zeros((n, n))
    H[G, G] = 1.0
    if I_.size and G.size:
        H[np.ix_(I_, G)] = -np.linalg.solve(A[np.ix_(I_, I_)], A[np.ix_(I_, G)])
    return dict(R=R, E=E, H=H, PW=PW, KW=KW, A=A, T_delta=np.hstack(T_delta), Psi=Psi,
                starts=starts, interior=I_, gamma=G)


def exact_level_bound(lev):
    """``sup ||(I - P) E w||_a^2 / ||w||_a^2`` over the partially continuous space."""
    ops = dense_operators(lev)
    T = np.hstack([ops["T_delta"], ops["Psi"]])
    HE = ops["H"] @ ops["E"] @ T
    num = HE.T @ ops["A"] @ HE
    den = T.T @ ops["KW"] @ T
    den = 0.5 * (den + den.T)
    num = 0.5 * (num + num.T)
    w, V = np.linalg.eigh(den)
    keep = w > 1e-12 * w.max()
    X = V[:, keep] / np.sqrt(w[keep])
    lam = np.linalg.eigvalsh(X.T @ num @ X)
    return float(lam.max())
