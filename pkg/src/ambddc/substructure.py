"""Per-subdomain kernels: blocks, Schur action, harmonic extension, coarse basis."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import NotPositiveDefinite, SingularInterior, ZeroDiagonal
from .linalg import DENSE_LIMIT, factor_saddle, factor_spd, symmetrize
from .partition import CORNER, EDGE, FACE

ADAPTIVE = "adaptive"
FACE_AVG = "face"


def pmap(fn, items, workers=1):
    """Ordered map, optionally over a thread pool."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class CoarseGroup:
    """A block of coarse dofs: orthonormal functionals on a set of level dofs."""

    kind: str
    dofs: np.ndarray
    rows: np.ndarray
    owners: tuple
    components: np.ndarray
    glob: Optional[int] = None
    pair: Optional[tuple] = None

    @property
    def size(self):
        return self.rows.shape[0]


@dataclass
class Subdomain:
    id: int
    elements: np.ndarray
    gdofs: np.ndarray
    K: sp.csr_matrix
    interior: np.ndarray
    gamma: np.ndarray
    K_II: sp.csr_matrix
    K_IG: sp.csr_matrix
    K_GG: sp.csr_matrix
    KII_factor: object
    weights: Optional[np.ndarray] = None
    coarse_ids: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    saddle: object = None
    S: Optional[np.ndarray] = None
    Psi: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    coarse_matrix: Optional[np.ndarray] = None

    @property
    def n_local(self):
        return self.gdofs.size

    @property
    def g_interior(self):
        return self.gdofs[self.interior]

    @property
    def g_gamma(self):
        return self.gdofs[self.gamma]

    @property
    def direct(self):
        """No interface: the subdomain is the whole domain."""
        return self.gamma.size == 0


def dof_multiplicity(problem, dec):
    count = np.zeros(problem.n_dofs, dtype=np.int64)
    for s in range(dec.n_sub):
        count[subdomain_dofs(problem, dec.elements_of(s))] += 1
    return count


def subdomain_dofs(problem, elems):
    if len(elems) == 0:
        return np.zeros(0, dtype=np.int64)
    d = np.concatenate([np.asarray(problem.elem_dofs[e]) for e in elems])
    return np.unique(d[d >= 0])


def _local_matrix(problem, elems, gdofs):
    n = gdofs.size
    rows, cols, vals = [], [], []
    dense = []
    for e in elems:
        ed = np.asarray(problem.elem_dofs[e])
        M = problem.elem_mats[e]
        keep = ed >= 0
        loc = np.searchsorted(gdofs, ed[keep])
        if sp.issparse(M):
            M = sp.coo_matrix(sp.csr_matrix(M)[keep][:, keep])
            rows.append(loc[M.row])
            cols.append(loc[M.col])
            vals.append(M.data)
        else:
            M = np.asarray(M)[np.ix_(keep, keep)]
            dense.append((loc, M))
    by_size = {}
    for loc, M in dense:
        by_size.setdefault(loc.size, []).append((loc, M))
    for m, items in by_size.items():
        L = np.stack([it[0] for it in items])
        V = np.stack([it[1] for it in items])
        rows.append(np.repeat(L, m, axis=1).ravel())
        cols.append(np.tile(L, (1, m)).ravel())
        vals.append(V.ravel())
    if not rows:
        return sp.csr_matrix((n, n))
    K = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    K.sum_duplicates()
    return symmetrize(K)


GAMMA_DENSE_LIMIT = 4000


def build_subdomain(problem, dec, s, multiplicity, dense_limit=DENSE_LIMIT,
                    gamma_dense_limit=GAMMA_DENSE_LIMIT):
    """Local stiffness, interior/interface split and interior factorization.

    When the interface has at most ``gamma_dense_limit`` dofs the Schur
    complement is formed explicitly; constrained solves then work on the
    interface alone.
    """
    elems = dec.elements_of(s)
    gdofs = subdomain_dofs(problem, elems)
    K = _local_matrix(problem, elems, gdofs)
    on_gamma = multiplicity[gdofs] >= 2
    interior = np.flatnonzero(~on_gamma)
    gamma = np.flatnonzero(on_gamma)
    K_II = K[interior][:, interior].tocsc()
    K_IG = K[interior][:, gamma].tocsr()
    K_GG = K[gamma][:, gamma].tocsr()
    try:
        fac = factor_spd(K_II, dense_limit)
    except NotPositiveDefinite as exc:
        raise SingularInterior(f"subdomain {s}: {exc}") from None
    sub = Subdomain(s, elems, gdofs, K, interior, gamma, K_II, K_IG, K_GG, fac)
    if 0 < gamma.size <= gamma_dense_limit:
        sub.S = symmetrize(dense_schur(sub))
    return sub


def schur_apply(sub, x):
    """``S x = K_GG x - K_GI K_II^{-1} K_IG x`` with one interior solve."""
    x = np.asarray(x, dtype=float)
    if sub.S is not None:
        return sub.S @ x
    y = sub.K_GG @ x
    if sub.interior.size:
        y = y - sub.K_IG.T @ sub.KII_factor.solve(sub.K_IG @ x)
    return y


def harmonic_extension(sub, x):
    """Local vector equal to ``x`` on the interface, discrete harmonic inside."""
    x = np.asarray(x, dtype=float)
    out = np.zeros((sub.n_local,) + x.shape[1:])
    out[sub.gamma] = x
    if sub.interior.size:
        out[sub.interior] = -sub.KII_factor.solve(sub.K_IG @ x)
    return out


def dense_schur(sub):
    """Explicit Schur complement ``K_GG - K_GI K_II^{-1} K_IG``."""
    y = sub.K_GG.toarray()
    if sub.interior.size:
        X = sub.KII_factor.solve(sub.K_IG.toarray())
        y = y - sub.K_IG.T @ X
    return y


def stiffness_scaling_weights(subs, n_dofs):
    """Set ``sub.weights`` on the interface to ``K^s_jj / sum_t K^t_jj``."""
    total = np.zeros(n_dofs)
    for sub in subs:
        total[sub.g_gamma] += sub.K_GG.diagonal()
    for sub in subs:
        den = total[sub.g_gamma]
        if np.any(den <= 0):
            raise ZeroDiagonal(f"zero stiffness diagonal on the interface of subdomain {sub.id}")
        sub.weights = sub.K_GG.diagonal() / den
    return total


def _average_rows(problem, dofs):
    comp = problem.dof_component[dofs]
    rows, comps = [], []
    for c in np.unique(comp[comp >= 0]):
        sel = comp == c
        r = np.zeros(dofs.size)
        r[sel] = 1.0 / np.sqrt(sel.sum())
        rows.append(r)
        comps.append(c)
    return np.array(rows).reshape(len(rows), dofs.size), np.array(comps, dtype=np.int64)


def initial_constraints(problem, globs, policy="c+e"):
    """Corner values, edge averages and (policy ``c+e+f``) face averages."""
    use_edges = "e" in policy.split("+")
    use_faces = "f" in policy.split("+")
    groups = []
    for g in globs:
        dofs = np.concatenate([problem.node_dofs[v] for v in g.nodes]).astype(np.int64)
        if dofs.size == 0:
            continue
        if g.kind == CORNER:
            rows = np.eye(dofs.size)
            comps = problem.dof_component[dofs]
        elif (g.kind == EDGE and use_edges) or (g.kind == FACE and use_faces):
            rows, comps = _average_rows(problem, dofs)
            if rows.shape[0] == 0:
                continue
        else:
            continue
        kind = FACE_AVG if g.kind == FACE else g.kind
        groups.append(CoarseGroup(kind, dofs, rows, tuple(g.sharing), comps, glob=g.id))
    return groups


def saturated_constraints(problem, globs):
    """Every interface dof as a corner value."""
    groups = []
    for g in globs:
        for v in g.nodes:
            dofs = np.asarray(problem.node_dofs[v], dtype=np.int64)
            if dofs.size:
                groups.append(CoarseGroup(CORNER, dofs, np.eye(dofs.size), tuple(g.sharing),
                                          problem.dof_component[dofs], glob=g.id))
    return groups


def group_offsets(groups):
    sizes = np.array([g.size for g in groups], dtype=np.int64)
    return np.concatenate([[0], np.cumsum(sizes)])


def assemble_constraints(sub, groups, offsets):
    """``C^s`` over the local dofs of ``sub`` from the groups it owns."""
    ids, blocks = [], []
    for k, g in enumerate(groups):
        if sub.id not in g.owners:
            continue
        loc = np.searchsorted(sub.gdofs, g.dofs)
        block = np.zeros((g.size, sub.n_local))
        block[:, loc] = g.rows
        blocks.append(block)
        ids.append(np.arange(offsets[k], offsets[k + 1]))
    if blocks:
        sub.C = np.vstack(blocks)
        sub.coarse_ids = np.concatenate(ids)
    else:
        sub.C = np.zeros((0, sub.n_local))
        sub.coarse_ids = np.zeros(0, dtype=np.int64)
    return sub.C


def coarse_basis(sub, dense_limit=DENSE_LIMIT):
    """Factor the constrained saddle system and solve for ``Psi`` and ``mu``.

    With an explicit Schur complement the saddle system lives on the
    interface, ``[[S, C_G^T], [C_G, 0]]``, and ``Psi`` is extended
    harmonically; otherwise the full local system is factored.
    """
    n, m = sub.n_local, sub.C.shape[0]
    if sub.S is not None:
        # balance the constraint block against the stiffness scale
        c = float(np.sqrt(max(np.abs(np.diag(sub.S)).max(), 1e-300)))
        CG = c * sub.C[:, sub.gamma]
        M = np.block([[sub.S, CG.T], [CG, np.zeros((m, m))]])
        sub.saddle = factor_saddle(M, dense_limit=max(dense_limit, M.shape[0]))
        nG = sub.gamma.size
    else:
        c = 1.0
        Cs = sp.csr_matrix(sub.C)
        M = sp.bmat([[sub.K, Cs.T], [Cs, None]], format="csc")
        sub.saddle = factor_saddle(M, dense_limit)
        nG = n
    rhs = np.zeros((nG + m, m))
    rhs[nG:] = c * np.eye(m)
    sol = sub.saddle.solve(rhs) if m else np.zeros((nG + m, 0))
    if sub.S is not None:
        sub.Psi = harmonic_extension(sub, sol[:nG])
    else:
        sub.Psi = sol[:n]
    sub.mu = symmetrize(c * sol[nG:]) if m else np.zeros((0, 0))
    sub.coarse_matrix = -sub.mu
    return sub.Psi, sub.mu, sub.coarse_matrix


def constrained_solve_gamma(sub, g):
    """Interface values of the constrained local solve with load ``g`` on the
    interface and zero coarse values."""
    g = np.asarray(g, dtype=float)
    m = sub.C.shape[0]
    if sub.S is not None:
        rhs = np.zeros((sub.gamma.size + m,) + g.shape[1:])
        rhs[:sub.gamma.size] = g
        return sub.saddle.solve(rhs)[:sub.gamma.size]
    full = np.zeros((sub.n_local,) + g.shape[1:])
    full[sub.gamma] = g
    return constrained_solve(sub, full)[sub.gamma]


def constrained_solve(sub, g):
    """First block of the saddle solve with rhs ``(g, 0)``: zero coarse values."""
    g = np.asarray(g, dtype=float)
    m = sub.C.shape[0]
    if sub.S is not None:
        # condense the interior load onto the interface
        gI = g[sub.interior]
        yI = sub.KII_factor.solve(gI) if sub.interior.size else gI
        gG = g[sub.gamma] - sub.K_IG.T @ yI
        uG = constrained_solve_gamma(sub, gG)
        out = np.zeros_like(g)
        out[sub.gamma] = uG
        if sub.interior.size:
            out[sub.interior] = yI - sub.KII_factor.solve(sub.K_IG @ uG)
        return out
    rhs = np.zeros((sub.n_local + m,) + g.shape[1:])
    rhs[:sub.n_local] = g
    return sub.saddle.solve(rhs)[:sub.n_local]
