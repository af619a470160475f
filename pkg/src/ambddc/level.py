"""Level problems: the element/node view shared by every decomposition level.

Level 1 elements are finite elements. On level ``i + 1`` the elements are the
level ``i`` substructures (with their local coarse matrices) and the nodes are
the level ``i`` coarse dof groups (corners, edges, faces, adaptive blocks).
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .fem import POISSON, rigid_body_modes
from .errors import IndefiniteSplit, NotPositiveDefinite
from .linalg import factor_spd


@dataclass
class LevelProblem:
    level: int
    A: sp.csr_matrix
    elem_dofs: list
    elem_mats: list
    elem_nodes: list
    node_dofs: list
    node_coords: np.ndarray
    elem_centroids: np.ndarray
    rigid_modes: np.ndarray
    dof_component: np.ndarray
    bbox: tuple
    formulation: str = POISSON
    grid: Optional[tuple] = None
    node_labels: Optional[list] = field(default=None, repr=False)

    @property
    def n_dofs(self):
        return self.A.shape[0]

    @property
    def n_elements(self):
        return len(self.elem_mats)

    @property
    def n_nodes(self):
        return len(self.node_dofs)

    def node_element_incidence(self):
        rows = np.concatenate([np.asarray(n, dtype=np.int64) for n in self.elem_nodes])
        cols = np.repeat(np.arange(self.n_elements), [len(n) for n in self.elem_nodes])
        return sp.csr_matrix((np.ones(rows.size), (rows, cols)),
                             shape=(self.n_nodes, self.n_elements))

    def element_adjacency(self):
        """Elements sharing at least one node with dofs."""
        NE = self.node_element_incidence()
        has = np.array([len(d) > 0 for d in self.node_dofs])
        NE = sp.diags(has.astype(float)) @ NE
        G = (NE.T @ NE).tocsr()
        G.setdiag(0)
        G.eliminate_zeros()
        G.data[:] = 1.0
        return G


def from_problem_system(ps):
    """Level-1 view of an assembled finite-element system."""
    mesh = ps.mesh
    d = mesh.dofs_per_node
    full = np.arange(mesh.n_dofs).reshape(mesh.n_nodes, d)
    fm = ps.free_map[full]
    node_dofs = [row[row >= 0] for row in fm]
    R = rigid_body_modes(mesh.coords, d)[ps.free]
    comp = (ps.free % d).astype(np.int64)
    return LevelProblem(
        level=1,
        A=ps.A,
        elem_dofs=list(ps.elem_dofs),
        elem_mats=ps.elem_mats,
        elem_nodes=list(mesh.elements),
        node_dofs=node_dofs,
        node_coords=mesh.coords,
        elem_centroids=mesh.centroids(),
        rigid_modes=R,
        dof_component=comp,
        bbox=(mesh.coords.min(axis=0), mesh.coords.max(axis=0)),
        formulation=ps.formulation,
        grid=mesh.grid,
    )


def _check_psd(K, part, shift=1e-8):
    d = K.diagonal()
    scale = max(float(np.abs(d).max(initial=0.0)), 1e-300)
    try:
        factor_spd(K + shift * scale * sp.identity(K.shape[0], format="csr"))
    except NotPositiveDefinite:
        raise IndefiniteSplit(f"part {part}: owner block is indefinite after splitting off "
                              "cross-part couplings; use mesh ingestion instead") from None


def algebraic_problem(A, dof_part, coords=None, dofs_per_node=1, formulation=POISSON):
    """Level-1 view of an assembled matrix with a dof-to-subdomain map.

    Each dof is owned by one part. A coupling ``a_ij`` between dofs of
    different parts is split off as the PSD two-dof element
    ``[[|a|, a], [a, |a|]]`` shared half-and-half by both parts; what remains
    of each part's block (with the diagonal reduced accordingly) becomes one
    element owned by that part. The elements sum exactly to ``A``. Owner
    blocks are PSD when ``A`` is diagonally dominant and often otherwise;
    an indefinite block (typical for elasticity) raises IndefiniteSplit.

    Returns ``(level_problem, element_partition)``.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    dof_part = np.asarray(dof_part, dtype=np.int64)
    C = sp.triu(A, k=1).tocoo()
    cross = dof_part[C.row] != dof_part[C.col]
    ci, cj, cv = C.row[cross], C.col[cross], C.data[cross]
    reduce_diag = np.zeros(n)
    np.add.at(reduce_diag, ci, np.abs(cv))
    np.add.at(reduce_diag, cj, np.abs(cv))

    elem_dofs, elem_mats, elem_part = [], [], []
    parts = np.unique(dof_part)
    Acoo = A.tocoo()
    same = dof_part[Acoo.row] == dof_part[Acoo.col]
    for p in parts:
        own = np.flatnonzero(dof_part == p)
        loc = -np.ones(n, dtype=np.int64)
        loc[own] = np.arange(own.size)
        m = same & (dof_part[Acoo.row] == p)
        K = sp.csr_matrix((Acoo.data[m], (loc[Acoo.row[m]], loc[Acoo.col[m]])),
                          shape=(own.size, own.size))
        K = K - sp.diags(reduce_diag[own])
        _check_psd(K, p)
        elem_dofs.append(own)
        elem_mats.append(K.tocsr())
        elem_part.append(p)
    for i, j, v in zip(ci, cj, cv):
        half = 0.5 * np.array([[abs(v), v], [v, abs(v)]])
        for p in (dof_part[i], dof_part[j]):
            elem_dofs.append(np.array([i, j]))
            elem_mats.append(half)
            elem_part.append(p)

    if coords is not None:
        coords = np.asarray(coords, dtype=float)
        keys, node_of = np.unique(np.round(coords, 12), axis=0, return_inverse=True)
        node_of = node_of.ravel()
        node_coords = keys
    else:
        node_of = np.arange(n)
        node_coords = np.zeros((n, 3))
        node_coords[:, 0] = np.arange(n)
    n_nodes = node_coords.shape[0]
    order = np.argsort(node_of, kind="stable")
    bounds = np.searchsorted(node_of[order], np.arange(n_nodes + 1))
    node_dofs = [order[bounds[k]:bounds[k + 1]] for k in range(n_nodes)]
    elem_nodes = [np.unique(node_of[d]) for d in elem_dofs]
    if coords is not None and dofs_per_node == 3:
        R = np.zeros((n, 6))
        Rn = rigid_body_modes(node_coords, 3).reshape(n_nodes, 3, 6)
        comp = np.zeros(n, dtype=np.int64)
        for k, dofs in enumerate(node_dofs):
            comp[dofs] = np.arange(len(dofs))
            R[dofs] = Rn[k, :len(dofs)]
    else:
        R = np.ones((n, 1))
        comp = np.zeros(n, dtype=np.int64)
    centroids = np.array([node_coords[en].mean(axis=0) for en in elem_nodes])
    lp = LevelProblem(
        level=1, A=A, elem_dofs=elem_dofs, elem_mats=elem_mats, elem_nodes=elem_nodes,
        node_dofs=node_dofs, node_coords=node_coords, elem_centroids=centroids,
        rigid_modes=R, dof_component=comp,
        bbox=(node_coords.min(axis=0), node_coords.max(axis=0)), formulation=formulation,
    )
    return lp, np.asarray(elem_part, dtype=np.int64)
