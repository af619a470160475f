"""Structured hexahedral meshes and trilinear finite elements.

Covers the scalar (Poisson) and linear elasticity formulations, the bar
material layouts used by the cube benchmarks, and Dirichlet elimination.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateElement, EmptyFreeSet, ResolutionTooCoarse

POISSON = "poisson"
ELASTICITY = "elasticity"

# reference corners of the trilinear hexahedron, counter-clockwise bottom then top
_CORNERS = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                     [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], dtype=float)
_G = 1.0 / np.sqrt(3.0)
_GAUSS = np.array([[a, b, c] for c in (-_G, _G) for b in (-_G, _G) for a in (-_G, _G)])


def _shape(xi):
    """Shape function values (8,) and reference derivatives (3, 8) at ``xi``."""
    t = 1.0 + _CORNERS * xi
    N = 0.125 * t[:, 0] * t[:, 1] * t[:, 2]
    dN = 0.125 * np.stack([_CORNERS[:, 0] * t[:, 1] * t[:, 2],
                           _CORNERS[:, 1] * t[:, 0] * t[:, 2],
                           _CORNERS[:, 2] * t[:, 0] * t[:, 1]])
    return N, dN


_SHAPES = [_shape(xi) for xi in _GAUSS]


@dataclass
class Mesh:
    coords: np.ndarray
    elements: np.ndarray
    dofs_per_node: int = 1
    grid: Optional[tuple] = None
    lengths: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= len(self.coords)):
            raise ValueError("element connectivity out of range")

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_elements(self):
        return self.elements.shape[0]

    @property
    def n_dofs(self):
        return self.n_nodes * self.dofs_per_node

    def element_dofs(self):
        d = self.dofs_per_node
        return (self.elements[:, :, None] * d + np.arange(d)).reshape(self.n_elements, 8 * d)

    def centroids(self):
        return self.coords[self.elements].mean(axis=1)


@dataclass
class MaterialField:
    young: Optional[np.ndarray] = None
    poisson: Optional[np.ndarray] = None
    conductivity: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("young", "poisson", "conductivity"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))
        if self.young is not None:
            if np.any(self.young <= 0):
                raise ValueError("Young's modulus must be positive")
            if np.any(self.poisson < 0) or np.any(self.poisson >= 0.5):
                raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if self.conductivity is not None and np.any(self.conductivity <= 0):
            raise ValueError("conductivity must be positive")

    def scaled(self, alpha):
        if self.conductivity is not None:
            return MaterialField(conductivity=alpha * self.conductivity)
        return MaterialField(young=alpha * self.young, poisson=self.poisson.copy())

    def params(self, e):
        if self.conductivity is not None:
            return (float(self.conductivity[e]),)
        return (float(self.young[e]), float(self.poisson[e]))


def uniform_material(mesh, formulation, E=1.0, nu=0.3):
    n = mesh.n_elements
    if formulation == POISSON:
        return MaterialField(conductivity=np.full(n, float(E)))
    return MaterialField(young=np.full(n, float(E)), poisson=np.full(n, float(nu)))


def build_box_mesh(nx, ny, nz, lengths=(1.0, 1.0, 1.0), dofs_per_node=1):
    """Uniform hexahedral grid, lexicographic node numbering with x fastest."""
    if min(nx, ny, nz) < 1:
        raise ValueError("need at least one element per axis")
    xs = [np.linspace(0.0, L, n + 1) for L, n in zip(lengths, (nx, ny, nz))]
    Z, Y, X = np.meshgrid(xs[2], xs[1], xs[0], indexing="ij")
    coords = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    elements = np.column_stack([nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                                nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1),
                                nid(i, j + 1, k + 1)])
    return Mesh(coords, elements, dofs_per_node, grid=(nx, ny, nz), lengths=tuple(lengths))


def build_cube_mesh(elements_per_axis, dofs_per_node=1):
    n = int(elements_per_axis)
    if n < 1:
        raise ValueError("elements_per_axis must be >= 1")
    return build_box_mesh(n, n, n, dofs_per_node=dofs_per_node)


def _geometry(xe):
    """Per Gauss point: (N, physical gradients (3, 8), detJ)."""
    out = []
    for N, dN in _SHAPES:
        J = dN @ xe
        det = np.linalg.det(J)
        if det <= 0:
            raise DegenerateElement(f"nonpositive Jacobian {det:.3e}")
        out.append((N, np.linalg.solve(J, dN), det))
    return out


def _elasticity_D(E, nu):
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[3:, 3:] = mu * np.eye(3)
    return D


def _strain_B(G):
    B = np.zeros((6, 24))
    B[0, 0::3] = G[0]
    B[1, 1::3] = G[1]
    B[2, 2::3] = G[2]
    B[3, 0::3], B[3, 1::3] = G[1], G[0]
    B[4, 1::3], B[4, 2::3] = G[2], G[1]
    B[5, 0::3], B[5, 2::3] = G[2], G[0]
    return B


def element_stiffness(xe, params, formulation):
    """Element matrix of a trilinear hexahedron (2x2x2 Gauss).

    ``xe`` is the (8, 3) array of node coordinates, ``params`` is
    ``(conductivity,)`` or ``(E, nu)``.
    """
    xe = np.asarray(xe, dtype=float)
    if formulation == POISSON:
        (k,) = params
        K = np.zeros((8, 8))
        for _, G, det in _geometry(xe):
            K += k * det * (G.T @ G)
    else:
        D = _elasticity_D(*params)
        K = np.zeros((24, 24))
        for _, G, det in _geometry(xe):
            B = _strain_B(G)
            K += det * (B.T @ D @ B)
    return 0.5 * (K + K.T)


def element_load(xe, body_force, formulation):
    body = np.atleast_1d(np.asarray(body_force, dtype=float))
    d = 1 if formulation == POISSON else 3
    if body.size < d:
        # scalar density acts along -z
        body = np.array([0.0, 0.0, -body[0]])
    f = np.zeros(8 * d)
    for N, _, det in _geometry(np.asarray(xe, dtype=float)):
        f += det * np.kron(N, body[:d])
    return f


def rigid_body_modes(coords, dofs_per_node):
    """Null-space basis of the unconstrained operator at the given nodes.

    Scalar problems get the constant vector; elasticity gets three
    translations and three rotations about the centroid.
    """
    coords = np.atleast_2d(coords)
    n = coords.shape[0]
    if dofs_per_node == 1:
        return np.ones((n, 1))
    x = coords - coords.mean(axis=0)
    R = np.zeros((n, 3, 6))
    R[:, 0, 0] = R[:, 1, 1] = R[:, 2, 2] = 1.0
    R[:, 1, 3], R[:, 2, 3] = -x[:, 2], x[:, 1]
    R[:, 0, 4], R[:, 2, 4] = x[:, 2], -x[:, 0]
    R[:, 0, 5], R[:, 1, 5] = -x[:, 1], x[:, 0]
    return R.reshape(3 * n, 6)


@dataclass
class BoundaryConditions:
    """Fixed full-system dofs (with prescribed values) and a body force."""

    fixed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    values: Optional[np.ndarray] = None
    body_force: object = 1.0


def all_faces_fixed(mesh, body_force=1.0):
    lo, hi = mesh.coords.min(axis=0), mesh.coords.max(axis=0)
    on = np.any(np.isclose(mesh.coords, lo) | np.isclose(mesh.coords, hi), axis=1)
    nodes = np.flatnonzero(on)
    d = mesh.dofs_per_node
    return BoundaryConditions((nodes[:, None] * d + np.arange(d)).ravel(), None, body_force)


def vertical_edge_fixed(mesh, body_force=None):
    """Clamp the vertical edge x = y = 0; gravity along -z by default.

    Nodes of the element column along the edge are fixed. Fixing only the
    nodes on the line itself would leave the rotation about that line free.
    """
    lo = mesh.coords.min(axis=0)
    conn = mesh.elements
    x = mesh.coords[conn]
    touching = np.any(np.isclose(x[:, :, 0], lo[0]) & np.isclose(x[:, :, 1], lo[1]), axis=1)
    nodes = np.unique(conn[touching])
    d = mesh.dofs_per_node
    if body_force is None:
        body_force = (0.0, 0.0, -1.0) if d == 3 else 1.0
    return BoundaryConditions((nodes[:, None] * d + np.arange(d)).ravel(), None, body_force)


@dataclass
class ProblemSystem:
    """Assembled free-dof system ``A u = f`` plus the element data behind it."""

    A: sp.csr_matrix
    f: np.ndarray
    fixed: np.ndarray
    free: np.ndarray
    free_map: np.ndarray
    formulation: str
    mesh: Optional[Mesh] = None
    elem_dofs: Optional[np.ndarray] = None
    elem_mats: Optional[list] = None
    fixed_values: Optional[np.ndarray] = None

    @property
    def n(self):
        return self.A.shape[0]


def element_matrices(mesh, material, formulation):
    """One matrix per element; identical geometry and material share an object."""
    cache = {}
    mats = []
    for e, conn in enumerate(mesh.elements):
        xe = mesh.coords[conn]
        key = (material.params(e), np.round(xe - xe[0], 12).tobytes())
        K = cache.get(key)
        if K is None:
            K = element_stiffness(xe, material.params(e), formulation)
            cache[key] = K
        mats.append(K)
    return mats


def _assemble_full(n, elem_dofs, elem_mats, chunk=4096):
    A = sp.csr_matrix((n, n))
    ne = len(elem_mats)
    for start in range(0, ne, chunk):
        stop = min(ne, start + chunk)
        dofs = elem_dofs[start:stop]
        vals = np.stack(elem_mats[start:stop])
        m = dofs.shape[1]
        rows = np.repeat(dofs, m, axis=1).ravel()
        cols = np.tile(dofs, (1, m)).ravel()
        A = A + sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))
    return A


def assemble(mesh, material, formulation, bc=None):
    """Assemble, then eliminate fixed dofs symmetrically with load correction."""
    if bc is None:
        bc = BoundaryConditions()
    d = 1 if formulation == POISSON else 3
    if mesh.dofs_per_node != d:
        raise ValueError(f"{formulation} needs {d} dofs per node, mesh has {mesh.dofs_per_node}")
    nel = mesh.n_elements
    n_param = len(material.conductivity if material.conductivity is not None else material.young)
    if n_param != nel:
        raise ValueError("material size does not match mesh")
    elem_dofs = mesh.element_dofs()
    mats = element_matrices(mesh, material, formulation)
    n = mesh.n_dofs
    A_full = _assemble_full(n, elem_dofs, mats)
    f_full = np.zeros(n)
    load_cache = {}
    for e, conn in enumerate(mesh.elements):
        xe = mesh.coords[conn]
        key = np.round(xe - xe[0], 12).tobytes()
        fe = load_cache.get(key)
        if fe is None:
            fe = element_load(xe, bc.body_force, formulation)
            load_cache[key] = fe
        np.add.at(f_full, elem_dofs[e], fe)

    fixed = np.unique(np.asarray(bc.fixed, dtype=np.int64))
    free = np.setdiff1d(np.arange(n), fixed)
    if free.size == 0:
        raise EmptyFreeSet("every dof is fixed")
    free_map = -np.ones(n, dtype=np.int64)
    free_map[free] = np.arange(free.size)
    A_full = A_full.tocsr()
    A = A_full[free][:, free].tocsr()
    f = f_full[free].copy()
    values = None
    if bc.values is not None:
        values = np.asarray(bc.values, dtype=float)
        if np.any(values):
            f -= A_full[free][:, fixed] @ values
    A = A.tocsr()
    A.sort_indices()
    return ProblemSystem(A, f, fixed, free, free_map, formulation, mesh,
                         np.where(elem_dofs >= 0, free_map[elem_dofs], -1), mats, values)


def _bar_ranges(n, n_side, cross_section, centres=None):
    if cross_section < 1:
        raise ResolutionTooCoarse(f"bars need at least one element across, mesh has {n} per axis")
    if centres is None:
        centres = (2 * np.arange(n_side) + 1) / (2.0 * n_side)
    starts = [int(np.rint(c * n - cross_section / 2.0)) for c in centres]
    ranges = [(s, s + cross_section) for s in starts]
    for (a0, a1), (b0, b1) in zip(ranges, ranges[1:]):
        if b0 <= a1:
            raise ResolutionTooCoarse("bars touch or overlap at this resolution")
    if ranges[0][0] < 0 or ranges[-1][1] > n:
        raise ResolutionTooCoarse("bars do not fit inside the mesh")
    return ranges


def _grid_indices(mesh):
    if mesh.grid is None:
        raise ValueError("bar layouts need a structured grid mesh")
    nx, ny, nz = mesh.grid
    e = np.arange(mesh.n_elements)
    return e % nx, (e // nx) % ny, e // (nx * ny)


def bars_material(mesh, n_bars=9, contrast=1e6, bar_cross_section=None, formulation=ELASTICITY,
                  E_stiff=2.1e11, nu_stiff=0.3, nu_soft=None):
    """Stiff bars along x laid out on a square grid of (y, z) positions.

    The background gets ``E_stiff / contrast``. Default cross-section is one
    element per 8 elements of resolution (1x1 at n=8, 2x2 at n=16, ...).
    """
    n_side = int(round(np.sqrt(n_bars)))
    if n_side * n_side != n_bars:
        raise ValueError("n_bars must be a perfect square")
    _, j, k = _grid_indices(mesh)
    _, ny, nz = mesh.grid
    if bar_cross_section is None:
        bar_cross_section = min(ny, nz) // 8
    ry = _bar_ranges(ny, n_side, bar_cross_section)
    rz = _bar_ranges(nz, n_side, bar_cross_section)
    stiff = np.zeros(mesh.n_elements, dtype=bool)
    for y0, y1 in ry:
        for z0, z1 in rz:
            stiff |= (j >= y0) & (j < y1) & (k >= z0) & (k < z1)
    return _two_phase(stiff, contrast, formulation, E_stiff, nu_stiff, nu_soft)


def variable_bars_material(mesh, contrast=None, formulation=ELASTICITY,
                           E_soft=1e6, nu_soft=0.45, E_stiff=2.1e11, nu_stiff=0.3):
    """One large central bar plus eight thin bars, all along x.

    The large bar (a quarter of the cross-section wide) straddles the
    mid-planes, so it cuts through coarse subdomains of a 2x2x2 grid.
    """
    _, j, k = _grid_indices(mesh)
    _, ny, nz = mesh.grid
    n = min(ny, nz)
    big = max(2, n // 4)
    thin = max(1, n // 16)
    if n < 8:
        raise ResolutionTooCoarse("variable-bar layout needs at least 8 elements per axis")
    stiff = np.zeros(mesh.n_elements, dtype=bool)
    (b0, b1), = _bar_ranges(n, 1, big, centres=[0.5])
    stiff |= (j >= b0) & (j < b1) & (k >= b0) & (k < b1)
    tr = _bar_ranges(n, 3, thin)
    for a, (y0, y1) in enumerate(tr):
        for b, (z0, z1) in enumerate(tr):
            if a == 1 and b == 1:
                continue
            stiff |= (j >= y0) & (j < y1) & (k >= z0) & (k < z1)
    if contrast is not None:
        E_soft = E_stiff / contrast
    if formulation == POISSON:
        return MaterialField(conductivity=np.where(stiff, E_stiff, E_soft))
    return MaterialField(young=np.where(stiff, E_stiff, E_soft),
                         poisson=np.where(stiff, nu_stiff, nu_soft))


def _two_phase(stiff, contrast, formulation, E_stiff, nu_stiff, nu_soft):
    E_soft = E_stiff / contrast
    if formulation == POISSON:
        return MaterialField(conductivity=np.where(stiff, E_stiff, E_soft))
    if nu_soft is None:
        nu_soft = nu_stiff
    return MaterialField(young=np.where(stiff, E_stiff, E_soft),
                         poisson=np.where(stiff, nu_stiff, nu_soft))
