"""Plain-text file formats: Matrix Market, partition files, meshes.

Matrix Market files are written with 17 significant digits so that
write -> read -> write reproduces the text exactly and the values bit for bit.
"""
import numpy as np
import scipy.sparse as sp

from .errors import FormatError, PartitionMismatch

_FMT = "%.17g"


def write_matrix_market(path, M, comment=None):
    """Write a symmetric matrix in coordinate format (lower triangle stored)."""
    M = sp.coo_matrix(M)
    n, m = M.shape
    if n != m:
        raise FormatError("only square symmetric matrices are supported")
    L = sp.tril(sp.csr_matrix(M), format="coo")
    order = np.lexsort((L.row, L.col))
    rows, cols, vals = L.row[order], L.col[order], L.data[order]
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        if comment:
            for line in str(comment).splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{n} {m} {len(vals)}\n")
        for i, j, v in zip(rows, cols, vals):
            fh.write(f"{i + 1} {j + 1} {_FMT % v}\n")


def write_vector(path, v):
    v = np.asarray(v, dtype=float).ravel()
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{v.size} 1\n")
        for x in v:
            fh.write(f"{_FMT % x}\n")


def _data_lines(fh):
    for raw in fh:
        line = raw.strip()
        if line and not line.startswith("%"):
            yield line


def read_matrix_market(path, sym_rtol=0.0):
    """Read a coordinate or array Matrix Market file.

    Coordinate matrices are returned as CSR and must be symmetric: a
    ``general`` file whose entries are not symmetric raises FormatError.
    Array files are returned as dense 2-D arrays.
    """
    with open(path) as fh:
        header = fh.readline().strip().split()
        if len(header) != 5 or header[0] != "%%MatrixMarket" or header[1] != "matrix":
            raise FormatError(f"{path}: not a Matrix Market file")
        layout, field, symmetry = (h.lower() for h in header[2:])
        if field not in ("real", "integer", "double"):
            raise FormatError(f"{path}: unsupported field {field!r}")
        lines = _data_lines(fh)
        try:
            size = next(lines).split()
        except StopIteration:
            raise FormatError(f"{path}: missing size line") from None
        if layout == "array":
            nr, nc = int(size[0]), int(size[1])
            vals = np.array([float(x) for x in lines])
            if vals.size != nr * nc:
                raise FormatError(f"{path}: expected {nr * nc} values, got {vals.size}")
            return vals.reshape((nc, nr)).T.copy()
        if layout != "coordinate":
            raise FormatError(f"{path}: unsupported layout {layout!r}")
        nr, nc, nnz = (int(x) for x in size)
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz)
        k = 0
        for line in lines:
            parts = line.split()
            if k >= nnz or len(parts) < 3:
                raise FormatError(f"{path}: malformed entry {line!r}")
            rows[k], cols[k], vals[k] = int(parts[0]) - 1, int(parts[1]) - 1, float(parts[2])
            k += 1
        if k != nnz:
            raise FormatError(f"{path}: expected {nnz} entries, got {k}")
    if nr != nc:
        raise FormatError(f"{path}: matrix is not square")
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() >= nr or cols.max() >= nc):
        raise FormatError(f"{path}: index out of range")
    if symmetry == "symmetric":
        if np.any(rows < cols):
            raise FormatError(f"{path}: symmetric file stores upper-triangle entries")
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    elif symmetry != "general":
        raise FormatError(f"{path}: unsupported symmetry {symmetry!r}")
    A = sp.csr_matrix((vals, (rows, cols)), shape=(nr, nc))
    if symmetry == "general":
        diff = abs(A - A.T)
        if diff.nnz and diff.max() > sym_rtol * abs(A).max():
            raise FormatError(f"{path}: matrix is not symmetric")
    return A


def read_vector(path):
    v = read_matrix_market(path)
    if sp.issparse(v):
        v = v.toarray()
    return np.asarray(v).ravel()


def write_partition(path, part):
    with open(path, "w") as fh:
        for p in np.asarray(part, dtype=int):
            fh.write(f"{p}\n")


def read_partition(path, expected=None):
    """One nonnegative integer per line; ``expected`` is the required length."""
    with open(path) as fh:
        try:
            part = np.array([int(line) for line in _data_lines(fh)], dtype=np.int64)
        except ValueError as exc:
            raise FormatError(f"{path}: {exc}") from None
    if expected is not None and part.size != expected:
        raise PartitionMismatch(f"{path}: {part.size} entries for {expected} items")
    if part.size and part.min() < 0:
        raise FormatError(f"{path}: negative subdomain id")
    return part


def write_coords(path, coords):
    coords = np.atleast_2d(coords)
    with open(path, "w") as fh:
        for row in coords:
            fh.write(" ".join(_FMT % x for x in row) + "\n")


def read_coords(path):
    with open(path) as fh:
        rows = [[float(x) for x in line.split()] for line in _data_lines(fh)]
    return np.array(rows, dtype=float)


def write_mesh(path, mesh, material=None):
    """Write the plain-text mesh format.

    Layout: a header ``n_nodes n_elements dofs_per_node``, one coordinate line
    per node, one connectivity line per element (0-based) and, optionally, a
    ``materials`` marker followed by one line per element (``E nu`` for
    elasticity, a single conductivity for the scalar problem).
    """
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_nodes} {mesh.n_elements} {mesh.dofs_per_node}\n")
        for x in mesh.coords:
            fh.write(" ".join(_FMT % c for c in x) + "\n")
        for conn in mesh.elements:
            fh.write(" ".join(str(int(c)) for c in conn) + "\n")
        if material is not None:
            fh.write("materials\n")
            if material.conductivity is not None:
                for k in material.conductivity:
                    fh.write(f"{_FMT % k}\n")
            else:
                for E, nu in zip(material.young, material.poisson):
                    fh.write(f"{_FMT % E} {_FMT % nu}\n")


def read_mesh(path):
    """Inverse of :func:`write_mesh`; returns ``(mesh, material_or_None)``."""
    from .fem import Mesh, MaterialField

    with open(path) as fh:
        lines = list(_data_lines(fh))
    try:
        n_nodes, n_el, dpn = (int(x) for x in lines[0].split())
        coords = np.array([[float(x) for x in lines[1 + i].split()] for i in range(n_nodes)])
        conn = np.array([[int(x) for x in lines[1 + n_nodes + e].split()] for e in range(n_el)],
                        dtype=np.int64)
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if coords.shape != (n_nodes, 3) or conn.shape != (n_el, 8):
        raise FormatError(f"{path}: expected 3 coordinates per node and 8 nodes per element")
    mesh = Mesh(coords, conn, dpn)
    rest = lines[1 + n_nodes + n_el:]
    material = None
    if rest:
        if rest[0].lower() != "materials" or len(rest) != n_el + 1:
            raise FormatError(f"{path}: bad material section")
        vals = np.array([[float(x) for x in line.split()] for line in rest[1:]])
        if vals.shape[1] == 1:
            material = MaterialField(conductivity=vals[:, 0])
        else:
            material = MaterialField(young=vals[:, 0], poisson=vals[:, 1])
    return mesh, material
