"""Decomposition of a level into subdomains and classification of its interface."""
import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import InsufficientCandidates, NotDivisible

CORNER, EDGE, FACE = "corner", "edge", "face"


@dataclass
class LevelDecomposition:
    level: int
    elem_part: np.ndarray
    n_sub: int
    H: float = 0.0
    interface_nodes: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    connected: bool = True

    def elements_of(self, s):
        return np.flatnonzero(self.elem_part == s)


@dataclass
class Glob:
    id: int
    kind: str
    nodes: np.ndarray
    sharing: tuple
    degraded: bool = False


@dataclass(frozen=True)
class Pair:
    s: int
    t: int
    glob: int


def _characteristic_size(problem, elem_part, n_sub):
    sizes = []
    for s in range(n_sub):
        c = problem.elem_centroids[elem_part == s]
        if len(c):
            sizes.append(np.max(c.max(axis=0) - c.min(axis=0)))
    return float(np.mean(sizes)) if sizes else 0.0


def _decomposition(problem, elem_part, level=None):
    elem_part = np.asarray(elem_part, dtype=np.int64)
    n_sub = int(elem_part.max()) + 1 if elem_part.size else 0
    dec = LevelDecomposition(level if level is not None else problem.level, elem_part, n_sub)
    dec.H = _characteristic_size(problem, elem_part, n_sub)
    return dec


def partition_regular(problem, k_per_axis):
    """``k^3`` boxes by element centroid.

    On a structured level-1 mesh the element counts per axis must be
    divisible by ``k``; on coarse levels subdomain centroids are binned in the
    bounding box of the level.
    """
    k = int(k_per_axis)
    if k < 1:
        raise ValueError("k_per_axis must be positive")
    grid = getattr(problem, "grid", None)
    if grid is not None:
        for n in grid:
            if n % k:
                raise NotDivisible(f"{n} elements per axis not divisible by {k}")
    lo, hi = problem.bbox
    c = problem.elem_centroids
    span = np.where(hi > lo, hi - lo, 1.0)
    b = np.clip(np.floor((c - lo) / span * k).astype(np.int64), 0, k - 1)
    part = b[:, 0] + k * (b[:, 1] + k * b[:, 2])
    # drop empty bins
    _, part = np.unique(part, return_inverse=True)
    dec = _decomposition(problem, part.ravel())
    return dec


def _bfs_order(adj, start, allowed=None):
    n = adj.shape[0]
    dist = -np.ones(n, dtype=np.int64)
    dist[start] = 0
    order = [start]
    q = deque([start])
    while q:
        v = q.popleft()
        for w in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]:
            if dist[w] < 0 and (allowed is None or allowed[w]):
                dist[w] = dist[v] + 1
                order.append(w)
                q.append(w)
    return np.array(order), dist


def _part_connected(adj, part, p, without=None):
    members = np.flatnonzero(part == p)
    if without is not None:
        members = members[members != without]
    if members.size <= 1:
        return True
    mask = np.zeros(adj.shape[0], dtype=bool)
    mask[members] = True
    order, _ = _bfs_order(adj, members[0], mask)
    return order.size == members.size


def partition_graph(adjacency, n_parts, seed=0, max_passes=8):
    """Greedy graph growing followed by boundary refinement.

    Parts are grown one at a time from the next unassigned vertex in BFS
    order from a pseudo-peripheral vertex, always absorbing the frontier
    vertex with most edges into the part. A few passes of single-vertex moves
    then reduce the cut while keeping every part within 20% of the mean size
    and connected. Returns an integer label per vertex.
    """
    adj = sp.csr_matrix(adjacency)
    adj = ((adj + adj.T) > 0).astype(np.int64).tocsr()
    adj.setdiag(0)
    adj.eliminate_zeros()
    n = adj.shape[0]
    n_parts = int(n_parts)
    if not 1 <= n_parts <= n:
        raise ValueError(f"cannot split {n} vertices into {n_parts} parts")
    if n_parts == n:
        return np.arange(n)
    if n_parts == 1:
        return np.zeros(n, dtype=np.int64)

    order, dist = _bfs_order(adj, int(seed) % n)
    far = order[-1]
    order, _ = _bfs_order(adj, far)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(order.size)
    if order.size < n:
        rest = np.setdiff1d(np.arange(n), order)
        rank[rest] = order.size + np.arange(rest.size)

    target = np.full(n_parts, n // n_parts)
    target[: n % n_parts] += 1
    part = -np.ones(n, dtype=np.int64)
    for p in range(n_parts):
        free = np.flatnonzero(part < 0)
        if free.size == 0:
            break
        start = free[np.argmin(rank[free])]
        part[start] = p
        size = 1
        gain = {}
        for w in adj.indices[adj.indptr[start]:adj.indptr[start + 1]]:
            if part[w] < 0:
                gain[w] = gain.get(w, 0) + 1
        while size < target[p] and gain:
            v = min(gain, key=lambda w: (-gain[w], rank[w]))
            del gain[v]
            part[v] = p
            size += 1
            for w in adj.indices[adj.indptr[v]:adj.indptr[v + 1]]:
                if part[w] < 0:
                    gain[w] = gain.get(w, 0) + 1
    # leftovers join the smallest neighbouring part
    while np.any(part < 0):
        sizes = np.bincount(part[part >= 0], minlength=n_parts)
        moved = False
        for v in np.flatnonzero(part < 0)[np.argsort(rank[part < 0])]:
            nb = part[adj.indices[adj.indptr[v]:adj.indptr[v + 1]]]
            nb = nb[nb >= 0]
            if nb.size:
                q = min(set(nb.tolist()), key=lambda x: (sizes[x], x))
                part[v] = q
                sizes[q] += 1
                moved = True
        if not moved:
            v = np.flatnonzero(part < 0)[0]
            part[v] = int(np.argmin(sizes))

    mean = n / n_parts
    lo, hi = int(np.ceil(0.8 * mean)), int(np.floor(1.2 * mean))
    for _ in range(max_passes):
        improved = False
        sizes = np.bincount(part, minlength=n_parts)
        for v in order:
            nb = part[adj.indices[adj.indptr[v]:adj.indptr[v + 1]]]
            p = part[v]
            counts = np.bincount(nb, minlength=n_parts)
            best, best_gain = p, 0
            for q in np.flatnonzero(counts):
                if q == p:
                    continue
                g = counts[q] - counts[p]
                if g > best_gain and sizes[p] - 1 >= lo and sizes[q] + 1 <= hi:
                    best, best_gain = q, g
            if best != p and _part_connected(adj, part, p, without=v):
                part[v] = best
                sizes[p] -= 1
                sizes[best] += 1
                improved = True
        if not improved:
            break
    _, first = np.unique(part, return_index=True)
    relabel = np.empty(n_parts, dtype=np.int64)
    relabel[part[np.sort(first)]] = np.arange(n_parts)
    return relabel[part]


def split_disconnected(problem, elem_part):
    """Renumber parts so that every part is connected in the element graph."""
    adj = problem.element_adjacency()
    elem_part = np.asarray(elem_part, dtype=np.int64)
    same = elem_part[adj.tocoo().row] == elem_part[adj.tocoo().col]
    coo = adj.tocoo()
    G = sp.csr_matrix((np.ones(same.sum()), (coo.row[same], coo.col[same])), shape=adj.shape)
    _, comp = connected_components(G, directed=False)
    # elements without dofs follow the first component of their part
    has = np.array([any(len(problem.node_dofs[v]) for v in nodes) for nodes in problem.elem_nodes])
    if not has.all():
        home = {}
        for e in np.flatnonzero(has):
            home.setdefault(int(elem_part[e]), comp[e])
        for e in np.flatnonzero(~has):
            comp[e] = home.get(int(elem_part[e]), comp[e])
    # order new labels by (old label, first element)
    keys = {}
    for e, (p, c) in enumerate(zip(elem_part, comp)):
        keys.setdefault((p, c), e)
    ordered = sorted(keys, key=lambda pc: (pc[0], keys[pc]))
    label = {pc: i for i, pc in enumerate(ordered)}
    new = np.array([label[(p, c)] for p, c in zip(elem_part, comp)], dtype=np.int64)
    return new, len(ordered) != (elem_part.max() + 1 if elem_part.size else 0)


def decomposition_from_parts(problem, elem_part, split=True):
    elem_part = np.asarray(elem_part, dtype=np.int64)
    _, elem_part = np.unique(elem_part, return_inverse=True)
    changed = False
    if split:
        elem_part, changed = split_disconnected(problem, elem_part)
    dec = _decomposition(problem, elem_part)
    dec.connected = not changed
    return dec


def node_sharing(problem, dec):
    """Sparse boolean node-by-subdomain membership matrix."""
    NE = problem.node_element_incidence()
    EP = sp.csr_matrix((np.ones(dec.elem_part.size),
                        (np.arange(dec.elem_part.size), dec.elem_part)),
                       shape=(dec.elem_part.size, dec.n_sub))
    NP = (NE @ EP).tocsr()
    NP.data[:] = 1.0
    return NE, NP


def classify_interface(problem, dec, corner_nodes=()):
    """Group interface nodes into corners, edges and faces.

    Interface nodes are nodes carrying dofs that touch elements of two or
    more subdomains. Nodes with the same sharing set form a group and each
    connected component of a group is one glob. Components with two sharing
    subdomains are faces, the rest edges; single-node edges become corners
    (``degraded``), as do all ``corner_nodes``.
    """
    NE, NP = node_sharing(problem, dec)
    has_dofs = np.array([len(d) > 0 for d in problem.node_dofs])
    mult = np.diff(NP.indptr)
    iface = np.flatnonzero(has_dofs & (mult >= 2))
    dec.interface_nodes = iface
    if iface.size == 0:
        return []
    keys = [tuple(NP.indices[NP.indptr[v]:NP.indptr[v + 1]].tolist()) for v in iface]
    key_ids = {}
    kid = np.array([key_ids.setdefault(tuple(sorted(k)), len(key_ids)) for k in keys])
    forced = np.zeros(iface.size, dtype=bool)
    if len(corner_nodes):
        forced = np.isin(iface, np.asarray(list(corner_nodes), dtype=np.int64))

    NEi = NE[iface]
    G = (NEi @ NEi.T).tocoo()
    keep = (kid[G.row] == kid[G.col]) & ~forced[G.row] & ~forced[G.col]
    G = sp.csr_matrix((np.ones(keep.sum()), (G.row[keep], G.col[keep])),
                      shape=(iface.size, iface.size))
    n_comp, comp = connected_components(G, directed=False)
    sharing_of = {v: k for k, v in key_ids.items()}
    members = [[] for _ in range(n_comp)]
    for i, c in enumerate(comp):
        members[c].append(i)
    globs = []
    for idx in members:
        nodes = iface[idx]
        sharing = sharing_of[kid[idx[0]]]
        if len(idx) == 1 and (forced[idx[0]] or len(sharing) > 2):
            kind = CORNER
        elif len(sharing) == 2:
            kind = FACE
        else:
            kind = EDGE
        globs.append(Glob(-1, kind, np.sort(nodes), sharing))
    globs.sort(key=lambda g: (int(g.nodes[0]), g.kind))
    # edge components that are single nodes but whose group had more nodes
    group_size = np.bincount(kid, minlength=len(key_ids))
    for i, g in enumerate(globs):
        g.id = i
        if g.kind == CORNER and len(g.sharing) > 2:
            gi = key_ids[g.sharing]
            g.degraded = bool(group_size[gi] > 1)
    return globs


def enumerate_pairs(globs):
    """One entry per face glob, sorted by ``(s, t)``."""
    pairs = [Pair(g.sharing[0], g.sharing[1], g.id) for g in globs if g.kind == FACE]
    pairs.sort(key=lambda p: (p.s, p.t, p.glob))
    return pairs


def glob_counts(globs):
    out = {CORNER: 0, EDGE: 0, FACE: 0}
    for g in globs:
        out[g.kind] += 1
    return out


def _rank(M, scale):
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int((s > 1e-8 * scale).sum())


def select_corners(problem, globs, pairs, n_modes=None):
    """Corner nodes so that every pair's corners fix its relative rigid modes.

    For each pair the candidate nodes are those of all globs shared by both
    subdomains. Existing corners are kept; further nodes are added greedily,
    farthest first from those already chosen (edge nodes win ties), until
    the rigid-mode values at the chosen nodes reach full rank.
    """
    R = problem.rigid_modes
    r = R.shape[1] if n_modes is None else int(n_modes)
    coords = problem.node_coords
    corners = {int(g.nodes[0]) for g in globs if g.kind == CORNER}
    mult = {}
    for g in globs:
        for v in g.nodes:
            mult[int(v)] = len(g.sharing)

    def block(nodes):
        if not nodes:
            return np.zeros((0, R.shape[1]))
        return R[np.concatenate([problem.node_dofs[v] for v in nodes])]

    by_pair = {}
    for p in pairs:
        by_pair.setdefault((p.s, p.t), None)
    for (s, t) in by_pair:
        closure = np.unique(np.concatenate(
            [g.nodes for g in globs if s in g.sharing and t in g.sharing]))
        full = block(list(closure))
        scale = np.linalg.norm(full, 2) if full.size else 1.0
        if _rank(full, scale) < r:
            raise InsufficientCandidates(
                f"pair ({s}, {t}): interface nodes cannot fix {r} rigid modes")
        chosen = [int(v) for v in closure if int(v) in corners]
        rank = _rank(block(chosen), scale)
        cand = [int(v) for v in closure if int(v) not in corners]
        while rank < r:
            pts = coords[cand]
            if chosen:
                d = np.min(np.linalg.norm(pts[:, None, :] - coords[chosen][None], axis=2), axis=1)
            else:
                d = np.linalg.norm(pts - coords[closure].mean(axis=0), axis=1)
            key = np.lexsort((np.array(cand), -np.array([mult[v] for v in cand]), -np.round(d, 12)))
            for j in key:
                v = cand[j]
                new_rank = _rank(block(chosen + [v]), scale)
                if new_rank > rank:
                    chosen.append(v)
                    corners.add(v)
                    cand.remove(v)
                    rank = new_rank
                    break
            else:  # pragma: no cover - excluded by the full-rank check
                raise InsufficientCandidates(f"pair ({s}, {t})")
    return np.array(sorted(corners), dtype=np.int64)


def decompose_level(problem, dec, with_corners=True):
    """Classify, pick corners and reclassify. Returns ``(globs, pairs)``."""
    globs = classify_interface(problem, dec)
    pairs = enumerate_pairs(globs)
    if with_corners and pairs:
        corners = select_corners(problem, globs, pairs)
        globs = classify_interface(problem, dec, corner_nodes=corners)
        pairs = enumerate_pairs(globs)
    return globs, pairs


def write_glob_report(path, globs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["glob", "kind", "size", "sharing", "degraded"])
        for g in globs:
            w.writerow([g.id, g.kind, len(g.nodes), " ".join(map(str, g.sharing)), int(g.degraded)])
