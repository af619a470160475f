"""Run orchestration: configuration, problem sources, set-up, solve and reports."""
import csv
import dataclasses
import io
import json
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fem
from .adaptive import AdaptiveConfig, adapt_level, condition_indicator, write_pair_audit
from .bddc import setup_hierarchy, setup_level
from .errors import AmbddcError, FormatError, PartitionMismatch, StageError
from .fileio import (read_coords, read_matrix_market, read_mesh, read_partition, read_vector,
                     write_coords, write_matrix_market, write_mesh, write_partition, write_vector)
from .krylov import pcg, write_residuals
from .level import algebraic_problem, from_problem_system
from .linalg import DENSE_LIMIT, PINV_DROP_TOL
from .partition import (decompose_level, decomposition_from_parts, glob_counts, partition_graph,
                        partition_regular)
from .substructure import initial_constraints

GENERATORS = ("cube", "bars", "variable_bars", "mesh", "matrix")
POLICIES = ("c", "c+e", "c+e+f", "adaptive")


def _parse_list(v):
    if isinstance(v, (list, tuple)):
        return [int(x) for x in v]
    return [int(x) for x in str(v).replace(";", ",").split(",") if x.strip()]


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


@dataclass
class RunConfig:
    problem: str = "cube"
    formulation: str = fem.POISSON
    n: int = 8
    contrast: float = 1e6
    load: str = "auto"
    n_bars: int = 9
    bar_cross_section: int = 0
    mesh: str = ""
    matrix: str = ""
    rhs: str = ""
    partition: str = ""
    coords: str = ""
    levels: int = 2
    subdomains: list = field(default_factory=lambda: [8])
    coarse_partition: str = "auto"
    policy: str = "c+e"
    tau: float = float("inf")
    indicator: bool = False
    max_vectors: int = 10
    lobpcg_iters: int = 15
    lobpcg_tol: float = 1e-6
    pinv_tol: float = PINV_DROP_TOL
    edge_zeroing: bool = True
    recheck: bool = False
    rtol: float = 1e-8
    max_iters: int = 500
    preconditioned_norm: bool = False
    seed: int = 0
    workers: int = 1
    dense_limit: int = DENSE_LIMIT
    output: str = ""

    def __post_init__(self):
        self.subdomains = _parse_list(self.subdomains)
        self.validate()

    def validate(self):
        if self.problem not in GENERATORS:
            raise ValueError(f"problem must be one of {GENERATORS}")
        if self.formulation not in (fem.POISSON, fem.ELASTICITY):
            raise ValueError("formulation must be poisson or elasticity")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if self.load not in ("auto", "body", "random"):
            raise ValueError("load must be auto, body or random")
        if self.levels < 2:
            raise ValueError("at least two levels are required")
        if len(self.subdomains) != self.levels - 1:
            raise ValueError(f"{self.levels} levels need {self.levels - 1} subdomain counts")
        if any(b >= a for a, b in zip(self.subdomains, self.subdomains[1:])):
            raise ValueError("subdomain counts must strictly decrease across levels")
        if self.policy == "adaptive" and not self.tau > 1:
            raise ValueError("tau must exceed 1")

    @property
    def adaptive(self):
        return self.policy == "adaptive" and np.isfinite(self.tau)

    def adaptive_config(self):
        tau = self.tau if np.isfinite(self.tau) else float("inf")
        return AdaptiveConfig(tau=tau, max_vectors=self.max_vectors, max_iters=self.lobpcg_iters,
                              tol=self.lobpcg_tol, pinv_tol=self.pinv_tol,
                              edge_zeroing=self.edge_zeroing, recheck=self.recheck, seed=self.seed)

    @classmethod
    def fields(cls):
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d):
        kinds = {f.name: f.type for f in dataclasses.fields(cls)}
        out = {}
        for k, v in d.items():
            k = k.replace("-", "_")
            if k not in kinds:
                raise ValueError(f"unknown config key {k!r}")
            t = kinds[k]
            if t in ("int", int):
                out[k] = int(v)
            elif t in ("float", float):
                out[k] = float(v)
            elif t in ("bool", bool):
                out[k] = _parse_bool(v)
            elif t in ("list", list):
                out[k] = _parse_list(v)
            else:
                out[k] = str(v)
        return cls(**out)

    def to_dict(self):
        return dataclasses.asdict(self)


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    d = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {ln}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        d[k] = v
    return d


def load_config(path, overrides=None):
    with open(path) as fh:
        d = parse_config_text(fh.read())
    d.update(overrides or {})
    return RunConfig.from_dict(d)


# -- reports ----------------------------------------------------------------

REPORT_FIELDS = ("formulation", "L", "N", "n", "n_gamma", "n_f", "n_c", "its", "cond",
                 "converged", "setup", "pcg", "solve")
ADAPTIVE_FIELDS = ("tau", "omega_levels", "omega", "added", "capped", "flagged")
CSV_SCHEMA = ",".join(REPORT_FIELDS)
CSV_SCHEMA_ADAPTIVE = ",".join(REPORT_FIELDS + ADAPTIVE_FIELDS)


@dataclass
class SolveReport:
    formulation: str
    L: int
    N: list
    n: int
    n_gamma: list
    n_f: list
    n_c: list
    its: int
    cond: float
    converged: bool
    setup: float
    pcg: float
    solve: float
    adaptive: Optional[dict] = None

    def to_dict(self):
        d = {k: getattr(self, k) for k in REPORT_FIELDS}
        for k in ("setup", "pcg", "solve"):
            d[k] = round(float(d[k]), 3)
        if self.adaptive is not None:
            d.update({k: self.adaptive[k] for k in ADAPTIVE_FIELDS})
        return d

    @classmethod
    def from_dict(cls, d):
        base = {k: d[k] for k in REPORT_FIELDS}
        adaptive = {k: d[k] for k in ADAPTIVE_FIELDS} if "omega" in d else None
        return cls(**base, adaptive=adaptive)

    def comparable(self):
        """Everything except wall times."""
        d = self.to_dict()
        for k in ("setup", "pcg", "solve"):
            d.pop(k)
        return d


def _csv_value(v):
    if isinstance(v, (list, tuple)):
        return ";".join(_csv_value(x) for x in v)
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def report_csv(report):
    d = report.to_dict()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(d))
    w.writerow([_csv_value(v) for v in d.values()])
    return buf.getvalue()


def emit_report(report, path, fmt="json"):
    """Write the report as ``json`` or ``csv``; returns the path."""
    if fmt == "json":
        text = json.dumps(report.to_dict(), indent=2) + "\n"
    elif fmt == "csv":
        text = report_csv(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    with open(path, "w") as fh:
        fh.write(text)
    return path


def read_report(path):
    with open(path) as fh:
        return SolveReport.from_dict(json.load(fh))


# -- problem sources ----------------------------------------------------------

def _default_bc(mesh, formulation):
    if formulation == fem.POISSON:
        return fem.all_faces_fixed(mesh)
    return fem.vertical_edge_fixed(mesh)


def resolve_load(cfg):
    """``auto`` means gravity for elasticity and a seeded random load for Poisson.

    A constant source on the symmetric Poisson cube gives a residual that the
    mirror-symmetric decompositions resolve exactly, which hides the
    preconditioner's spectrum from the Lanczos estimate.
    """
    if cfg.load != "auto":
        return cfg.load
    return "body" if cfg.formulation == fem.ELASTICITY else "random"


def generate_problem(cfg):
    """Mesh, material and assembled system for a generator config."""
    d = 1 if cfg.formulation == fem.POISSON else 3
    if cfg.problem == "mesh":
        mesh, material = read_mesh(cfg.mesh)
        if material is None:
            material = fem.uniform_material(mesh, cfg.formulation)
    else:
        mesh = fem.build_cube_mesh(cfg.n, d)
        if cfg.problem == "cube":
            material = fem.uniform_material(mesh, cfg.formulation)
        elif cfg.problem == "bars":
            material = fem.bars_material(mesh, cfg.n_bars, cfg.contrast,
                                         cfg.bar_cross_section or None, cfg.formulation)
        elif cfg.problem == "variable_bars":
            material = fem.variable_bars_material(mesh, cfg.contrast, cfg.formulation)
        else:
            raise ValueError(f"{cfg.problem!r} is not a generator")
    ps = fem.assemble(mesh, material, cfg.formulation, _default_bc(mesh, cfg.formulation))
    return mesh, material, ps


def ingest_external(matrix, rhs, partition, coords=None, formulation=fem.POISSON):
    """Read an assembled system with a dof partition.

    Returns ``(level_problem, element_partition, f)``; see
    :func:`ambddc.level.algebraic_problem` for how subdomain matrices are
    formed from the assembled matrix.
    """
    A = read_matrix_market(matrix)
    f = read_vector(rhs)
    if f.size != A.shape[0]:
        raise PartitionMismatch(f"rhs has {f.size} entries for {A.shape[0]} dofs")
    part = read_partition(partition, expected=A.shape[0])
    X = None
    d = 1
    if coords:
        X = read_coords(coords)
        if X.shape != (A.shape[0], 3):
            raise FormatError(f"{coords}: expected one xyz line per dof")
        d = 3 if formulation == fem.ELASTICITY else 1
    lp, elem_part = algebraic_problem(A, part, X, d, formulation)
    return lp, elem_part, f


def dof_partition(ps, elem_part):
    """Owner of each free dof: the smallest subdomain containing it."""
    owner = np.full(ps.n, np.iinfo(np.int64).max)
    for e, dofs in enumerate(ps.elem_dofs):
        dofs = dofs[dofs >= 0]
        owner[dofs] = np.minimum(owner[dofs], elem_part[e])
    return owner


def export_problem(directory, ps, elem_part, material=None):
    """Write matrix, rhs, dof partition, dof coordinates and the mesh."""
    os.makedirs(directory, exist_ok=True)
    paths = {k: os.path.join(directory, v) for k, v in
             dict(matrix="matrix.mtx", rhs="rhs.mtx", partition="partition.txt",
                  coords="coords.txt", mesh="mesh.txt", elements="elements.txt").items()}
    write_matrix_market(paths["matrix"], ps.A)
    write_vector(paths["rhs"], ps.f)
    write_partition(paths["partition"], dof_partition(ps, elem_part))
    d = ps.mesh.dofs_per_node
    write_coords(paths["coords"], ps.mesh.coords[ps.free // d])
    write_mesh(paths["mesh"], ps.mesh, material)
    write_partition(paths["elements"], elem_part)
    return paths


# -- the pipeline -------------------------------------------------------------

@dataclass
class RunState:
    config: RunConfig
    problem1: object
    f: np.ndarray
    levels: list
    reports: list
    hierarchy: object = None
    result: object = None
    report: Optional[SolveReport] = None


def _is_cube(n):
    k = int(round(n ** (1.0 / 3.0)))
    return k, k ** 3 == n


def _partition(cfg, lp, i, count, elem_part=None):
    if elem_part is not None:
        return decomposition_from_parts(lp, elem_part)
    k, cube = _is_cube(count)
    how = cfg.coarse_partition
    if i == 0:
        if not cube:
            return decomposition_from_parts(lp, partition_graph(lp.element_adjacency(), count,
                                                                cfg.seed))
        return partition_regular(lp, k)
    if how == "regular" or (how == "auto" and cube and lp.grid is None and cfg.problem != "matrix"):
        dec = partition_regular(lp, k)
        if dec.n_sub == count:
            return dec
    return decomposition_from_parts(lp, partition_graph(lp.element_adjacency(), count, cfg.seed))


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except AmbddcError as exc:
        raise StageError(name, exc) from exc


def setup(cfg, source=None):
    """Everything before PCG. ``source`` may be ``(level_problem, elem_part, f)``."""
    elem_part = None
    if source is not None:
        lp, elem_part, f = source
    elif cfg.problem == "matrix":
        lp, elem_part, f = _stage("ingest", ingest_external, cfg.matrix, cfg.rhs, cfg.partition,
                                  cfg.coords or None, cfg.formulation)
    else:
        _, _, ps = _stage("generate", generate_problem, cfg)
        lp, f = from_problem_system(ps), ps.f
        if resolve_load(cfg) == "random":
            f = np.random.default_rng(cfg.seed).standard_normal(ps.n)
    base_policy = "c+e" if cfg.policy == "adaptive" else cfg.policy
    acfg = cfg.adaptive_config()
    levels, reports = [], []
    problem = lp
    for i, count in enumerate(cfg.subdomains):
        tag = f"level {i + 1}"
        dec = _stage(f"{tag} partition", _partition, cfg, problem, i, count,
                     elem_part if i == 0 else None)
        globs, pairs = _stage(f"{tag} interface", decompose_level, problem, dec)
        groups = initial_constraints(problem, globs, base_policy)
        lev = _stage(f"{tag} set-up", setup_level, problem, dec, globs, pairs, groups,
                     cfg.workers, cfg.dense_limit)
        if cfg.adaptive or cfg.indicator:
            rep = _stage(f"{tag} adapt", adapt_level, lev, acfg, cfg.workers, add=cfg.adaptive)
            reports.append(rep)
        levels.append(lev)
        problem = lev.next_problem()
    h = _stage("coarse solve", setup_hierarchy, levels, cfg.dense_limit)
    return RunState(cfg, lp, f, levels, reports, h)


def run(cfg, source=None):
    """Set up, solve with PCG and build the report."""
    t0 = time.perf_counter()
    state = setup(cfg, source)
    t1 = time.perf_counter()
    lp = state.problem1
    res = _stage("pcg", pcg, lp.A, state.hierarchy, state.f, cfg.rtol, cfg.max_iters,
                 preconditioned_norm=cfg.preconditioned_norm)
    t2 = time.perf_counter()
    state.result = res
    levels = state.levels
    adaptive = None
    if state.reports:
        adaptive = dict(
            tau=cfg.tau if cfg.adaptive else None,
            omega_levels=[float(r.omega) for r in state.reports],
            omega=float(condition_indicator(state.reports)),
            added=[int(r.added) for r in state.reports],
            capped=bool(any(r.capped for r in state.reports)),
            flagged=[[r.level, s, t] for r in state.reports for (s, t) in r.flagged],
        )
    state.report = SolveReport(
        formulation=cfg.formulation,
        L=cfg.levels,
        N=[lev.dec.n_sub for lev in levels],
        n=int(lp.n_dofs),
        n_gamma=[int(_gamma_dofs(lev).size) for lev in levels],
        n_f=[int(glob_counts(lev.globs)["face"]) for lev in levels],
        n_c=[int(lev.n_coarse) for lev in levels],
        its=int(res.iterations),
        cond=float(res.cond),
        converged=bool(res.converged),
        setup=t1 - t0, pcg=t2 - t1, solve=t2 - t0,
        adaptive=adaptive,
    )
    if cfg.output:
        write_outputs(state, cfg.output)
    return state


def _gamma_dofs(lev):
    seen = np.zeros(lev.problem.n_dofs, dtype=bool)
    for sub in lev.subs:
        seen[sub.g_gamma] = True
    return np.flatnonzero(seen)


def write_outputs(state, directory):
    os.makedirs(directory, exist_ok=True)
    if state.report is not None:
        emit_report(state.report, os.path.join(directory, "report.json"), "json")
        emit_report(state.report, os.path.join(directory, "report.csv"), "csv")
    if state.result is not None:
        write_residuals(os.path.join(directory, "residuals.csv"), state.result)
    if state.reports:
        write_pair_audit(os.path.join(directory, "pairs.csv"), state.reports)


def dump_subdomains(state, directory):
    """Matrix Market dumps of ``C``, ``Psi`` and interface weights per subdomain."""
    import scipy.io

    os.makedirs(directory, exist_ok=True)
    for lev in state.levels:
        for sub in lev.subs:
            stem = os.path.join(directory, f"L{lev.index}_s{sub.id}")
            scipy.io.mmwrite(stem + "_C.mtx", np.atleast_2d(sub.C))
            scipy.io.mmwrite(stem + "_Psi.mtx", np.atleast_2d(sub.Psi))
            scipy.io.mmwrite(stem + "_weights.mtx", sub.weights.reshape(-1, 1))
    return directory
