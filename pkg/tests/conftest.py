import numpy as np
import pytest

from ambddc import bddc, fem, level, partition as pt, substructure as ss


def poisson_level(n=8, k=2, policy="c+e"):
    """Assembled Poisson cube split into ``k**3`` subdomains, set up for BDDC."""
    m = fem.build_cube_mesh(n, 1)
    ps = fem.assemble(m, fem.uniform_material(m, fem.POISSON), fem.POISSON, fem.all_faces_fixed(m))
    lp = level.from_problem_system(ps)
    dec = pt.partition_regular(lp, k)
    globs, pairs = pt.decompose_level(lp, dec)
    lev = bddc.setup_level(lp, dec, globs, pairs, ss.initial_constraints(lp, globs, policy))
    return ps, lev


def slab_level(n=(6, 3, 3), formulation=fem.POISSON):
    """Box split into two subdomains along x."""
    d = 1 if formulation == fem.POISSON else 3
    m = fem.build_box_mesh(*n, lengths=(2.0, 1.0, 1.0), dofs_per_node=d)
    bc = fem.all_faces_fixed(m) if d == 1 else fem.BoundaryConditions()
    ps = fem.assemble(m, fem.uniform_material(m, formulation), formulation, bc)
    lp = level.from_problem_system(ps)
    dec = pt.decomposition_from_parts(lp, (m.centroids()[:, 0] > 1.0).astype(int))
    globs, pairs = pt.decompose_level(lp, dec)
    lev = bddc.setup_level(lp, dec, globs, pairs, ss.initial_constraints(lp, globs, "c+e"))
    return ps, lev


def bar_pair(contrast=1e6, nx=8):
    """Two floating elasticity subdomains crossed by a stiff bar at the interface."""
    m = fem.build_box_mesh(nx, nx // 2, nx // 2, lengths=(2.0, 1.0, 1.0), dofs_per_node=3)
    c = m.centroids()
    stiff = (np.abs(c[:, 0] - 1.0) < 0.26) & (np.abs(c[:, 2] - 0.5) < 0.13)
    mat = fem.MaterialField(young=np.where(stiff, contrast, 1.0),
                            poisson=np.full(m.n_elements, 0.3))
    ps = fem.assemble(m, mat, fem.ELASTICITY, fem.BoundaryConditions())
    lp = level.from_problem_system(ps)
    dec = pt.decomposition_from_parts(lp, (c[:, 0] > 1.0).astype(int))
    globs, pairs = pt.decompose_level(lp, dec)
    lev = bddc.setup_level(lp, dec, globs, pairs, ss.initial_constraints(lp, globs, "c+e"))
    return lev


@pytest.fixture(scope="session")
def cube8():
    return poisson_level(8, 2)


@pytest.fixture(scope="session")
def slab():
    return slab_level()


@pytest.fixture(scope="session")
def pair_level():
    return bar_pair()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
