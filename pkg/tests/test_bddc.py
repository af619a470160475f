import numpy as np
import pytest
from numpy.testing import assert_allclose

from ambddc import bddc, partition as pt, substructure as ss
from ambddc.errors import DimensionMismatch
from ambddc.krylov import pcg
from conftest import poisson_level, slab_level


def test_single_subdomain_is_exact(rng):
    ps, lev = poisson_level(4, 1)
    h = bddc.setup_hierarchy([lev])
    r = rng.standard_normal(ps.n)
    assert_allclose(ps.A @ h(r), r, atol=1e-10)
    assert pcg(ps.A, h, r).iterations == 1


def test_saturated_constraints_exact():
    ps, lev = slab_level()
    lev.set_groups(ss.saturated_constraints(lev.problem, lev.globs))
    h = bddc.setup_hierarchy([lev])
    ev = np.linalg.eigvals(bddc.preconditioner_matrix(h) @ ps.A.toarray()).real
    assert_allclose(ev, 1.0, atol=1e-8)
    assert_allclose(bddc.exact_level_bound(lev), 1.0, atol=1e-8)


def test_zero_and_symmetry(cube8, rng):
    ps, lev = cube8
    h = bddc.setup_hierarchy([lev])
    assert_allclose(h(np.zeros(ps.n)), 0)
    R1 = rng.standard_normal((ps.n, 100))
    R2 = rng.standard_normal((ps.n, 100))
    M1, M2 = h(R1), h(R2)
    lhs = np.einsum("ij,ij->j", M1, R2)
    rhs = np.einsum("ij,ij->j", R1, M2)
    assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-10 * np.abs(lhs).max())


def test_block_apply_matches_columns(cube8, rng):
    ps, lev = cube8
    h = bddc.setup_hierarchy([lev])
    R = rng.standard_normal((ps.n, 3))
    assert_allclose(h(R), np.column_stack([h(R[:, j]) for j in range(3)]), atol=1e-13)


def test_dimension_mismatch(cube8):
    ps, lev = cube8
    h = bddc.setup_hierarchy([lev])
    with pytest.raises(DimensionMismatch):
        h(np.zeros(ps.n + 1))


def test_two_level_spectrum_within_bound(cube8):
    ps, lev = cube8
    h = bddc.setup_hierarchy([lev])
    ev = np.linalg.eigvals(bddc.preconditioner_matrix(h) @ ps.A.toarray()).real
    omega = bddc.exact_level_bound(lev)
    assert omega >= 1.0
    assert ev.min() >= 1 - 1e-8
    assert ev.max() <= omega * (1 + 1e-6)


def test_three_level_dimensions_and_bound(cube8):
    ps, lev = cube8
    lp2 = lev.next_problem()
    dec2 = pt.decomposition_from_parts(lp2, pt.partition_graph(lp2.element_adjacency(), 2))
    g2, p2 = pt.decompose_level(lp2, dec2)
    lev2 = bddc.setup_level(lp2, dec2, g2, p2, ss.initial_constraints(lp2, g2, "c+e"))
    h = bddc.setup_hierarchy([lev, lev2])
    dims = [ps.n, lev.n_coarse, lev2.n_coarse]
    assert dims[0] > dims[1] > dims[2] > 0
    ev = np.linalg.eigvals(bddc.preconditioner_matrix(h) @ ps.A.toarray()).real
    bound = bddc.exact_level_bound(lev) * bddc.exact_level_bound(lev2)
    assert ev.min() >= 1 - 1e-8
    assert ev.max() <= bound * (1 + 1e-6)


def test_next_problem_reproduces_coarse_matrix(cube8):
    _, lev = cube8
    lp2 = lev.next_problem()
    assert lp2.level == 2
    assert lp2.n_elements == len(lev.subs)
    assert lp2.n_dofs == lev.n_coarse
    from ambddc.substructure import _local_matrix
    K = _local_matrix(lp2, np.arange(lp2.n_elements), np.arange(lp2.n_dofs))
    assert_allclose(K.toarray(), lev.coarse_A.toarray(), atol=1e-12)
