import numpy as np
import pytest
import scipy.linalg as sla
from numpy.testing import assert_allclose

from ambddc import adaptive as ad, fem, substructure as ss
from ambddc.lobpcg import lobpcg
from conftest import slab_level


@pytest.fixture(scope="module")
def pp(pair_level):
    return ad.build_pair_problem(pair_level, 0, 1)


def test_floating_pair_null_space(pp):
    assert pp.Z.shape[1] >= 6
    R = pp.lev.problem.rigid_modes
    Rp = np.vstack([R[pp.ss.g_gamma], R[pp.st.g_gamma]])
    BR = pp.B(pp.Pi(Rp))
    assert np.linalg.norm(BR) <= 1e-9 * pp._scale()


def test_poisson_pair_matches_dense_pencil():
    _, lev = slab_level()
    pp = ad.build_pair_problem(lev, 0, 1)
    lam, _ = pp.dense_eigs()
    A, B, P = pp.dense_matrices()
    Q = pp.admissible_basis()
    ref = sla.eigh(Q.T @ A @ Q, Q.T @ B @ Q, eigvals_only=True)[::-1]
    assert_allclose(lam[0], ref[0], rtol=1e-8)
    cfg = ad.AdaptiveConfig(tau=2, max_iters=60, tol=1e-10, dense_factor=0)
    vals, _, _, _, how = ad.solve_pair(pp, cfg, m=3)
    assert how == "lobpcg"
    assert_allclose(vals[0], ref[0], rtol=1e-8)


def test_saturated_pair_has_zero_spectrum():
    _, lev = slab_level()
    lev.set_groups(ss.saturated_constraints(lev.problem, lev.globs))
    pp = ad.build_pair_problem(lev, 0, 1)
    lam, _ = pp.dense_eigs()
    assert lam.size == 0 or np.abs(lam).max() <= 1e-10


def test_pair_preconditioner_symmetric(pp, rng):
    M = ad.pair_preconditioner(pp)
    X, Y = rng.standard_normal((2, pp.n, 4))
    lhs = np.einsum("ij,ij->j", M(X), Y)
    rhs = np.einsum("ij,ij->j", X, M(Y))
    assert_allclose(lhs, rhs, rtol=1e-9)


def test_preconditioner_helps_on_contrast_pair(pp, rng):
    lam, _ = pp.dense_eigs()
    X0 = rng.standard_normal((pp.n, 5))
    with_m = lobpcg(pp.A, pp.B, pp.M, X0, 15, 1e-6, pp.project)
    without = lobpcg(pp.A, pp.B, None, X0, 15, 1e-6, pp.project)
    assert with_m.all_converged and not without.all_converged
    assert_allclose(with_m.values, lam[:5], rtol=1e-6)


def test_extract_nothing_below_tau(pp):
    lam, V = pp.dense_eigs()
    group, k, _ = ad.extract_constraints(pp, lam[:5], V[:, :5], tau=lam[0] * 2)
    assert group is None and k == 0


def test_constraint_rows_opposite_sign(pp):
    lam, V = pp.dense_eigs()
    C, cs, ct = ad.constraint_rows(pp, V[:, :4])
    assert np.abs(cs + ct).max() <= 1e-10 * np.abs(C).max()
    off = np.ones(pp.n, bool)
    off[pp.ps] = False
    off[pp.ns + pp.pt] = False
    assert np.abs(C[:, off]).max(initial=0.0) <= 1e-10 * np.abs(C).max()


def test_adaptive_group_supported_on_face(pp):
    lam, V = pp.dense_eigs()
    group, k, _ = ad.extract_constraints(pp, lam[:10], V[:, :10], tau=2.0)
    assert k >= 1 and group is not None
    face = pp.common[ad.face_dofs_mask(pp)]
    assert np.all(np.isin(group.dofs, face))
    assert_allclose(group.rows @ group.rows.T, np.eye(group.size), atol=1e-12)


def test_indicator_only_adds_nothing():
    ps, lev = slab_level((6, 3, 3), fem.ELASTICITY)
    n0 = lev.n_coarse
    rep = ad.adapt_level(lev, ad.AdaptiveConfig(tau=float("inf")), add=True)
    assert lev.n_coarse == n0 and rep.added == 0
    assert rep.omega == rep.omega_pre


def test_adapt_level_meets_target(pair_level):
    from conftest import bar_pair
    lev = bar_pair()
    rep = ad.adapt_level(lev, ad.AdaptiveConfig(tau=2.0, recheck=True))
    r = rep.pairs[0]
    assert r.added >= 1
    assert r.omega_pre > 2.0
    assert r.recheck <= 2.0 * (1 + 1e-6)
    assert not rep.flagged


def test_condition_indicator_product():
    assert ad.condition_indicator([5.0]) == 5.0
    assert_allclose(ad.condition_indicator([4.45, 4.37]), 19.4465)
    assert ad.condition_indicator([1.0, 1.0]) == 1.0


def test_pair_audit(tmp_path):
    _, lev = slab_level()
    rep = ad.adapt_level(lev, ad.AdaptiveConfig(tau=1.5))
    ad.write_pair_audit(tmp_path / "p.csv", [rep])
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0].startswith("level,s,t,omega_pre,omega_post")
    assert len(lines) == 2
