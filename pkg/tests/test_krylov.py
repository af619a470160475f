import numpy as np
import pytest
import scipy.sparse as sp
from numpy.testing import assert_allclose

from ambddc.errors import IndefiniteDetected
from ambddc.krylov import lanczos_condition, pcg, write_residuals


def lap(n):
    return sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr")


def test_pcg_solves(rng):
    A = lap(50)
    b = rng.standard_normal(50)
    r = pcg(A, None, b, rtol=1e-10, max_iters=200)
    assert r.converged
    assert np.linalg.norm(b - A @ r.x) <= 1e-10 * np.linalg.norm(b)
    assert r.iterations <= 50


def test_condition_estimate_matches_spectrum(rng):
    lam = np.linspace(1.0, 100.0, 40)
    r = pcg(sp.diags(lam), None, rng.standard_normal(40), rtol=1e-12, max_iters=100)
    assert_allclose(r.cond, 100.0, rtol=1e-6)
    assert_allclose([r.lambda_min, r.lambda_max], [1.0, 100.0], rtol=1e-6)


def test_preconditioned_condition(rng):
    d = np.linspace(1.0, 1e4, 30)
    A = sp.diags(d)
    M = sp.diags(1.0 / d)
    r = pcg(A, M, rng.standard_normal(30), rtol=1e-10)
    assert r.iterations == 1
    assert_allclose(r.cond, 1.0)


def test_max_iterations_reported():
    r = pcg(lap(100), None, np.ones(100), rtol=1e-12, max_iters=3)
    assert not r.converged and r.iterations == 3


def test_indefinite_detected():
    A = sp.diags([1.0, -1.0, 2.0])
    with pytest.raises(IndefiniteDetected):
        pcg(A, None, np.array([0.0, 1.0, 0.0]), max_iters=10)


def test_zero_rhs():
    r = pcg(lap(5), None, np.zeros(5))
    assert r.converged and r.iterations == 0


def test_preconditioned_norm_switch(rng):
    A = lap(40)
    b = rng.standard_normal(40)
    r = pcg(A, None, b, rtol=1e-8, preconditioned_norm=True)
    assert r.converged
    assert r.residuals[-1] <= 1e-8


def test_lanczos_empty():
    assert lanczos_condition([], []) == (1.0, 1.0, 1.0)


def test_write_residuals(tmp_path, rng):
    r = pcg(lap(10), None, rng.standard_normal(10))
    write_residuals(tmp_path / "r.csv", r)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == len(r.residuals) + 1
