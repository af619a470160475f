"""Numbered acceptance criteria. Each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also collected in the terminal summary.
"""
import time

import numpy as np
import pytest

from ambddc import adaptive as ad, bddc, partition as pt, substructure as ss
from ambddc.driver import RunConfig, run
from conftest import bar_pair, poisson_level, slab_level

pytestmark = pytest.mark.acceptance

RESULTS = {}


def report(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[number] = line
    print(line)
    return ok


def dense_spectrum(h, A):
    M = bddc.preconditioner_matrix(h)
    return np.sort(np.linalg.eigvals(M @ A).real)


def three_level(lev):
    lp2 = lev.next_problem()
    dec2 = pt.decomposition_from_parts(lp2, pt.partition_graph(lp2.element_adjacency(), 2))
    g2, p2 = pt.decompose_level(lp2, dec2)
    return bddc.setup_level(lp2, dec2, g2, p2, ss.initial_constraints(lp2, g2, "c+e"))


def test_01_projection_identities():
    t = time.perf_counter()
    ps, lev = slab_level((8, 4, 4))
    assert ps.n <= 300
    ops = bddc.dense_operators(lev)
    E = ops["R"] @ ops["E"]
    IP_W = np.eye(E.shape[0]) - ops["PW"]
    H = ops["H"]
    e1 = np.abs(E @ E - E).max()
    e2 = np.abs(H @ ops["E"] @ IP_W - H @ ops["E"]).max()
    UI = np.eye(ps.n)[:, ops["interior"]]
    e3 = np.abs(ops["E"] @ ops["R"] @ UI - UI).max()
    dt = time.perf_counter() - t
    ok = max(e1, e2, e3) <= 1e-10 and dt < 5
    assert report(1, ok, f"|E^2-E|={e1:.1e} |(I-P)E(I-P)-(I-P)E|={e2:.1e} "
                         f"|EU_I-U_I|={e3:.1e} t={dt:.2f}s")


def test_02_a_orthogonal_splitting():
    t = time.perf_counter()
    ps, lev = slab_level((8, 4, 4))
    ops = bddc.dense_operators(lev)
    cross = ops["T_delta"].T @ ops["KW"] @ ops["Psi"]
    err = np.linalg.norm(cross, 2) / np.linalg.norm(ops["A"], 2)
    dt = time.perf_counter() - t
    ok = err <= 1e-9 and dt < 5
    assert report(2, ok, f"|T_delta^T K Psi|/|A|={err:.1e} t={dt:.2f}s")


def test_03_two_level_bound():
    t = time.perf_counter()
    ps, lev = poisson_level(8, 2)
    ev = dense_spectrum(bddc.setup_hierarchy([lev]), ps.A.toarray())
    omega = bddc.exact_level_bound(lev)
    dt = time.perf_counter() - t
    ok = ev[0] >= 1 - 1e-8 and ev[-1] <= omega * (1 + 1e-6) and dt < 60
    assert report(3, ok, f"lambda_min={ev[0]:.10f} lambda_max={ev[-1]:.6f} omega={omega:.6f} "
                         f"t={dt:.1f}s")


def test_04_multilevel_bound():
    t = time.perf_counter()
    ps, lev = poisson_level(8, 2)
    lev2 = three_level(lev)
    ev = dense_spectrum(bddc.setup_hierarchy([lev, lev2]), ps.A.toarray())
    w1, w2 = bddc.exact_level_bound(lev), bddc.exact_level_bound(lev2)
    cond = ev[-1] / ev[0]
    dt = time.perf_counter() - t
    ok = cond <= w1 * w2 * (1 + 1e-6) and dt < 120
    assert report(4, ok, f"cond={cond:.6f} omega1*omega2={w1:.6f}*{w2:.6f}={w1 * w2:.6f} "
                         f"t={dt:.1f}s")


def test_05_pair_pencil_oracle():
    t = time.perf_counter()
    pp = ad.build_pair_problem(bar_pair(1e6), 0, 1)
    A, B, _ = pp.dense_matrices()
    Q = pp.admissible_basis()
    import scipy.linalg as sla
    ref = sla.eigh(Q.T @ A @ Q, Q.T @ B @ Q, eigvals_only=True)[::-1][:5]
    cfg = ad.AdaptiveConfig(tau=2.0, dense_factor=0)
    lam, _, its, conv, how = ad.solve_pair(pp, cfg)
    err = np.abs(lam[:5] / ref - 1).max()
    dt = time.perf_counter() - t
    ok = how == "lobpcg" and err <= 1e-6 and dt < 60
    assert report(5, ok, f"top-5 rel err={err:.1e} lobpcg its={its} t={dt:.1f}s")


def test_06_added_constraints_shift_spectrum():
    t = time.perf_counter()
    lev0 = bar_pair(1e6)
    lam, V = ad.build_pair_problem(lev0, 0, 1).dense_eigs()
    errs = []
    for k in (1, 2, 3):
        lev = bar_pair(1e6)
        pp = ad.build_pair_problem(lev, 0, 1)
        tau = 0.5 * (lam[k - 1] + lam[k])
        group, kk, _ = ad.extract_constraints(pp, lam, V, tau, max_k=10, edge_zeroing=False)
        lev.set_groups(lev.groups + [group])
        new, _ = ad.build_pair_problem(lev, 0, 1).dense_eigs()
        errs.append(abs(new[0] / lam[k] - 1))
        assert kk == k
    dt = time.perf_counter() - t
    ok = max(errs) <= 1e-6 and dt < 60
    assert report(6, ok, "rel err k=1,2,3: " + " ".join(f"{e:.1e}" for e in errs)
                         + f" t={dt:.1f}s")


def test_07_opposite_sign_rows():
    st = run(RunConfig(problem="cube", formulation="elasticity", n=8, subdomains=[8],
                       policy="adaptive", tau=1.01, max_iters=50))
    pairs = st.reports[0].pairs
    asym = max(p.asymmetry for p in pairs)
    with_rows = sum(p.added > 0 for p in pairs)
    ok = asym <= 1e-10 and with_rows == len(pairs) > 0
    assert report(7, ok, f"max |c_s+c_t|/|c|={asym:.1e} over {with_rows}/{len(pairs)} pairs")


def test_08_polylog_trend():
    t = time.perf_counter()
    rows = []
    for n in (8, 16, 32):
        rep = run(RunConfig(n=n, subdomains=[8])).report
        Hh = n // 2
        rows.append((Hh, rep.cond, rep.cond / (1 + np.log(Hh)) ** 2))
    r = [x[2] for x in rows]
    spread = max(r) / min(r)
    dt = time.perf_counter() - t
    ok = spread < 2 and dt < 600
    assert report(8, ok, " ".join(f"H/h={h}:cond={c:.3f}" for h, c, _ in rows)
                         + f" ratio spread={spread:.2f} t={dt:.0f}s")


def test_09_subdomain_count_independence():
    t = time.perf_counter()
    its = [run(RunConfig(n=4 * k, subdomains=[k ** 3])).report.its for k in (2, 3, 4)]
    dt = time.perf_counter() - t
    ok = max(its) - min(its) <= 5 and dt < 600
    assert report(9, ok, f"its for 2^3,3^3,4^3 = {its} t={dt:.0f}s")


# Non-adaptive jump runs stall for thousands of iterations (about 1900 at
# two levels); they are capped, which can only understate their count.
JUMP_CAP = 300


@pytest.mark.slow
def test_10_jump_benchmark():
    t = time.perf_counter()
    base = dict(problem="bars", formulation="elasticity", n=32, contrast=1e6, tau=2.0)
    res = {}
    for lv, subs in ((2, [64]), (3, [64, 8])):
        res[lv, "c+e"] = run(RunConfig(levels=lv, subdomains=subs, policy="c+e",
                                       max_iters=JUMP_CAP, **base)).report
        res[lv, "ad"] = run(RunConfig(levels=lv, subdomains=subs, policy="adaptive",
                                      max_iters=JUMP_CAP, **base)).report
    dt = time.perf_counter() - t
    two = res[2, "ad"].its <= 0.5 * res[2, "c+e"].its and res[2, "ad"].converged
    three = res[3, "ad"].its <= res[3, "c+e"].its and res[3, "ad"].converged

    def fmt(r):
        return f"{r.its}{'' if r.converged else '+'}"

    ok = two and three and dt < 1200
    assert report(10, ok, f"2-level ad/c+e={fmt(res[2, 'ad'])}/{fmt(res[2, 'c+e'])} "
                          f"3-level ad/c+e={fmt(res[3, 'ad'])}/{fmt(res[3, 'c+e'])} t={dt:.0f}s")


def test_11_levels_degrade_condition():
    conds = [run(RunConfig(n=16, levels=len(s) + 1, subdomains=s)).report.cond
             for s in ([64], [64, 8], [64, 8, 2])]
    ok = all(b >= a for a, b in zip(conds, conds[1:]))
    assert report(11, ok, "cond L=2,3,4: " + " ".join(f"{c:.4f}" for c in conds))


def test_12_indicator():
    st2 = run(RunConfig(n=8, subdomains=[8], indicator=True, edge_zeroing=False))
    st3 = run(RunConfig(n=8, levels=3, subdomains=[8, 2], indicator=True, edge_zeroing=False))
    notes, ok = [], True
    for st in (st2, st3):
        a = st.report.adaptive
        ok &= a["omega"] == float(np.prod(a["omega_levels"]))
        ev = dense_spectrum(st.hierarchy, st.problem1.A.toarray())
        cond = ev[-1] / ev[0]
        if not a["capped"]:
            ok &= cond <= a["omega"] * (1 + 1e-8)
        notes.append(f"L={st.report.L}: cond={cond:.4f} omega~={a['omega']:.4f}")
    assert report(12, ok, " ".join(notes))


def test_13_determinism():
    kw = dict(problem="bars", formulation="elasticity", n=16, subdomains=[8], policy="adaptive",
              tau=2.0, seed=7, max_iters=200)
    a = run(RunConfig(workers=1, **kw)).report
    b = run(RunConfig(workers=3, **kw)).report
    ok = (a.its, a.cond, a.n_c) == (b.its, b.cond, b.n_c)
    assert report(13, ok, f"workers 1 vs 3: its {a.its}/{b.its} Nc {a.n_c}/{b.n_c}")


@pytest.mark.xfail(strict=False, reason="stretch goal, not gating")
def test_14_threshold_monotone_counts():
    per_pair = []
    for tau2 in (25.0, 16.0, 9.0, 4.0):
        st = run(RunConfig(problem="bars", formulation="elasticity", n=16, levels=3,
                           subdomains=[64, 8], policy="adaptive", tau=float(np.sqrt(tau2)),
                           max_iters=300))
        rep = st.reports[0]
        per_pair.append(rep.added / len(rep.pairs))
    ok = all(b > a for a, b in zip(per_pair, per_pair[1:]))
    report(14, ok, "level-1 constraints/pair for tau^2=25,16,9,4: "
                   + " ".join(f"{c:.2f}" for c in per_pair))
    assert ok


def teardown_module(module):
    print()
    for k in sorted(RESULTS):
        print(RESULTS[k])
