import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from ambddc import driver
from ambddc.driver import RunConfig, run
from ambddc.errors import FormatError, IndefiniteSplit, PartitionMismatch, StageError


def test_config_invariants():
    with pytest.raises(ValueError):
        RunConfig(levels=1, subdomains=[])
    with pytest.raises(ValueError):
        RunConfig(levels=3, subdomains=[8, 8])
    with pytest.raises(ValueError):
        RunConfig(policy="adaptive", tau=1.0)
    with pytest.raises(ValueError):
        RunConfig(levels=3, subdomains=[8])


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# cube\nn = 6\nsubdomains = 8\npolicy = c\nedge_zeroing = false\n")
    cfg = driver.load_config(p, {"n": "4"})
    assert (cfg.n, cfg.subdomains, cfg.policy, cfg.edge_zeroing) == (4, [8], "c", False)
    p.write_text("n 6\n")
    with pytest.raises(FormatError):
        driver.load_config(p)
    p.write_text("bogus = 1\n")
    with pytest.raises(ValueError):
        driver.load_config(p)


def test_config_roundtrip():
    cfg = RunConfig(levels=3, subdomains=[27, 2], policy="adaptive", tau=3.0)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_poisson_cube_envelope():
    rep = run(RunConfig(n=16, subdomains=[8])).report
    assert rep.converged and rep.its <= 30 and rep.cond <= 20
    assert rep.adaptive is None
    assert "omega" not in rep.to_dict()


def test_adaptive_not_worse():
    base = run(RunConfig(n=16, subdomains=[8])).report
    ada = run(RunConfig(n=16, subdomains=[8], policy="adaptive", tau=1.5)).report
    assert ada.its <= base.its
    assert ada.adaptive["omega"] <= 1.5 or ada.adaptive["capped"]


def test_more_levels_not_better():
    two = run(RunConfig(n=16, subdomains=[8])).report
    three = run(RunConfig(n=16, levels=3, subdomains=[8, 2])).report
    assert three.cond >= two.cond
    assert three.L == 3 and len(three.n_c) == 2


def test_constraint_count_accounting():
    st = run(RunConfig(problem="cube", formulation="elasticity", n=8, subdomains=[8],
                       policy="adaptive", tau=1.5))
    lev = st.levels[0]
    kinds = {}
    for g in lev.groups:
        kinds[g.kind] = kinds.get(g.kind, 0) + g.size
    n_corner_nodes = sum(1 for g in lev.globs if g.kind == "corner")
    assert kinds.get("corner", 0) == 3 * n_corner_nodes
    assert kinds.get("adaptive", 0) == st.report.adaptive["added"][0]
    assert sum(kinds.values()) == st.report.n_c[0]


def test_report_json_roundtrip(tmp_path):
    st = run(RunConfig(n=8, subdomains=[8], indicator=True))
    path = driver.emit_report(st.report, tmp_path / "r.json", "json")
    back = driver.read_report(path)
    assert back.to_dict() == st.report.to_dict()
    d = json.loads((tmp_path / "r.json").read_text())
    assert list(d) == list(driver.REPORT_FIELDS + driver.ADAPTIVE_FIELDS)
    assert d["setup"] == round(d["setup"], 3)


def test_report_csv_header(tmp_path):
    plain = run(RunConfig(n=8, subdomains=[8])).report
    driver.emit_report(plain, tmp_path / "a.csv", "csv")
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == driver.CSV_SCHEMA
    ada = run(RunConfig(n=8, subdomains=[8], policy="adaptive", tau=2.0)).report
    driver.emit_report(ada, tmp_path / "b.csv", "csv")
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == driver.CSV_SCHEMA_ADAPTIVE


def test_indicator_product_of_levels():
    rep = run(RunConfig(n=16, levels=3, subdomains=[8, 2], indicator=True)).report
    a = rep.adaptive
    assert a["omega"] == np.prod(a["omega_levels"])
    assert a["added"] == [0, 0]


def test_determinism_across_workers():
    kw = dict(n=8, subdomains=[8], policy="adaptive", tau=1.5, seed=3)
    one = run(RunConfig(workers=1, **kw)).report.comparable()
    four = run(RunConfig(workers=4, **kw)).report.comparable()
    assert one == four


def test_outputs_written(tmp_path):
    run(RunConfig(n=8, subdomains=[8], policy="adaptive", tau=1.5, output=str(tmp_path)))
    for name in ("report.json", "report.csv", "residuals.csv", "pairs.csv"):
        assert (tmp_path / name).exists()


def _export(tmp_path, cfg):
    _, material, ps = driver.generate_problem(cfg)
    lp = driver.from_problem_system(ps)
    dec = driver._partition(cfg, lp, 0, cfg.subdomains[0])
    if driver.resolve_load(cfg) == "random":
        ps.f = np.random.default_rng(cfg.seed).standard_normal(ps.n)
    return driver.export_problem(tmp_path, ps, dec.elem_part, material)


@pytest.mark.parametrize("formulation", ["poisson", "elasticity"])
def test_mesh_export_reingest(tmp_path, formulation):
    cfg = RunConfig(problem="bars", formulation=formulation, n=8, contrast=1e3, subdomains=[8])
    paths = _export(tmp_path, cfg)
    ref = run(cfg).report
    again = run(RunConfig(problem="mesh", mesh=paths["mesh"], formulation=formulation,
                          subdomains=[8])).report
    assert again.its == ref.its
    assert_allclose(again.cond, ref.cond, rtol=1e-10)


def test_matrix_export_reingest(tmp_path):
    cfg = RunConfig(n=8, subdomains=[8])
    paths = _export(tmp_path, cfg)
    ext = RunConfig(problem="matrix", matrix=paths["matrix"], rhs=paths["rhs"],
                    partition=paths["partition"], coords=paths["coords"], subdomains=[8])
    from_files = run(ext).report
    lp, elem_part, f = driver.ingest_external(paths["matrix"], paths["rhs"], paths["partition"],
                                              paths["coords"])
    in_memory = run(ext, source=(lp, elem_part, f)).report
    assert from_files.comparable() == in_memory.comparable()
    assert from_files.converged and from_files.n == 343


def test_matrix_without_coords(tmp_path):
    cfg = RunConfig(n=6, subdomains=[8])
    paths = _export(tmp_path, cfg)
    rep = run(RunConfig(problem="matrix", matrix=paths["matrix"], rhs=paths["rhs"],
                        partition=paths["partition"], subdomains=[8])).report
    assert rep.converged


def test_matrix_ingest_rejects_elasticity(tmp_path):
    cfg = RunConfig(formulation="elasticity", n=4, subdomains=[8])
    paths = _export(tmp_path, cfg)
    with pytest.raises(IndefiniteSplit):
        driver.ingest_external(paths["matrix"], paths["rhs"], paths["partition"],
                               paths["coords"], "elasticity")


def test_ingest_errors(tmp_path):
    cfg = RunConfig(n=4, subdomains=[8])
    paths = _export(tmp_path, cfg)
    lines = open(paths["partition"]).read().splitlines()
    (tmp_path / "short.txt").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(PartitionMismatch):
        driver.ingest_external(paths["matrix"], paths["rhs"], tmp_path / "short.txt")
    (tmp_path / "asym.mtx").write_text(
        "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 2.0\n2 1 1.0\n2 2 2.0\n")
    with pytest.raises(FormatError):
        driver.ingest_external(tmp_path / "asym.mtx", paths["rhs"], paths["partition"])


def test_stage_labels():
    with pytest.raises(StageError) as info:
        run(RunConfig(n=6, subdomains=[64]))
    assert "level 1 partition" in str(info.value)


def test_dump_subdomains(tmp_path):
    st = run(RunConfig(n=8, subdomains=[8]))
    driver.dump_subdomains(st, tmp_path)
    assert len(list(tmp_path.glob("L1_s*_C.mtx"))) == 8
