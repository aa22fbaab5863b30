import csv

import numpy as np
import pytest

import resmin.adapt as adapt
from resmin.adapt import (CSV_COLUMNS, SOLVER_COLUMNS, AdaptRecord, SolverOptions, StudyError,
                          element_means, fitted_rate, observed_rates, prolong_cg, prolong_dg,
                          run_adaptive, run_uniform, write_convergence_csv, write_solver_csv)
from resmin.mesh import bisect, build_structured
from resmin.problem import catalog, custom_problem
from resmin.solver import SolverError
from resmin.spaces import CgSpace, DgSpace


def rec(level, dofs, err):
    r = AdaptRecord(level, dofs, dofs, 0, 1.0 / (level + 1), err)
    r.err_Vh = err
    return r


def test_rates_trivial_examples():
    records = [rec(0, 100, 1.0), rec(1, 400, 0.5), rec(2, 1600, 0.25)]
    assert observed_rates(records, "dofs", "errVh") == pytest.approx([-0.5, -0.5])
    assert fitted_rate(records, "dofs", "estimator") == pytest.approx(-0.5)
    records[1].err_Vh = None
    assert observed_rates(records, "dofs", "errVh") == [None, None]
    with pytest.raises(ValueError):
        observed_rates(records[:1])


def test_prolongation_preserves_polynomials():
    m0 = build_structured("unit_square", 2)
    m1 = bisect(m0, [0, 3])
    f = lambda x, y, e=None: 1 + 2 * x - x * y + y ** 2
    for p in (2, 3):
        old = DgSpace(m0, p).interpolate(f)
        assert np.allclose(prolong_dg(m0, m1, old, p), DgSpace(m1, p).interpolate(f), atol=1e-13)
        U0, U1 = CgSpace(m0, p), CgSpace(m1, p)
        assert np.allclose(prolong_cg(U0, U1, U0.interpolate(f)), U1.interpolate(f), atol=1e-13)


def test_element_means():
    m = build_structured("unit_square", 2)
    V = DgSpace(m, 1)
    w = V.interpolate(lambda x, y, e=None: x)
    assert np.allclose(element_means(V, w), m.centroids[:, 0])


def test_uniform_element_count_quadruples():
    records = run_uniform(catalog("lshape"), 1, 4)
    counts = [r.elements for r in records]
    assert counts == [counts[0] * 4 ** k for k in range(4)]
    assert all(r.marked == r.elements for r in records[:-1])
    for r in records:
        assert r.total_dofs == r.dofs_trial + r.dofs_test


def test_theta_near_one_tracks_uniform_refinement():
    prob = catalog("lshape")
    uni = run_uniform(prob, 1, 3)
    ada = run_adaptive(prob, 1, 5, theta=1 - 1e-12)
    # one uniform step bisects every element twice
    for k, u in enumerate(uni):
        a = ada[2 * k]
        assert a.elements == u.elements
        assert a.estimator == pytest.approx(u.estimator, rel=1e-10)


def test_lshape_adaptive_refines_the_corner():
    prob = catalog("lshape")
    hits = []

    def seen(state):
        if state.marked is not None and len(state.marked):
            V = state.mesh.vertices[state.mesh.elements[state.marked]]
            hits.append(bool(np.any(np.all(np.abs(V) < 1e-14, axis=-1))))

    records = run_adaptive(prob, 1, 15, on_level=seen)
    assert len(records) == 15
    assert np.mean(hits) >= 0.8
    assert records[-1].err_Vh < records[0].err_Vh
    assert all(r.effectivity > 0 for r in records)


def test_adaptive_is_reproducible():
    prob = catalog("hetero-interface")
    a = run_adaptive(prob, 1, 4)
    b = run_adaptive(prob, 1, 4)
    for x, y in zip(a, b):
        assert (x.elements, x.estimator, x.err_Vh) == (y.elements, y.estimator, y.err_Vh)


def test_stopping_rules():
    prob = catalog("lshape")
    r = run_adaptive(prob, 1, 50, max_dofs=500)
    assert r[-1].total_dofs >= 500 and all(x.total_dofs < 500 for x in r[:-1])
    r = run_adaptive(prob, 1, 50, stop_below=r[2].estimator)
    assert len(r) <= 3 + 1
    zero = custom_problem({"f": "0"})
    r = run_adaptive(zero, 1, 5)
    assert len(r) == 1 and r[0].estimator == 0
    with pytest.raises(ValueError):
        run_adaptive(prob, 1, 3, theta=1.0)
    with pytest.raises(ValueError):
        run_uniform(prob, 1, 0)


def test_iterative_backend_in_loop():
    prob = catalog("hetero-interface")
    d = run_adaptive(prob, 2, 3)
    it = run_adaptive(prob, 2, 3, solver=SolverOptions(backend="iterative"))
    for x, y in zip(d, it):
        assert x.elements == y.elements
        assert y.estimator == pytest.approx(x.estimator, rel=1e-6)
        assert y.outer_iterations >= 1 and y.residual_1 <= 1e-7


def test_solver_failure_keeps_partial_records(monkeypatch):
    real = adapt.solve_level
    calls = []

    def flaky(system, opts, warm=None):
        calls.append(1)
        if len(calls) == 3:
            raise SolverError("boom")
        return real(system, opts, warm)

    monkeypatch.setattr(adapt, "solve_level", flaky)
    with pytest.raises(StudyError) as info:
        run_uniform(catalog("lshape"), 1, 5)
    assert len(info.value.records) == 2
    assert "level 2" in str(info.value)


def test_csv_writers(tmp_path):
    records = run_uniform(catalog("hetero-interface"), 1, 3)
    path = tmp_path / "c.csv"
    write_convergence_csv(path, records)
    rows = list(csv.reader(path.open()))
    assert rows[0] == list(CSV_COLUMNS)
    assert len(rows) == 4
    assert rows[1][CSV_COLUMNS.index("rate_err_Vh")] == ""
    rate = float(rows[2][CSV_COLUMNS.index("rate_err_Vh")])
    assert rate == pytest.approx(observed_rates(records, "dofs", "err_Vh")[0])
    first = path.read_bytes()
    write_convergence_csv(path, records)
    assert path.read_bytes() == first
    write_solver_csv(tmp_path / "s.csv", records, "direct")
    rows = list(csv.reader((tmp_path / "s.csv").open()))
    assert rows[0] == list(SOLVER_COLUMNS) and rows[1][2] == "direct"


_ANISO = {}


def aniso_study():
    if not _ANISO:
        marked_share = []

        def seen(state):
            if state.marked is not None and len(state.marked):
                c = state.mesh.centroids[state.marked]
                h = state.mesh.diameters[state.marked]
                band = (np.abs(c[:, 0] - 2 / 3) <= 2 * h) | (np.abs(c[:, 1] - 2 / 3) <= 2 * h)
                ring = np.abs(np.hypot(c[:, 0] - 0.5, c[:, 1] - 0.5) - 0.35) <= 0.1
                marked_share.append(np.mean(band | ring))

        _ANISO["records"] = run_adaptive(catalog("aniso-ccw"), 1, 14, on_level=seen)
        _ANISO["share"] = marked_share
    return _ANISO


def test_aniso_refinement_concentrates_on_layers():
    study = aniso_study()
    assert np.mean(study["share"]) >= 0.8


@pytest.mark.xfail(strict=True, reason="estimator plateaus: the K = 1e-6 interface layer is not "
                                        "representable by a continuous trial space")
def test_aniso_estimator_decreases_after_level_3():
    est = [r.estimator for r in aniso_study()["records"]]
    assert all(b < a for a, b in zip(est[3:], est[4:]))
