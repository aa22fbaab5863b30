import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resmin.assembly import assemble_gram, assemble_system, face_coefficients
from resmin.estimate import dorfler_mark, error_norms, local_indicators, norm_Vh
from resmin.mesh import bisect, build_structured
from resmin.problem import catalog, custom_problem
from resmin.solver import solve_direct
from resmin.spaces import CgSpace, DgSpace, reference_nodes


def test_dorfler_examples():
    assert list(dorfler_mark([5, 3, 1, 1], 0.5)) == [0]
    assert list(dorfler_mark([1, 1, 1, 1], 0.5)) == [0, 1]
    assert list(dorfler_mark([1, 2, 3, 4], 0.999)) == [0, 1, 2, 3]
    assert list(dorfler_mark([0, 0, 0], 0.5)) == []
    # squared sums: 25 of 36 carries 60 %, 5 of 10 does not
    assert list(dorfler_mark([5, 3, 1, 1], 0.6, squared=True)) == [0]
    assert list(dorfler_mark([5, 3, 1, 1], 0.6)) == [0, 1]


@pytest.mark.parametrize("theta", [0.0, 1.0, -0.1, 1.5])
def test_dorfler_rejects_theta(theta):
    with pytest.raises(ValueError):
        dorfler_mark([1.0, 2.0], theta)


def test_dorfler_rejects_negative():
    with pytest.raises(ValueError):
        dorfler_mark([1.0, -2.0], 0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=30),
       st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.booleans())
def test_dorfler_minimal_and_monotone(E, t1, t2, squared):
    E = np.array(E)
    lo, hi = sorted((t1, t2))
    a, b = dorfler_mark(E, lo, squared), dorfler_mark(E, hi, squared)
    assert set(a) <= set(b)
    vals = E ** 2 if squared else E
    if vals.sum() > 0:
        assert vals[b].sum() >= hi * vals.sum() * (1 - 1e-12)
        # dropping the smallest marked value loses the bulk property
        rest = np.sort(vals[b])[1:].sum()
        assert rest < hi * vals.sum() * (1 - 1e-14) or np.sort(vals[b])[0] == 0


def test_zero_eps_gives_zero_indicators():
    prob = catalog("lshape")
    m = build_structured(prob.domain, 2)
    rep = local_indicators(m, DgSpace(m, 2), prob, np.zeros(DgSpace(m, 2).dim))
    assert rep.estimator == 0 and not np.any(rep.indicators)
    assert dorfler_mark(rep.indicators).size == 0


@pytest.mark.parametrize("p", [3, 4])
def test_interior_bubble_is_local(p):
    prob = catalog("aniso-ccw")
    m = build_structured(prob.domain, 8, prob.interfaces)
    V = DgSpace(m, p)
    s, t = reference_nodes(p).T
    c = np.zeros((m.n_elements, V.nloc))
    target = 17
    c[target] = (1 - s - t) * s * t
    rep = local_indicators(m, V, prob, c.ravel())
    assert rep.indicators[target] > 0
    others = np.delete(rep.indicators, target)
    assert others.max() <= 1e-12 * rep.indicators[target]


@pytest.mark.parametrize("name", ["hetero-interface", "aniso-cw", "lshape"])
def test_indicators_square_sum_to_estimator(name):
    prob = catalog(name)
    m = bisect(build_structured(prob.domain, 8 if name == "aniso-cw" else 4, prob.interfaces),
               [0, 5])
    V = DgSpace(m, 2)
    rng = np.random.default_rng(2)
    w = rng.standard_normal(V.dim)
    rep = local_indicators(m, V, prob, w)
    assert np.sum(rep.indicators ** 2) == pytest.approx(rep.estimator ** 2, rel=1e-12)
    G = assemble_gram(m, V, prob)
    assert rep.estimator ** 2 == pytest.approx(w @ G @ w, rel=1e-10)
    assert norm_Vh(m, V, prob, w)["total"] == pytest.approx(rep.estimator, rel=1e-14)


def test_constant_function_norm():
    prob = custom_problem({"K": [["2", "0"], ["0", "2"]], "b": ["1", "2"]})
    m = build_structured("unit_square", 2)
    V = DgSpace(m, 1)
    coef = face_coefficients(m, prob, 1)
    bnd = m.skeleton.boundary
    lengths = m.skeleton.h
    c = 3.0
    # |Omega| = 1 and sum over the boundary of |b.n| |F| / 2 = 3
    expected = c ** 2 * (1.0 + 3.0 + np.sum(coef.gamma_F[bnd] * lengths[bnd]))
    comps = norm_Vh(m, V, prob, np.full(V.dim, c))
    assert comps["total"] ** 2 == pytest.approx(expected, rel=1e-13)
    assert comps["beta"] == 0 and comps["l2"] == pytest.approx(c)


def test_error_norms_vanish_for_reproduced_solution():
    prob = custom_problem({"f": "0", "gD": "1 + x - y", "exact": "1 + x - y",
                           "exact_grad": ["1", "-1"]})
    m = build_structured("unit_square", 3)
    U = CgSpace(m, 1)
    res = solve_direct(assemble_system(m, prob, 1))
    errs = error_norms(m, U, res.u, prob)
    assert errs["L2"] < 1e-10 and errs["Vh"] < 1e-9 and errs["Vh_beta"] == 0
    assert local_indicators(m, U.dg, prob, res.eps).estimator < 1e-9


def test_true_error_decreases_on_lshape():
    prob = catalog("lshape")
    out = []
    for n in (2, 4, 8):
        m = build_structured(prob.domain, n)
        U = CgSpace(m, 1)
        res = solve_direct(assemble_system(m, prob, 1))
        out.append(error_norms(m, U, res.u, prob)["Vh"])
    assert out[0] > out[1] > out[2]
