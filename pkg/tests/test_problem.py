import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from resmin.expr import ExpressionError, parse_expression
from resmin.mesh import build_structured
from resmin.problem import (CATALOG, aniso_velocity, catalog, custom_problem, exact_errors,
                            hetero_exact, hetero_gradient, hetero_interface_value, lshape_exact,
                            lshape_gradient)
from resmin.spaces import CgSpace


# ----------------------------------------------------------------- parser

@pytest.mark.parametrize("text,x,y,expected", [
    ("x*y + 1", 2, 3, 7),
    ("exp(-(x-0.5)^2/0.005)", 0.5, 0, 1),
    ("sin(pi*x)", 0.5, 0, 1),
    ("2^3^2", 0, 0, 512),
    ("-2^2", 0, 0, -4),
    ("8/4/2", 0, 0, 1),
    ("10-4-3", 0, 0, 3),
    ("sqrt(abs(x)) + tanh(0) + cos(0)", -4, 0, 3),
    ("1.5e1 + .5", 0, 0, 15.5),
])
def test_expression_values(text, x, y, expected):
    assert parse_expression(text)(x, y) == pytest.approx(expected)


@pytest.mark.parametrize("text", ["x +", "foo(x)", "z", "(x", "x y", "sin x", ""])
def test_expression_errors_report_position(text):
    with pytest.raises(ExpressionError) as info:
        parse_expression(text)
    assert "position" in str(info.value)


def test_division_by_zero_is_flagged_nan():
    e = parse_expression("1/(x-1)")
    out = e(np.array([0.0, 1.0]), 0.0)
    assert np.isnan(out[1]) and out[0] == -1
    assert e.nan_flagged
    e(np.array([0.0]), 0.0)
    assert not e.nan_flagged


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_expression_matches_python(a, x, y):
    e = parse_expression(f"({a})*x^2 - y/3 + x*y")
    assert e(x, y) == pytest.approx(a * x ** 2 - y / 3 + x * y, rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------- catalog

def test_catalog_names():
    assert set(CATALOG) == {"lshape", "hetero-interface", "aniso-ccw", "aniso-cw"}
    with pytest.raises(KeyError):
        catalog("nope")


def test_lshape_exact_value():
    a = 3 * np.pi / 4
    assert lshape_exact(np.cos(a), np.sin(a)) == pytest.approx(1.0)


def test_lshape_exact_is_harmonic_and_gradient_matches():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, (200, 2))
    pts = pts[~((pts[:, 0] < 0) & (pts[:, 1] < 0))]
    pts = pts[np.hypot(*pts.T) > 0.05]
    x, y = pts.T
    h = 1e-5
    fd = np.stack([(lshape_exact(x + h, y) - lshape_exact(x - h, y)) / (2 * h),
                   (lshape_exact(x, y + h) - lshape_exact(x, y - h)) / (2 * h)], axis=-1)
    assert np.allclose(lshape_gradient(x, y), fd, rtol=1e-6, atol=1e-6)
    h = 1e-3
    lap = (lshape_exact(x + h, y) + lshape_exact(x - h, y) + lshape_exact(x, y + h)
           + lshape_exact(x, y - h) - 4 * lshape_exact(x, y)) / h ** 2
    assert np.abs(lap).max() < 1e-3


def test_hetero_interface_value():
    assert hetero_interface_value() == pytest.approx(0.6065307, abs=1e-7)
    y = np.linspace(0, 1, 5)
    assert np.allclose(hetero_exact(np.full(5, 0.5), y), 0.6065306597, atol=1e-9)
    assert hetero_exact(0.0, 0.3) == pytest.approx(0.0, abs=1e-14)
    assert hetero_exact(1.0, 0.3) == pytest.approx(1.0)


def test_hetero_flux_matching():
    g1 = hetero_gradient(0.5, 0.2, region=1)[..., 0]
    g2 = hetero_gradient(0.5, 0.2, region=2)[..., 0]
    assert 1e-2 * g1 == pytest.approx(1.0 * g2, rel=1e-9)


def test_hetero_solves_ode():
    x = np.linspace(0.05, 0.45, 9)
    h = 1e-5
    u = lambda s: hetero_exact(s, 0.0)
    upp = (u(x + h) - 2 * u(x) + u(x - h)) / h ** 2
    up = (u(x + h) - u(x - h)) / (2 * h)
    assert np.allclose(-1e-2 * upp + up, 0.0, atol=1e-3 * np.abs(up).max())


def test_aniso_velocity():
    assert np.allclose(aniso_velocity(0.5, 0.5), 0.0)
    rng = np.random.default_rng(3)
    x, y = rng.random((2, 100))
    h = 1e-6
    div = ((aniso_velocity(x + h, y)[..., 0] - aniso_velocity(x - h, y)[..., 0])
           + (aniso_velocity(x, y + h)[..., 1] - aniso_velocity(x, y - h)[..., 1])) / (2 * h)
    assert np.abs(div).max() <= 1e-6
    # exact polynomial divergence vanishes identically
    bx = lambda x, y: 40 * x * (2 * y - 1) * (x - 1)
    by = lambda x, y: -40 * y * (2 * x - 1) * (y - 1)
    assert np.allclose(aniso_velocity(x, y), np.stack([bx(x, y), by(x, y)], -1), atol=1e-12)
    assert np.allclose(aniso_velocity(x, y, sign=-1.0), -aniso_velocity(x, y), atol=1e-12)


@pytest.mark.parametrize("name", sorted(CATALOG))
def test_catalog_K_is_spd(name):
    prob = catalog(name)
    rng = np.random.default_rng(4)
    m = build_structured(prob.domain, prob.initial_n, prob.interfaces)
    pts = m.centroids
    K = prob.K(pts[:, 0], pts[:, 1], prob.element_regions(m))
    assert np.allclose(K, np.swapaxes(K, -1, -2))
    assert np.all(np.linalg.eigvalsh(K) > 0)
    assert rng is not None


def test_aniso_regions():
    prob = catalog("aniso-ccw")
    pts = np.array([[0.2, 0.2], [0.9, 0.2], [0.9, 0.9], [0.2, 0.9]])
    assert list(prob.region_of(pts)) == [1, 2, 3, 4]
    K = prob.K(pts[:, 0], pts[:, 1], np.array([1, 2, 3, 4]))
    assert np.allclose(K[0], np.diag([1e-6, 1.0])) and np.allclose(K[1], np.diag([1.0, 1e-6]))


def test_custom_problem_and_errors():
    prob = custom_problem({"K": [["1", "0"], ["0", "2"]], "b": ["1", "x"], "sigma": "1",
                           "f": "x*y", "gD": 0.5, "exact": "x", "exact_grad": ["1", "0"]})
    K = prob.K(np.array([0.1]), np.array([0.2]), np.array([0]))
    assert np.allclose(K[0], [[1, 0], [0, 2]])
    assert np.allclose(prob.b(np.array([0.3]), np.array([0.0]), None), [[1, 0.3]])
    with pytest.raises(ValueError, match="unknown"):
        custom_problem({"bogus": 1})
    with pytest.raises(ValueError):
        custom_problem({"exact": "x"})


def test_exact_errors():
    prob = custom_problem({"exact": "0", "exact_grad": ["0", "0"]})
    m = build_structured("unit_square", 2)
    U = CgSpace(m, 1)
    assert exact_errors(m, U, np.zeros(U.dim), prob)["L2"] == 0.0
    lsh = catalog("lshape")
    m = build_structured("lshape", 1)
    U = CgSpace(m, 1)
    assert exact_errors(m, U, np.zeros(U.dim), lsh)["L2"] > 0
    with pytest.raises(ValueError):
        exact_errors(m, U, np.zeros(U.dim), catalog("aniso-cw"))


def test_hetero_interpolant_l2_error():
    prob = catalog("hetero-interface")
    m = build_structured(prob.domain, 64, prob.interfaces)
    U = CgSpace(m, 3)
    u = U.interpolate(lambda x, y, e=None: hetero_exact(x, y))
    assert exact_errors(m, U, u, prob)["L2"] < 1e-4
