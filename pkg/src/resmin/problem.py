"""Coefficient fields, boundary data and the benchmark catalog.

All field evaluators share the signature ``fn(x, y, region)`` where the
arguments are broadcastable arrays and ``region`` holds the subdomain id
of the element each point belongs to.  Scalars return shape ``S``,
vectors ``S + (2,)`` and tensors ``S + (2, 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .expr import parse_expression


@dataclass(frozen=True)
class Region:
    id: int
    bounds: tuple[float, float, float, float]  # x0, x1, y0, y1

    def contains(self, x, y):
        x0, x1, y0, y1 = self.bounds
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


@dataclass(frozen=True)
class CoefficientField:
    fn: Callable
    kind: str = "scalar"  # scalar | vector | tensor

    def __call__(self, x, y, region=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if region is None:
            region = np.zeros(np.broadcast(x, y).shape, dtype=int)
        return self.fn(x, y, np.asarray(region))


def constant(value, shape=None) -> CoefficientField:
    value = np.asarray(value, dtype=float)
    kind = {0: "scalar", 1: "vector", 2: "tensor"}[value.ndim]

    def fn(x, y, region):
        s = np.broadcast(x, y).shape
        return np.broadcast_to(value, s + value.shape).copy()

    return CoefficientField(fn, kind)


def piecewise_tensor(values: dict[int, Sequence]) -> CoefficientField:
    """Region-wise constant tensor field."""
    table = {k: np.asarray(v, dtype=float) for k, v in values.items()}

    def fn(x, y, region):
        s = np.broadcast(x, y, region).shape
        region = np.broadcast_to(region, s)
        out = np.zeros(s + (2, 2))
        for rid, val in table.items():
            out[region == rid] = val
        return out

    return CoefficientField(fn, "tensor")


@dataclass(frozen=True)
class ExactSolution:
    value: Callable  # (x, y, region) -> S
    gradient: Callable  # (x, y, region) -> S + (2,)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    domain: object  # "lshape", "unit_square" or (x0, x1, y0, y1)
    K: CoefficientField
    b: CoefficientField
    sigma: CoefficientField
    f: CoefficientField
    gD: CoefficientField
    exact: ExactSolution | None = None
    regions: tuple[Region, ...] = ()
    interfaces: tuple[tuple[str, float], ...] = ()
    initial_n: int = 1
    description: str = ""
    divergence_free: bool = True
    metadata: dict = field(default_factory=dict)

    def region_of(self, points: np.ndarray) -> np.ndarray:
        """Subdomain id of each point (first match; 0 when no regions are declared)."""
        points = np.asarray(points, dtype=float)
        out = np.zeros(points.shape[:-1], dtype=int)
        assigned = np.zeros(points.shape[:-1], dtype=bool)
        for r in self.regions:
            hit = r.contains(points[..., 0], points[..., 1]) & ~assigned
            out[hit] = r.id
            assigned |= hit
        return out

    def element_regions(self, mesh) -> np.ndarray:
        return self.region_of(mesh.centroids)


# ---------------------------------------------------------------- L-shape

LSHAPE_ALPHA = 2.0 / 3.0


def _lshape_angle(x, y):
    theta = np.arctan2(y, x)
    # branch continuous on (-1,1)^2 \ (-1,0]^2: theta in [-pi/2, pi]
    return np.where(theta < -0.5 * np.pi - 1e-14, theta + 2 * np.pi, theta)


def lshape_exact(x, y, region=None, alpha=LSHAPE_ALPHA):
    r = np.hypot(x, y)
    return r ** alpha * np.sin(alpha * _lshape_angle(x, y))


def lshape_gradient(x, y, region=None, alpha=LSHAPE_ALPHA):
    r = np.hypot(x, y)
    theta = _lshape_angle(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = alpha * r ** (alpha - 1.0)
    return np.stack([c * np.sin((alpha - 1) * theta), c * np.cos((alpha - 1) * theta)], axis=-1)


# ------------------------------------------------- heterogeneous interface

HETERO_EPS = (1e-2, 1.0)


def hetero_interface_value(eps1=HETERO_EPS[0], eps2=HETERO_EPS[1], u0=0.0, u1=1.0):
    """Value at x = 1/2 from continuity of u and of the diffusive flux."""
    # exp(a)/(1 - exp(a)) = 1/expm1(-a), evaluated without overflow
    c1 = 1.0 / np.expm1(-0.5 / eps1)
    c2 = -1.0 / np.expm1(0.5 / eps2)
    return (u0 * c1 + u1 * c2) / (c1 + c2)


def _layer(x, left, right, ua, ub, eps):
    """Solution of -eps u'' + u' = 0 on [left, right] with u(left)=ua, u(right)=ub."""
    length = right - left
    # (ub - ua e^{L/eps} + (ua - ub) e^{(x-left)/eps}) / (1 - e^{L/eps}), scaled by e^{-L/eps}
    decay = np.exp(-length / eps)
    return (ub * decay - ua + (ua - ub) * np.exp((x - right) / eps)) / (decay - 1.0)


def _layer_dx(x, left, right, ua, ub, eps):
    decay = np.exp(-(right - left) / eps)
    return (ua - ub) / eps * np.exp((x - right) / eps) / (decay - 1.0)


def hetero_exact(x, y, region=None, eps=HETERO_EPS):
    um = hetero_interface_value(*eps)
    left = _layer(np.minimum(x, 0.5), 0.0, 0.5, 0.0, um, eps[0])
    right = _layer(np.maximum(x, 0.5), 0.5, 1.0, um, 1.0, eps[1])
    out = np.where(x <= 0.5, left, right)
    return out + 0.0 * y


def hetero_gradient(x, y, region=None, eps=HETERO_EPS):
    um = hetero_interface_value(*eps)
    left = _layer_dx(np.minimum(x, 0.5), 0.0, 0.5, 0.0, um, eps[0])
    right = _layer_dx(np.maximum(x, 0.5), 0.5, 1.0, um, 1.0, eps[1])
    if region is not None and np.any(np.asarray(region) > 0):
        # on the interface use the one-sided derivative of the owning element
        side = np.broadcast_to(np.asarray(region), np.broadcast(x, y).shape)
        dx = np.where(side == 1, left, np.where(side == 2, right, np.where(x <= 0.5, left, right)))
    else:
        dx = np.where(x <= 0.5, left, right)
    return np.stack([dx, np.zeros_like(dx + 0.0 * y)], axis=-1)


# ------------------------------------------------------------ anisotropic

ANISO_SPLIT = 2.0 / 3.0


def aniso_velocity(x, y, sign=1.0):
    bx = 40.0 * x * (2 * y - 1) * (x - 1)
    by = -40.0 * y * (2 * x - 1) * (y - 1)
    return sign * np.stack([bx, by], axis=-1)


def aniso_source(x, y, region=None):
    r = np.hypot(x - 0.5, y - 0.5)
    return 1e-2 * np.exp(-((r - 0.35) ** 2) / 0.005)


def _zero(x, y, region=None):
    return np.zeros(np.broadcast(x, y).shape)


def _lshape() -> ProblemSpec:
    return ProblemSpec(
        name="lshape",
        domain="lshape",
        K=constant(np.eye(2)),
        b=constant([0.0, 0.0]),
        sigma=constant(0.0),
        f=constant(0.0),
        gD=CoefficientField(lshape_exact),
        exact=ExactSolution(lshape_exact, lshape_gradient),
        initial_n=1,
        description="Laplace on the L-shape, reentrant corner singularity r^(2/3) sin(2 theta/3)",
    )


def _hetero() -> ProblemSpec:
    e1, e2 = HETERO_EPS
    return ProblemSpec(
        name="hetero-interface",
        domain="unit_square",
        K=piecewise_tensor({1: [[e1, 0.0], [0.0, 1.0]], 2: [[e2, 0.0], [0.0, 1.0]]}),
        b=constant([1.0, 0.0]),
        sigma=constant(0.0),
        f=constant(0.0),
        gD=CoefficientField(hetero_exact),
        exact=ExactSolution(hetero_exact, hetero_gradient),
        regions=(Region(1, (0.0, 0.5, 0.0, 1.0)), Region(2, (0.5, 1.0, 0.0, 1.0))),
        interfaces=(("x", 0.5),),
        initial_n=4,
        description="advection across a diffusivity jump at x=1/2 (eps 1e-2 | 1), exponential layer",
    )


def _aniso(sign: float) -> ProblemSpec:
    s = ANISO_SPLIT
    weak_x = [[1e-6, 0.0], [0.0, 1.0]]
    weak_y = [[1.0, 0.0], [0.0, 1e-6]]
    name = "aniso-ccw" if sign > 0 else "aniso-cw"
    return ProblemSpec(
        name=name,
        domain="unit_square",
        K=piecewise_tensor({1: weak_x, 2: weak_y, 3: weak_x, 4: weak_y}),
        b=CoefficientField(lambda x, y, region: aniso_velocity(x, y, sign), "vector"),
        sigma=constant(1.0),
        f=CoefficientField(aniso_source),
        gD=CoefficientField(_zero),
        regions=(
            Region(1, (0.0, s, 0.0, s)),
            Region(2, (s, 1.0, 0.0, s)),
            Region(3, (s, 1.0, s, 1.0)),
            Region(4, (0.0, s, s, 1.0)),
        ),
        interfaces=(("x", s), ("y", s)),
        initial_n=8,
        description=("anisotropic high-contrast diffusion, "
                     + ("counterclockwise" if sign > 0 else "clockwise")
                     + " rotating advection, Gaussian ring source"),
    )


CATALOG: dict[str, Callable[[], ProblemSpec]] = {
    "lshape": _lshape,
    "hetero-interface": _hetero,
    "aniso-ccw": lambda: _aniso(1.0),
    "aniso-cw": lambda: _aniso(-1.0),
}


def catalog(name: str) -> ProblemSpec:
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(CATALOG)}") from None


def _scalar_from(spec, default="0"):
    if isinstance(spec, (int, float)):
        return constant(float(spec))
    expr = parse_expression(str(spec if spec is not None else default))
    return CoefficientField(expr)


def custom_problem(spec: dict, name: str = "custom") -> ProblemSpec:
    """Problem from the ``custom`` block of a run configuration.

    ``K`` is a 2x2 list of expressions, ``b`` a list of two, ``sigma``,
    ``f`` and ``gD`` single expressions.  ``regions`` optionally lists
    ``{"id", "bounds", "K"}`` entries overriding ``K`` region-wise.
    ``exact`` (with ``exact_grad``) may attach a reference solution.
    """
    allowed = {"domain", "K", "b", "sigma", "f", "gD", "regions", "exact", "exact_grad", "n"}
    unknown = set(spec) - allowed
    if unknown:
        raise ValueError(f"unknown keys in custom problem: {sorted(unknown)}")

    def tensor_exprs(K):
        return [[parse_expression(str(K[i][j])) for j in range(2)] for i in range(2)]

    base = tensor_exprs(spec.get("K", [["1", "0"], ["0", "1"]]))
    regions = []
    overrides = {}
    for r in spec.get("regions", []):
        regions.append(Region(int(r["id"]), tuple(float(v) for v in r["bounds"])))
        if "K" in r:
            overrides[int(r["id"])] = tensor_exprs(r["K"])

    def K(x, y, region):
        s = np.broadcast(x, y, region).shape
        region = np.broadcast_to(region, s)
        out = np.empty(s + (2, 2))
        for i in range(2):
            for j in range(2):
                out[..., i, j] = np.broadcast_to(base[i][j](x, y), s)
        for rid, exprs in overrides.items():
            sel = region == rid
            for i in range(2):
                for j in range(2):
                    out[..., i, j][sel] = np.broadcast_to(exprs[i][j](x, y), s)[sel]
        return out

    b_exprs = [parse_expression(str(e)) for e in spec.get("b", ["0", "0"])]

    def b(x, y, region):
        s = np.broadcast(x, y).shape
        return np.stack([np.broadcast_to(e(x, y), s) for e in b_exprs], axis=-1)

    exact = None
    if "exact" in spec:
        if "exact_grad" not in spec:
            raise ValueError("custom 'exact' requires 'exact_grad' (two expressions)")
        ue = parse_expression(str(spec["exact"]))
        ge = [parse_expression(str(e)) for e in spec["exact_grad"]]

        def grad(x, y, region=None):
            s = np.broadcast(x, y).shape
            return np.stack([np.broadcast_to(e(x, y), s) for e in ge], axis=-1)

        exact = ExactSolution(lambda x, y, region=None: ue(x, y), grad)

    domain = spec.get("domain", "unit_square")
    if isinstance(domain, list):
        domain = tuple(float(v) for v in domain)
    return ProblemSpec(
        name=name,
        domain=domain,
        K=CoefficientField(K, "tensor"),
        b=CoefficientField(b, "vector"),
        sigma=_scalar_from(spec.get("sigma", 0.0)),
        f=_scalar_from(spec.get("f", 0.0)),
        gD=_scalar_from(spec.get("gD", 0.0)),
        exact=exact,
        regions=tuple(regions),
        initial_n=int(spec.get("n", 4)),
        description="custom problem",
        divergence_free=False,
    )


def exact_errors(mesh, space, coeffs, problem: ProblemSpec, trial: bool = True):
    """True error norms of a discrete solution; see :func:`resmin.estimate.error_norms`."""
    if problem.exact is None:
        raise ValueError(f"problem {problem.name!r} has no exact solution attached")
    from .estimate import error_norms

    return error_norms(mesh, space, coeffs, problem, trial=trial)
