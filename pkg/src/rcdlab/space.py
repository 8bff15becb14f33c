"""Finite model metric measure spaces.

A :class:`ModelSpace` is a one-dimensional grid (interval, circle or the
truncated Gaussian reference) or a small custom graph, together with the
reference weights ``mu`` and the edge densities the generator is built from.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ConstructionError,
    DegenerateInputError,
    ParameterError,
    SolverError,
)

KINDS = ("interval", "circle", "ou", "custom")

# V as ascending polynomial coefficients
POTENTIAL_PRESETS = {
    "flat": (0.0,),
    "quadratic": (0.0, 0.0, 0.5),
    "quartic": (0.0, 0.0, 0.0, 0.0, 1.0),
    "double_well": (0.0, 0.0, -0.5, 0.0, 0.25),
}


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a model; see :func:`build_model`."""

    kind: str = "ou"
    N: int = 201
    domain: tuple[float, float] | None = None
    potential: str | Sequence[float] | None = None
    normalize: bool = True
    # custom spaces only
    points: Sequence[float] | None = None
    weights: Sequence[float] | None = None
    potential_samples: Sequence[float] | None = None
    distance: Sequence[Sequence[float]] | None = None
    rates: Sequence[Sequence[float]] | None = None
    name: str | None = None

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ModelSpec":
        data = dict(data)
        if "domain" in data and data["domain"] is not None:
            data["domain"] = tuple(float(v) for v in data["domain"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown model keys: {sorted(unknown)}")
        return cls(**data)

    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind == "custom":
            return f"custom{len(self.points or ())}"
        return f"{self.kind}{self.N}"


@dataclass(frozen=True, eq=False)
class ModelSpace:
    kind: str
    points: np.ndarray
    h: float
    weights: np.ndarray
    K_target: float
    boundary: str
    base_point: int
    potential: np.ndarray
    # density at edge midpoints for grid models, None for rate-specified ones
    edge_density: np.ndarray | None = None
    rates: np.ndarray | None = None
    custom_distance: np.ndarray | None = None
    length: float | None = None
    truncation_deficit: float = 0.0
    raw_mass: float = 1.0
    label: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.points)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    @property
    def is_probability(self) -> bool:
        return abs(self.total_mass - 1.0) <= 1e-12

    @property
    def is_1d_line(self) -> bool:
        return self.kind in ("interval", "ou")

    def distance(self, i: int, j: int) -> float:
        return float(self.distance_matrix[i, j])

    @cached_property
    def distance_matrix(self) -> np.ndarray:
        if self.custom_distance is not None:
            return self.custom_distance
        diff = np.abs(self.points[:, None] - self.points[None, :])
        if self.kind == "circle":
            diff = np.minimum(diff, self.length - diff)
        diff.setflags(write=False)
        return diff

    def neighbors(self, i: int) -> np.ndarray:
        n = self.N
        if self.rates is not None:
            nb = np.flatnonzero(self.rates[i] > 0)
            return nb[nb != i]
        if self.kind == "circle":
            return np.array(sorted({(i - 1) % n, (i + 1) % n} - {i}))
        return np.array([j for j in (i - 1, i + 1) if 0 <= j < n])

    def nearest_index(self, x: float) -> int:
        if self.kind == "circle":
            d = np.abs(self.points - x) % self.length
            d = np.minimum(d, self.length - d)
            return int(np.argmin(d))
        return int(np.argmin(np.abs(self.points - x)))

    def bracket(self, x: float) -> tuple[int, int, float]:
        """Nodes ``(k, l)`` and weight ``w`` with ``x = (1-w) x_k + w x_l``."""
        if self.kind == "circle":
            u = ((x - self.points[0]) % self.length) / self.h
            k = int(math.floor(u)) % self.N
            return k, (k + 1) % self.N, u - math.floor(u)
        if not self.is_1d_line:
            raise ParameterError("bracket is only defined on grid models")
        u = (x - self.points[0]) / self.h
        u = min(max(u, 0.0), self.N - 1.0)
        k = min(int(math.floor(u)), self.N - 2)
        return k, k + 1, u - k


@dataclass(frozen=True)
class Curve:
    """Constant-speed shortest path between two nodes of a grid model."""

    space: ModelSpace
    x: int
    y: int

    @property
    def speed(self) -> float:
        return self.space.distance(self.x, self.y)

    def position(self, u: float) -> float:
        a, b = self.space.points[self.x], self.space.points[self.y]
        if self.space.kind == "circle":
            L = self.space.length
            delta = (b - a + L / 2) % L - L / 2
            return (a + u * delta) % L
        return a + u * (b - a)


def _potential_poly(potential):
    if potential is None:
        potential = "flat"
    if isinstance(potential, str):
        try:
            coeffs = POTENTIAL_PRESETS[potential]
        except KeyError:
            raise ParameterError(
                f"unknown potential preset {potential!r}; "
                f"known: {sorted(POTENTIAL_PRESETS)}"
            ) from None
    else:
        coeffs = tuple(float(c) for c in potential)
    return np.polynomial.Polynomial(coeffs)


def _second_derivative(V, x):
    # three-point stencil on a non-uniform grid; end values copy their neighbour
    hl, hr = np.diff(x)[:-1], np.diff(x)[1:]
    inner = 2 * (hr * V[:-2] - (hl + hr) * V[1:-1] + hl * V[2:]) / (hl * hr * (hl + hr))
    return np.concatenate([inner[:1], inner, inner[-1:]])


def _trapezoid(n):
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def build_model(spec: ModelSpec | Mapping | str) -> ModelSpace:
    """Construct a :class:`ModelSpace` from a :class:`ModelSpec`, a mapping or a preset name.

    Grid weights are ``exp(-V(x_i)) h`` with trapezoidal halves at the ends of
    an interval; edge densities are ``exp(-V)`` at the edge midpoints.
    ``K_target`` is the minimum of ``V''`` over the grid.
    """
    if isinstance(spec, str):
        spec = preset_spec(spec)
    elif not isinstance(spec, ModelSpec):
        spec = ModelSpec.from_mapping(spec)
    if spec.kind not in KINDS:
        raise ParameterError(f"unknown model kind {spec.kind!r}")
    if spec.kind == "custom":
        return _build_custom(spec)

    N = int(spec.N)
    if N < 3:
        raise ParameterError(f"need N >= 3 grid points, got {N}")

    if spec.kind == "circle":
        a, b = spec.domain or (0.0, 2 * math.pi)
        length = b - a
        h = length / N
        x = a + h * np.arange(N)
        poly = _potential_poly(spec.potential)
        if poly.degree() > 0 and np.any(poly.coef[1:] != 0):
            raise ParameterError("circle models carry a flat potential only")
        w = np.full(N, 1.0 / N)
        edge = np.full(N, 1.0 / length)
        return ModelSpace(
            kind="circle", points=_frozen(x), h=h, weights=_frozen(w),
            K_target=0.0, boundary="periodic", base_point=0,
            potential=_frozen(np.zeros(N)), edge_density=_frozen(edge),
            length=length, label=spec.label(),
        )

    if spec.kind == "ou":
        a, b = spec.domain or (-5.0, 5.0)
        poly = _potential_poly("quadratic")
    else:
        if spec.domain is None:
            raise ParameterError("interval models need finite domain bounds")
        a, b = spec.domain
        poly = _potential_poly(spec.potential)
    if not (math.isfinite(a) and math.isfinite(b) and b > a):
        raise ParameterError(f"invalid domain ({a}, {b})")

    x = np.linspace(a, b, N)
    h = (b - a) / (N - 1)
    V = poly(x)
    V_mid = poly(0.5 * (x[1:] + x[:-1]))
    if not (np.all(np.isfinite(V)) and np.all(np.isfinite(V_mid))):
        raise ConstructionError("potential is not finite on the grid")
    K_target = float(np.min(poly.deriv(2)(x)))
    shift = float(np.min(V))
    dens = np.exp(-(V - shift))
    dens_mid = np.exp(-(V_mid - shift))

    deficit = 0.0
    if spec.kind == "ou":
        # exact Gaussian normalisation; mass outside the domain is the deficit
        Z = math.sqrt(2 * math.pi) * math.exp(-shift)
        deficit = 1.0 - 0.5 * (math.erf(b / math.sqrt(2)) - math.erf(a / math.sqrt(2)))
    else:
        Z = float(np.sum(dens * _trapezoid(N)) * h)
    w = dens * _trapezoid(N) * h / Z
    raw_mass = float(w.sum())
    edge = dens_mid / Z
    if spec.normalize:
        w = w / raw_mass
        edge = edge / raw_mass
    if np.any(w <= 0):
        raise ConstructionError("nonpositive weight (potential too large)")
    return ModelSpace(
        kind=spec.kind, points=_frozen(x), h=h, weights=_frozen(w),
        K_target=K_target, boundary="neumann",
        base_point=int(np.argmin(np.abs(x))), potential=_frozen(V),
        edge_density=_frozen(edge), truncation_deficit=deficit,
        raw_mass=raw_mass, label=spec.label(),
    )


def _build_custom(spec: ModelSpec) -> ModelSpace:
    if spec.points is None:
        raise ParameterError("custom models need explicit points")
    x = np.asarray(spec.points, dtype=float)
    N = len(x)
    if N < 2:
        raise ParameterError("custom models need at least two points")
    if np.any(np.diff(x) <= 0):
        raise ConstructionError("points must be strictly increasing")
    h = float(np.mean(np.diff(x)))
    if spec.weights is not None:
        w = np.asarray(spec.weights, dtype=float)
        V = -np.log(w)
    elif spec.potential_samples is not None:
        V = np.asarray(spec.potential_samples, dtype=float)
        if not np.all(np.isfinite(V)):
            raise ConstructionError("potential samples are not finite")
        w = np.exp(-(V - V.min())) * _trapezoid(N) * h
    else:
        raise ParameterError("custom models need weights or potential samples")
    if len(w) != N or np.any(~np.isfinite(w)) or np.any(w <= 0):
        raise ConstructionError("custom weights must be positive and finite")
    if spec.normalize:
        w = w / w.sum()

    dist = None
    if spec.distance is not None:
        dist = np.asarray(spec.distance, dtype=float)
        if dist.shape != (N, N):
            raise ConstructionError("distance matrix has the wrong shape")

    rates = edge = None
    if spec.rates is not None:
        rates = np.array(spec.rates, dtype=float)
        if rates.shape != (N, N):
            raise ConstructionError("rate matrix has the wrong shape")
        np.fill_diagonal(rates, 0.0)
        rates.setflags(write=False)
    else:
        # nearest-neighbour stencil; V interpolated linearly to the midpoint,
        # i.e. the edge density is the geometric mean of the node densities
        node_dens = w / h if spec.weights is not None else w / (_trapezoid(N) * h)
        edge = np.sqrt(node_dens[1:] * node_dens[:-1])
    Vpp = _second_derivative(V, x) if N >= 3 else np.zeros(N)
    return ModelSpace(
        kind="custom", points=_frozen(x), h=h, weights=_frozen(w),
        K_target=float(np.min(Vpp)), boundary="none", base_point=0,
        potential=_frozen(V),
        edge_density=None if edge is None else _frozen(edge),
        rates=rates,
        custom_distance=None if dist is None else _frozen(dist),
        label=spec.label(),
    )


def preset_spec(name: str) -> ModelSpec:
    """Named model presets usable from configuration files."""
    presets = {
        "ou": ModelSpec(kind="ou", N=201, name="ou"),
        "ou401": ModelSpec(kind="ou", N=401, name="ou401"),
        "circle": ModelSpec(kind="circle", N=64, name="circle"),
        "interval:quartic": ModelSpec(
            kind="interval", N=101, domain=(-2.0, 2.0), potential="quartic",
            name="interval:quartic",
        ),
        "interval:flat": ModelSpec(
            kind="interval", N=101, domain=(0.0, 1.0), potential="flat",
            name="interval:flat",
        ),
        "two-point": ModelSpec(
            kind="custom", points=(0.0, 1.0), weights=(0.5, 0.5),
            rates=((0.0, 1.0), (1.0, 0.0)), name="two-point",
        ),
    }
    try:
        return presets[name]
    except KeyError:
        raise ParameterError(
            f"unknown model preset {name!r}; known: {sorted(presets)}"
        ) from None


def local_slope(space: ModelSpace, f, i: int) -> float:
    """Nearest-neighbour surrogate of the metric slope ``|Df|(x_i)``."""
    f = np.asarray(getattr(f, "values", f), dtype=float)
    nb = space.neighbors(i)
    if len(nb) == 0:
        raise DegenerateInputError(f"point {i} has no neighbours; slope undefined")
    d = space.distance_matrix[i, nb]
    return float(np.max(np.abs(f[nb] - f[i]) / d))


def intrinsic_metric(space: ModelSpace, gen, i: int, j: int) -> float:
    """Intrinsic distance ``sup{psi_i - psi_j : Gamma(psi) <= 1}``.

    Solved as a second-order cone program; the optimiser is rescaled onto
    the constraint set so the returned value is always attained by a
    feasible ``psi``.
    """
    import cvxpy as cp

    if i == j:
        return 0.0
    i, j = min(i, j), max(i, j)
    L = np.asarray(gen.L)
    n = L.shape[0]
    rows, cols = np.nonzero(np.triu(L + L.T, k=1) > 0)
    E = len(rows)
    D = np.zeros((E, n))
    D[np.arange(E), rows] = -1.0
    D[np.arange(E), cols] = 1.0
    A = np.zeros((n, E))
    A[rows, np.arange(E)] = 0.5 * L[rows, cols]
    A[cols, np.arange(E)] = 0.5 * L[cols, rows]

    psi = cp.Variable(n)
    cons = [A @ cp.square(D @ psi) <= 1.0, psi[j] == 0.0]
    prob = cp.Problem(cp.Maximize(psi[i] - psi[j]), cons)
    try:
        with warnings.catch_warnings():
            # accuracy is handled below by rescaling onto the feasible set
            warnings.simplefilter("ignore", UserWarning)
            prob.solve(solver=cp.CLARABEL, tol_feas=1e-10, tol_gap_abs=1e-10,
                       tol_gap_rel=1e-10)
    except cp.SolverError as exc:
        raise SolverError(f"intrinsic metric solve failed: {exc}") from exc
    if psi.value is None:
        raise SolverError(f"intrinsic metric solver status {prob.status}")
    v = np.asarray(psi.value)
    gamma_max = float(np.max(A @ (D @ v) ** 2))
    if gamma_max > 1.0:
        v = v / math.sqrt(gamma_max)
    value = float(v[i] - v[j])
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise SolverError(f"solver status {prob.status}", best_value=max(value, 0.0))
    return max(value, 0.0)
