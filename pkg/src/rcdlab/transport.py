"""Exact optimal transport, relative entropy and 1D displacement geodesics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize, sparse
from scipy.special import xlogy

from .errors import ParameterError, SolverError, UnsupportedSpaceError
from .space import ModelSpace

MASS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DensityMeasure:
    """Probability measure ``rho mu`` stored through its density ``rho``."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.shape != w.shape:
            raise ParameterError("density and weights differ in length")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ParameterError("density must be finite and nonnegative")
        mass = float(np.dot(v, w))
        if abs(mass - 1.0) > MASS_TOL:
            raise ParameterError(f"density has mass {mass!r}, expected 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    @property
    def masses(self) -> np.ndarray:
        return self.values * self.weights

    @classmethod
    def normalized(cls, rho, weights) -> "DensityMeasure":
        rho = np.asarray(rho, dtype=float)
        return cls(rho / float(np.dot(rho, weights)), weights)

    @classmethod
    def from_masses(cls, m, weights) -> "DensityMeasure":
        m = np.asarray(m, dtype=float)
        w = np.asarray(weights, dtype=float)
        return cls(m / (w * m.sum()), w)

    @classmethod
    def dirac(cls, space: ModelSpace, i: int) -> "DensityMeasure":
        rho = np.zeros(space.N)
        rho[i] = 1.0 / space.weights[i]
        return cls(rho, space.weights)

    @classmethod
    def reference(cls, space: ModelSpace) -> "DensityMeasure":
        return cls.normalized(np.ones(space.N), space.weights)


@dataclass(frozen=True, eq=False)
class Coupling:
    plan: np.ndarray
    source: DensityMeasure
    target: DensityMeasure

    @property
    def residual(self) -> float:
        r1 = np.max(np.abs(self.plan.sum(axis=1) - self.source.masses))
        r2 = np.max(np.abs(self.plan.sum(axis=0) - self.target.masses))
        return float(max(r1, r2))


class WassersteinResult(NamedTuple):
    value: float
    coupling: Coupling

    @property
    def residual(self) -> float:
        return self.coupling.residual


def monotone_plan(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """North-west corner plan between masses on the same sorted 1D grid."""
    n, m = len(a), len(b)
    plan = np.zeros((n, m))
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    i = j = 0
    while i < n and j < m:
        t = min(ra[i], rb[j])
        plan[i, j] += t
        ra[i] -= t
        rb[j] -= t
        if ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    return plan


def _lp_plan(a, b, cost):
    n, m = len(a), len(b)
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A = sparse.vstack([rows, cols]).tocsr()
    res = optimize.linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([a, b]),
                           bounds=(0, None), method="highs",
                           options={"primal_feasibility_tolerance": 1e-10,
                                    "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise SolverError(f"transport LP failed: {res.message}")
    return np.maximum(res.x.reshape(n, m), 0.0)


def wasserstein(space: ModelSpace, rho1: DensityMeasure, rho2: DensityMeasure,
                order: int = 2, method: str = "auto") -> WassersteinResult:
    """``W_order`` between two densities with an optimal coupling.

    ``method="auto"`` uses the monotone coupling on line models (optimal for
    convex costs) and the exact LP elsewhere; ``"lp"`` forces the LP.
    """
    if order not in (1, 2):
        raise ParameterError(f"order must be 1 or 2, got {order}")
    a, b = rho1.masses, rho2.masses
    if len(a) != space.N or len(b) != space.N:
        raise ParameterError("densities do not live on this space")
    if abs(a.sum() - b.sum()) > 1e-9:
        raise ParameterError(f"marginal masses differ: {a.sum()} vs {b.sum()}")
    cost = space.distance_matrix ** order
    if method == "auto" and space.is_1d_line:
        plan = monotone_plan(a, b)
    elif method in ("auto", "lp"):
        plan = _lp_plan(a, b * (a.sum() / b.sum()), cost)
    else:
        raise ParameterError(f"unknown method {method!r}")
    total = float(np.sum(plan * cost))
    return WassersteinResult(max(total, 0.0) ** (1.0 / order), Coupling(plan, rho1, rho2))


def relative_entropy(space: ModelSpace, rho: DensityMeasure) -> float:
    """``sum rho_i log rho_i mu_i`` with ``0 log 0 = 0``."""
    r = np.asarray(getattr(rho, "values", rho), dtype=float)
    return float(np.dot(xlogy(r, r), space.weights))


def deposit(space: ModelSpace, positions: np.ndarray, masses: np.ndarray) -> np.ndarray:
    """Split point masses linearly onto the two bracketing grid nodes."""
    u = (np.asarray(positions) - space.points[0]) / space.h
    u = np.clip(u, 0.0, space.N - 1.0)
    k = np.minimum(np.floor(u).astype(int), space.N - 2)
    w = u - k
    out = np.zeros(space.N)
    np.add.at(out, k, masses * (1.0 - w))
    np.add.at(out, k + 1, masses * w)
    return out


def displacement_geodesic_1d(space: ModelSpace, rho0: DensityMeasure, rho1: DensityMeasure,
                             steps: int) -> list[DensityMeasure]:
    """Quantile interpolation ``(1-t) Q_0 + t Q_1`` sampled at ``steps`` times.

    Each atom of the monotone coupling travels on a straight line and is
    redeposited on the grid by linear mass splitting, which keeps the mean
    exact; the endpoints reproduce the inputs.
    """
    if not space.is_1d_line:
        raise UnsupportedSpaceError(
            f"displacement interpolation needs a line model, got {space.kind!r}")
    if steps < 2:
        raise ParameterError(f"need at least two steps, got {steps}")
    plan = monotone_plan(rho0.masses, rho1.masses)
    ii, jj = np.nonzero(plan > 0)
    m = plan[ii, jj]
    x = np.asarray(space.points)
    path = []
    for k in range(steps):
        t = k / (steps - 1)
        if k == 0:
            path.append(rho0)
        elif k == steps - 1:
            path.append(rho1)
        else:
            masses = deposit(space, (1 - t) * x[ii] + t * x[jj], m)
            path.append(DensityMeasure.from_masses(masses, space.weights))
    return path


def gaussian_density(space: ModelSpace, mean: float, var: float = 1.0) -> DensityMeasure:
    """Grid density of N(mean, var) relative to the model weights."""
    x = np.asarray(space.points)
    if space.kind == "ou":
        # ratio of Gaussian densities, exact on the grid up to normalisation
        log_rho = -0.5 * (x - mean) ** 2 / var + 0.5 * x**2 - 0.5 * math.log(var)
    else:
        log_rho = -0.5 * (x - mean) ** 2 / var + np.asarray(space.potential)
    rho = np.exp(log_rho - np.max(log_rho))
    return DensityMeasure.normalized(rho, space.weights)
