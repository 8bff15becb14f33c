"""Closed forms for the Ornstein-Uhlenbeck semigroup ``Lf = f'' - x f'``.

The invariant measure is the standard Gaussian. These are the exact
references every grid computation is certified against.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np

from .errors import ParameterError


class MomentResult(NamedTuple):
    value: float
    divergent: bool


class Gaussian(NamedTuple):
    mean: float
    var: float


def _check_time(t):
    if not t > 0:
        raise ParameterError(f"time must be positive, got {t}")


def semigroup_exponential(lam: float, t: float, x: float) -> float:
    """``P_t e^{lam .}(x) = exp(lam e^{-t} x + lam^2 (1 - e^{-2t}) / 2)``."""
    _check_time(t)
    return math.exp(log_semigroup_exponential(lam, t, x))


def log_semigroup_exponential(lam: float, t: float, x: float) -> float:
    return lam * math.exp(-t) * x + 0.5 * lam * lam * -math.expm1(-2 * t)


def kernel(t: float, x: float, y: float) -> float:
    """Mehler kernel, density of ``h_t delta_x`` with respect to N(0, 1)."""
    _check_time(t)
    s = -math.expm1(-2 * t)
    e1, e2 = math.exp(-t), math.exp(-2 * t)
    return math.exp(-(e2 * (x * x + y * y) - 2 * e1 * x * y) / (2 * s)) / math.sqrt(s)


def flow_of_gaussian(m: float, v: float, t: float) -> Gaussian:
    """Heat flow of N(m, v): N(m e^{-t}, 1 + (v - 1) e^{-2t})."""
    if not v > 0:
        raise ParameterError(f"variance must be positive, got {v}")
    if t < 0:
        raise ParameterError(f"time must be nonnegative, got {t}")
    return Gaussian(m * math.exp(-t), 1.0 + (v - 1.0) * math.exp(-2 * t))


def exponential_moment(lam: float, o: float = 0.0) -> MomentResult:
    """``int exp(lam (x - o)^2) dN(0,1)``; finite iff ``lam < 1/2``."""
    if lam >= 0.5:
        return MomentResult(math.inf, True)
    a = 1.0 - 2.0 * lam
    return MomentResult(math.exp(lam * o * o / a) / math.sqrt(a), False)


_GH_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_hermite(n):
    if n not in _GH_CACHE:
        z, w = np.polynomial.hermite_e.hermegauss(n)
        _GH_CACHE[n] = (z, w / math.sqrt(2 * math.pi))
    return _GH_CACHE[n]


def semigroup(g: Callable[[np.ndarray], np.ndarray], t: float, x, nodes: int = 160):
    """Mehler formula ``E g(e^{-t} x + sqrt(1 - e^{-2t}) Z)`` by Gauss-Hermite."""
    if t < 0:
        raise ParameterError(f"time must be nonnegative, got {t}")
    x = np.asarray(x, dtype=float)
    if t == 0:
        return g(x)
    z, w = _gauss_hermite(nodes)
    arg = math.exp(-t) * x[..., None] + math.sqrt(-math.expm1(-2 * t)) * z
    return np.sum(g(arg) * w, axis=-1)


def lsi_ratio_exponential(a: float, nodes: int = 160) -> float:
    """``Ent(f^2) / E(f, f)`` for ``f = e^{a x}`` under N(0, 1), by Gauss-Hermite.

    Every nonzero ``a`` attains the optimal constant 2.
    """
    if a == 0:
        raise ParameterError("the ratio is undefined for constant f")
    z, w = _gauss_hermite(nodes)
    f2 = np.exp(2 * a * z)
    m = float(np.dot(w, f2))
    ent = float(np.dot(w, f2 * 2 * a * z)) - m * math.log(m)
    energy = float(np.dot(w, a * a * f2))
    return ent / energy


QUERIES = {
    "semigroup_exponential": semigroup_exponential,
    "kernel": kernel,
    "flow_of_gaussian": flow_of_gaussian,
    "exponential_moment": exponential_moment,
    "lsi_ratio_exponential": lsi_ratio_exponential,
}


def ou_closed_form(query: str, **kwargs):
    """Dispatch a named closed-form query (used by the ``oracle`` command)."""
    try:
        fn = QUERIES[query]
    except KeyError:
        raise ParameterError(f"unknown oracle query {query!r}; known: {sorted(QUERIES)}") from None
    return fn(**kwargs)
