"""Numerical trace of the interpolation argument behind the Harnack inequality.

For a curve ``gamma`` from ``x`` to ``y`` and the schedule
``alpha(s) = (e^{2Ks} - 1) / (e^{2Kt} - 1)`` the functional

    G(r, s) = -log P_s[theta(P_{t-s} f)](gamma(alpha(r))),  theta(v) = (v + eps)^p

satisfies ``d/ds G(s, s) <= p e^{-2Ks} |gamma'|^2 alpha'(s)^2 / (4 (p-1))``;
integrating over ``(0, t)`` gives the Harnack exponent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate

from . import ou
from .errors import NumericError, ParameterError, UnsupportedSpaceError
from .inequalities import (
    SMALL_KT,
    TOLERANCES,
    CheckReport,
    curvature_factor,
    harnack_constant,
)
from .model import Model
from .operator import GridFunction, carre_du_champ, values
from .space import Curve

DEFAULT_EPS = 1e-3
FD_REL_STEP = 1e-4
ORACLE_FD_TOL = 1e-6


def alpha_schedule(K: float, t: float, s: float) -> tuple[float, float]:
    """``(alpha(s), alpha'(s))``; the limit ``(s/t, 1/t)`` is used for ``|K| t <= 1e-8``."""
    if not t > 0:
        raise ParameterError(f"horizon must be positive, got {t}")
    if not 0.0 <= s <= t:
        raise ParameterError(f"s={s} lies outside [0, {t}]")
    if abs(K) * t <= SMALL_KT:
        return s / t, 1.0 / t
    den = math.expm1(2 * K * t)
    return math.expm1(2 * K * s) / den, 2 * K * math.exp(2 * K * s) / den


@dataclass(frozen=True, eq=False)
class ReplayContext:
    """Immutable inputs of one replay.

    ``K=None`` uses the estimated constant of the model. ``oracle=True``
    (OU model, exponential ``f`` only) evaluates everything with Mehler's
    formula; there ``eps = 0`` is allowed and gives exact closed forms.
    """

    model: Model
    f: GridFunction
    p: float
    t: float
    curve: Curve
    eps: float = DEFAULT_EPS
    K: float | None = None
    oracle: bool = False

    def __post_init__(self):
        if not self.t > 0:
            raise ParameterError(f"horizon must be positive, got {self.t}")
        if not (self.p > 1 and math.isfinite(self.p)):
            raise ParameterError(f"replay needs a finite p > 1, got {self.p}")
        if np.any(values(self.f) < 0):
            raise ParameterError("replay needs f >= 0")
        if self.oracle:
            tag = getattr(self.f, "tag", None)
            if self.model.space.kind != "ou" or not tag or tag[0] != "exponential":
                raise UnsupportedSpaceError("oracle replay needs the OU model and f = exp(lam x)")
            if not 0 <= self.eps <= 1:
                raise ParameterError(f"eps must lie in [0, 1], got {self.eps}")
        elif not 0 < self.eps <= 1:
            raise ParameterError(f"eps must lie in (0, 1], got {self.eps}")
        if self.K is None:
            object.__setattr__(self, "K", self.model.K_hat)

    @property
    def speed(self) -> float:
        return self.curve.speed

    def point(self, r: float) -> float:
        return self.curve.position(alpha_schedule(self.K, self.t, r)[0])


def _check_s(ctx, s):
    if not 0.0 <= s <= ctx.t:
        raise ParameterError(f"s={s} lies outside [0, {ctx.t}]")


def _stencil(ctx, z):
    """Nodes and weights interpolating a grid function at coordinate ``z``.

    Grid models use cubic Lagrange weights on the four surrounding nodes
    (linear next to a boundary); other models snap to the nearest node.
    """
    sp = ctx.model.space
    if not (sp.is_1d_line or sp.kind == "circle"):
        return np.array([sp.nearest_index(z)]), np.ones(1)
    k, l, w = sp.bracket(z)
    if sp.kind == "circle":
        idx = np.array([k - 1, k, k + 1, k + 2]) % sp.N
    elif k >= 1 and l + 1 <= sp.N - 1:
        idx = np.array([k - 1, k, l, l + 1])
    else:
        return np.array([k, l]), np.array([1.0 - w, w])
    coef = np.array([
        -w * (w - 1) * (w - 2) / 6,
        (w + 1) * (w - 1) * (w - 2) / 2,
        -(w + 1) * w * (w - 2) / 2,
        (w + 1) * w * (w - 1) / 6,
    ])
    return idx, coef


def _scaled_theta(ctx, u):
    """``theta(u) e^{-m}`` and ``m``, kept in range for large ``p``."""
    logt = ctx.p * np.log(u + ctx.eps)
    m = float(np.max(logt))
    return np.exp(logt - m), m


def _grid_u(ctx, s):
    u = ctx.model.spectral.evolve(ctx.f, ctx.t - s)
    # P_{t-s} f >= 0; clip eigen-expansion roundoff
    return np.maximum(u, 0.0)


def _oracle_exponential(ctx, s, z):
    """Return ``(G, dG/ds)`` at point ``z`` from Mehler's formula."""
    lam = ctx.f.tag[1]
    p, t, eps = ctx.p, ctx.t, ctx.eps
    a = lam * math.exp(-(t - s))
    b = 0.5 * lam * lam * -math.expm1(-2 * (t - s))
    if eps == 0:
        g = -(p * b + ou.log_semigroup_exponential(p * a, s, z))
        return g, -p * (p - 1) * a * a
    # u(w) = exp(a w + b), Gamma(u) = (a u)^2
    def theta(w):
        return (np.exp(a * w + b) + eps) ** p

    def theta2_gamma(w):
        u = np.exp(a * w + b)
        return p * (p - 1) * (u + eps) ** (p - 2) * (a * u) ** 2

    if s == 0:
        num, den = float(theta2_gamma(np.float64(z))), float(theta(np.float64(z)))
    else:
        num = float(ou.semigroup(theta2_gamma, s, z))
        den = float(ou.semigroup(theta, s, z))
    return -math.log(den), -num / den


def g_value(ctx: ReplayContext, r: float, s: float) -> float:
    """``G(r, s)``; ``s`` may sit at the endpoints (one-sided limits)."""
    _check_s(ctx, s)
    z = ctx.point(r)
    if ctx.oracle:
        return _oracle_exponential(ctx, s, z)[0]
    th, m = _scaled_theta(ctx, _grid_u(ctx, s))
    idx, coef = _stencil(ctx, z)
    vals = ctx.model.spectral.evolve(th, s)[idx]
    if not np.all(vals > 0):
        raise NumericError(f"nonpositive integrand at r={r}, s={s}")
    # interpolate log P_s theta, exact for exponential profiles
    return -(float(np.dot(coef, np.log(vals))) + m)


def g_partial_s(ctx: ReplayContext, r: float, s: float) -> float:
    """``-P_s[theta''(u) Gamma(u)] / P_s[theta(u)]`` at ``gamma(alpha(r))``, ``u = P_{t-s} f``."""
    _check_s(ctx, s)
    z = ctx.point(r)
    if ctx.oracle:
        return _oracle_exponential(ctx, s, z)[1]
    u = _grid_u(ctx, s)
    th, m = _scaled_theta(ctx, u)
    p, eps = ctx.p, ctx.eps
    th2 = p * (p - 1) * th / (u + eps) ** 2
    gam = carre_du_champ(ctx.model.gen, u)
    spec = ctx.model.spectral
    idx, coef = _stencil(ctx, z)
    num = spec.evolve(th2 * gam, s)[idx]
    den = spec.evolve(th, s)[idx]
    return -float(np.dot(coef, num / den))


def _fd_step(ctx, step):
    h = FD_REL_STEP * ctx.t if step is None else float(step)
    if not h > 1e-12 * max(1.0, ctx.t):
        raise ParameterError(f"finite-difference step {h!r} underflows")
    return h


def g_partial_s_fd(ctx: ReplayContext, r: float, s: float, step: float | None = None) -> float:
    """Centered difference of ``g_value`` in ``s``."""
    h = _fd_step(ctx, step)
    if s - h < 0 or s + h > ctx.t:
        raise ParameterError(f"stencil around s={s} leaves [0, {ctx.t}]")
    return (g_value(ctx, r, s + h) - g_value(ctx, r, s - h)) / (2 * h)


def diagonal_derivative(ctx: ReplayContext, s: float, step: float | None = None) -> float:
    """Centered difference of ``s -> G(s, s)``."""
    h = _fd_step(ctx, step)
    if s - h < 0 or s + h > ctx.t:
        raise ParameterError(f"stencil around s={s} leaves [0, {ctx.t}]")
    return (g_value(ctx, s + h, s + h) - g_value(ctx, s - h, s - h)) / (2 * h)


def derivative_bound(ctx: ReplayContext, s: float) -> float:
    """``p e^{-2Ks} |gamma'|^2 alpha'(s)^2 / (4 (p-1))``."""
    _, da = alpha_schedule(ctx.K, ctx.t, s)
    return ctx.p * math.exp(-2 * ctx.K * s) * ctx.speed**2 * da * da / (4 * (ctx.p - 1))


def i2_surrogate(ctx: ReplayContext, s: float) -> float:
    """``e^{-Ks} |gamma'| |alpha'| P_s[theta'(u) sqrt Gamma(u)] / P_s theta(u)`` on the grid."""
    if ctx.oracle:
        lam = ctx.f.tag[1]
        a = lam * math.exp(-(ctx.t - s))
        # theta'(u) |u'| / theta(u) = p |a| for eps = 0; sample the grid otherwise
        if ctx.eps == 0:
            _, da = alpha_schedule(ctx.K, ctx.t, s)
            return math.exp(-ctx.K * s) * ctx.speed * abs(da) * ctx.p * abs(a)
    u = _grid_u(ctx, s)
    th, _ = _scaled_theta(ctx, u)
    th1 = ctx.p * th / (u + ctx.eps)
    gam = np.maximum(carre_du_champ(ctx.model.gen, u), 0.0)
    spec = ctx.model.spectral
    idx, coef = _stencil(ctx, ctx.point(s))
    ratio = float(np.dot(coef, spec.evolve(th1 * np.sqrt(gam), s)[idx] / spec.evolve(th, s)[idx]))
    _, da = alpha_schedule(ctx.K, ctx.t, s)
    return math.exp(-ctx.K * s) * ctx.speed * abs(da) * ratio


def sample_times(t: float, samples: int) -> np.ndarray:
    return t * np.arange(1, samples + 1) / (samples + 1)


def _tolerance(ctx):
    if ctx.oracle:
        # second-order error of the centered difference
        return ORACLE_FD_TOL
    sp = ctx.model.space
    return TOLERANCES["replay"].resolve(sp.h, sp.truncation_deficit)


def _require_grid(ctx):
    sp = ctx.model.space
    if not (sp.is_1d_line or sp.kind == "circle"):
        raise UnsupportedSpaceError("diagonal replay needs a grid model with interpolation")


class TraceRow(NamedTuple):
    s: float
    G: float
    dG: float
    bound: float
    I1: float
    I2: float


def replay_trace(ctx: ReplayContext, samples: int = 9, step: float | None = None) -> list[TraceRow]:
    """Rows ``(s, G(s,s), d/ds G(s,s), bound, I1, I2 surrogate)`` at interior samples."""
    if samples < 3:
        raise ParameterError(f"need at least 3 samples, got {samples}")
    if not ctx.oracle:
        _require_grid(ctx)
    rows = []
    for s in sample_times(ctx.t, samples):
        s = float(s)
        rows.append(TraceRow(s, g_value(ctx, s, s), diagonal_derivative(ctx, s, step),
                             derivative_bound(ctx, s), g_partial_s(ctx, s, s), i2_surrogate(ctx, s)))
    return rows


def write_trace_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TraceRow._fields)
        for row in rows:
            w.writerow([f"{v:.17g}" for v in row])


def _params(ctx):
    sp = ctx.model.space
    return dict(t=ctx.t, p=ctx.p, eps=ctx.eps, K=ctx.K,
                x=float(sp.points[ctx.curve.x]), y=float(sp.points[ctx.curve.y]))


def derivative_bound_replay(ctx: ReplayContext, samples: int = 9,
                            step: float | None = None) -> CheckReport:
    """``d/ds G(s,s) <= bound(s)`` at interior samples; the report carries the
    worst sample with ``lhs = -bound`` and ``rhs = -d/ds G(s,s)``."""
    rows = replay_trace(ctx, samples, step)
    slacks = [r.bound - r.dG for r in rows]
    k = int(np.argmin(slacks))
    worst = rows[k]
    sp = ctx.model.space
    return CheckReport(
        "replay_derivative", sp.label, _params(ctx), -worst.bound, -worst.dG, _tolerance(ctx),
        metadata={"N": sp.N, "h": sp.h, "truncation_deficit": sp.truncation_deficit,
                  "worst_s": worst.s, "slacks": slacks,
                  "I1_plus_I2_minus_dG": [r.I1 + r.I2 - r.dG for r in rows],
                  "oracle": ctx.oracle},
        note=f"worst s={worst.s:.6g}",
    )


def fundamental_theorem_check(ctx: ReplayContext) -> CheckReport:
    """``G(t,t) - G(0,0) <= p K |gamma'|^2 / (2 (p-1) (e^{2Kt} - 1))``."""
    sp = ctx.model.space
    lhs = g_value(ctx, ctx.t, ctx.t) - g_value(ctx, 0.0, 0.0)
    rhs = harnack_constant(ctx.K, ctx.p, ctx.t, ctx.speed)
    return CheckReport(
        "replay_integrated", sp.label, _params(ctx), lhs, rhs, _tolerance(ctx),
        metadata={"N": sp.N, "h": sp.h, "truncation_deficit": sp.truncation_deficit,
                  "oracle": ctx.oracle},
    )


def alpha_energy(K: float, t: float) -> float:
    """``int_0^t e^{-2Ks} alpha'(s)^2 ds`` by adaptive quadrature."""
    def integrand(s):
        return math.exp(-2 * K * s) * alpha_schedule(K, t, min(s, t))[1] ** 2

    val, _ = integrate.quad(integrand, 0.0, t, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val


def alpha_energy_exact(K: float, t: float) -> float:
    return 2.0 * curvature_factor(K, t)


def integrated_constant_identity(K: float, t: float, p: float, d: float) -> float:
    """``|int_0^t p e^{-2Ks} alpha'^2 d^2 / (4 (p-1)) ds - harnack_constant(K, p, t, d)|``."""
    if not p > 1:
        raise ParameterError(f"need p > 1, got {p}")
    lhs = p * d * d / (4 * (p - 1)) * alpha_energy(K, t)
    return abs(lhs - harnack_constant(K, p, t, d))


def partial_s_check(ctx: ReplayContext, r: float, s: float, step: float | None = None) -> CheckReport:
    """Formula for ``dG/ds`` against the centered difference of ``g_value``.

    ``lhs`` is the absolute discrepancy; the tolerance is
    ``max(1e-6, 1e-3 |formula|)``.
    """
    sp = ctx.model.space
    a = g_partial_s(ctx, r, s)
    b = g_partial_s_fd(ctx, r, s, step)
    params = _params(ctx)
    params["s"] = s
    return CheckReport("replay_partial", sp.label, params, abs(a - b), 0.0,
                       max(1e-6, 1e-3 * abs(a)),
                       metadata={"N": sp.N, "h": sp.h, "truncation_deficit": sp.truncation_deficit,
                                 "formula": a, "finite_difference": b, "r": r},
                       note=f"s={s:.6g}")
