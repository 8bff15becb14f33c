"""Markov generators, spectral heat operators and the Gamma calculus.

Everything here works with dense matrices; model sizes stay below a few
thousand points. Grid functions may be passed as plain arrays or as
:class:`GridFunction` instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import linalg, optimize

from .errors import ConstructionError, NumericError, ParameterError
from .space import ModelSpace
from .transport import DensityMeasure

UNDERFLOW = 1e-300


@dataclass(frozen=True)
class GridFunction:
    """Values on the grid, optionally tagged with the analytic function.

    ``tag`` is e.g. ``("exponential", lam)``; ``fn`` evaluates the same
    function at arbitrary coordinates for closed-form cross-checks.
    """

    values: np.ndarray
    tag: tuple | None = None
    fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ParameterError("grid function has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    @classmethod
    def from_callable(cls, space: ModelSpace, fn, tag=None) -> "GridFunction":
        return cls(fn(np.asarray(space.points)), tag=tag, fn=fn)

    @classmethod
    def exponential(cls, space: ModelSpace, lam: float) -> "GridFunction":
        return cls.from_callable(space, lambda x: np.exp(lam * x), ("exponential", lam))

    @classmethod
    def coordinate(cls, space: ModelSpace) -> "GridFunction":
        return cls.from_callable(space, lambda x: np.asarray(x, dtype=float), ("coordinate",))

    @classmethod
    def constant(cls, space: ModelSpace, c: float = 1.0) -> "GridFunction":
        return cls.from_callable(space, lambda x: np.full(np.shape(x), c), ("constant", c))


def values(f) -> np.ndarray:
    return np.asarray(getattr(f, "values", f), dtype=float)


@dataclass(frozen=True, eq=False)
class Generator:
    L: np.ndarray
    weights: np.ndarray

    @property
    def N(self) -> int:
        return self.L.shape[0]

    def __call__(self, f) -> np.ndarray:
        return self.L @ values(f)


def build_generator(space: ModelSpace) -> Generator:
    """Assemble the mu-symmetric three-point (or rate-specified) generator.

    Edge ``(i, k)`` has conductance ``c = edge_density / h``, and
    ``L[i, k] = c / mu_i``; the diagonal closes each row to zero.
    """
    mu = np.asarray(space.weights)
    n = space.N
    L = np.zeros((n, n))
    if space.rates is not None:
        L[:] = space.rates
    else:
        c = np.asarray(space.edge_density) / space.h
        i = np.arange(len(c))
        k = (i + 1) % n
        L[i, k] = c / mu[i]
        L[k, i] = c / mu[k]
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    _validate_generator(L, mu)
    L.setflags(write=False)
    return Generator(L=L, weights=mu)


def _validate_generator(L, mu):
    scale = max(1.0, float(np.max(np.abs(L))))
    off = L - np.diag(np.diag(L))
    if np.any(off < 0):
        i, j = np.argwhere(off < 0)[0]
        raise ConstructionError(f"negative off-diagonal rate L[{i},{j}] = {L[i, j]}")
    rows = np.abs(L.sum(axis=1))
    if np.any(rows > 1e-12 * scale):
        i = int(np.argmax(rows))
        raise ConstructionError(f"row {i} sums to {L[i].sum()}, not zero")
    flux = mu[:, None] * L
    asym = np.abs(flux - flux.T)
    if np.any(asym > 1e-12 * max(1.0, float(np.max(np.abs(flux))))):
        i, j = np.unravel_index(np.argmax(asym), asym.shape)
        raise ConstructionError(f"not mu-symmetric at ({i},{j}): {flux[i, j]} vs {flux[j, i]}")


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """``L = sum_k lambda_k phi_k <phi_k, .>_mu`` with mu-orthonormal ``phi_k``.

    ``sym_vectors`` are the orthonormal eigenvectors of ``M^{1/2} L M^{-1/2}``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sym_vectors: np.ndarray
    weights: np.ndarray

    def evolve(self, f, t: float) -> np.ndarray:
        """Apply ``P_t`` to ``f`` without assembling the kernel."""
        if t < 0:
            raise ParameterError(f"time must be nonnegative, got {t}")
        f = values(f)
        if t == 0:
            return f.copy()
        sq = np.sqrt(self.weights)
        e = np.exp(self.eigenvalues * t)
        U = self.sym_vectors
        return (U @ (e * (U.T @ (sq * f)))) / sq


def spectral_decompose(gen: Generator) -> SpectralDecomposition:
    mu = np.asarray(gen.weights)
    sq = np.sqrt(mu)
    S = sq[:, None] * gen.L / sq[None, :]
    S = 0.5 * (S + S.T)
    try:
        lam, U = linalg.eigh(S)
    except linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    order = np.argsort(-lam, kind="stable")
    lam, U = lam[order], U[:, order]
    lam = np.minimum(lam, 0.0)
    # the stationary mode is known exactly; keep the rest orthogonal to it
    u0 = sq / np.linalg.norm(sq)
    if abs(lam[0]) < 1e-8 * max(1.0, abs(lam[-1])):
        lam[0] = 0.0
        rest = U[:, 1:] - np.outer(u0, u0 @ U[:, 1:])
        rest, _ = np.linalg.qr(rest)
        U = np.column_stack([u0, rest[:, : U.shape[1] - 1]])
    # deterministic sign: first component of magnitude > 1e-8 is positive
    for k in range(U.shape[1]):
        col = U[:, k]
        idx = np.flatnonzero(np.abs(col) > 1e-8 * np.max(np.abs(col)))[0]
        if col[idx] < 0:
            U[:, k] = -col
    phi = U / sq[:, None]
    for a in (lam, phi, U):
        a.setflags(write=False)
    return SpectralDecomposition(eigenvalues=lam, eigenvectors=phi, sym_vectors=U, weights=mu)


@dataclass(frozen=True, eq=False)
class HeatOperator:
    """``(P_t f)_i = sum_j p_t(i, j) f_j mu_j`` with symmetric kernel ``p_t``."""

    t: float
    kernel: np.ndarray
    weights: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.kernel * self.weights[None, :]

    def __call__(self, f) -> np.ndarray:
        return apply(self, f)


def heat_operator(spec: SpectralDecomposition, t: float) -> HeatOperator:
    if t < 0:
        raise ParameterError(f"time must be nonnegative, got {t}")
    mu = spec.weights
    sq = np.sqrt(mu)
    if t == 0:
        K = np.diag(1.0 / mu)
    else:
        e = np.exp(spec.eigenvalues * t)
        keep = e >= UNDERFLOW
        U = spec.sym_vectors[:, keep]
        S = (U * e[keep]) @ U.T
        S = 0.5 * (S + S.T)
        K = S / np.outer(sq, sq)
        # roundoff in the spectral sum can leave tiny negative entries
        np.maximum(K, 0.0, out=K)
    K.setflags(write=False)
    return HeatOperator(t=float(t), kernel=K, weights=mu)


def apply(op: HeatOperator, f) -> np.ndarray:
    f = values(f)
    if f.shape != op.weights.shape:
        raise ParameterError(f"dimension mismatch: {f.shape} vs {op.weights.shape}")
    return op.kernel @ (op.weights * f)


def dual_flow(op: HeatOperator, rho: DensityMeasure) -> DensityMeasure:
    """Density of ``h_t(rho mu)``; equals ``P_t rho`` by kernel symmetry."""
    r = values(rho)
    if r.shape != op.weights.shape:
        raise ParameterError(f"dimension mismatch: {r.shape} vs {op.weights.shape}")
    out = op.kernel.T @ (op.weights * r)
    out = np.maximum(out, 0.0)
    mass = float(np.dot(out, op.weights))
    return DensityMeasure(out / mass, op.weights)


def carre_du_champ(gen: Generator, f, g=None) -> np.ndarray:
    """``Gamma(f, g) = (L(fg) - f Lg - g Lf) / 2``, evaluated edgewise."""
    f = values(f)
    g = f if g is None else values(g)
    df = f[None, :] - f[:, None]
    dg = df if g is f else g[None, :] - g[:, None]
    off = gen.L - np.diag(np.diag(gen.L))
    return 0.5 * np.sum(off * df * dg, axis=1)


def gamma2(gen: Generator, f, g=None, phi=None):
    """Iterated carre du champ.

    With ``phi=None`` returns the pointwise ``Gamma_2(f, g)``; otherwise the
    trilinear value ``(1/2) int (Gamma(f,g) L phi - Gamma(f,Lg) phi - Gamma(Lf,g) phi) dmu``.
    """
    f = values(f)
    g = f if g is None else values(g)
    Lf, Lg = gen.L @ f, gen.L @ g
    gfg = carre_du_champ(gen, f, g)
    if phi is None or (isinstance(phi, str) and phi == "pointwise"):
        return 0.5 * (gen.L @ gfg) - 0.5 * (carre_du_champ(gen, f, Lg) + carre_du_champ(gen, Lf, g))
    phi = values(phi)
    mu = gen.weights
    integrand = gfg * (gen.L @ phi) - (carre_du_champ(gen, f, Lg) + carre_du_champ(gen, Lf, g)) * phi
    return 0.5 * float(np.dot(integrand, mu))


class BEEstimate(NamedTuple):
    value: float
    function_index: int
    point: int


def be_constant(gen: Generator, testset: Sequence) -> BEEstimate:
    """Smallest ratio ``Gamma_2(f)_i / Gamma(f)_i`` over the test functions.

    Points where ``Gamma(f)_i <= 1e-12`` are skipped. The result is an upper
    bound on the best Bakry-Emery constant of the generator.
    """
    if not testset:
        raise ParameterError("empty test set")
    best = BEEstimate(math.inf, -1, -1)
    for k, f in enumerate(testset):
        g = carre_du_champ(gen, f)
        mask = g > 1e-12
        if not np.any(mask):
            continue
        ratio = np.full(len(g), np.inf)
        ratio[mask] = gamma2(gen, f)[mask] / g[mask]
        i = int(np.argmin(ratio))
        if ratio[i] < best.value:
            best = BEEstimate(float(ratio[i]), k, i)
    if best.function_index < 0:
        raise ParameterError("all test functions are constant")
    return best


def dirichlet_form(gen: Generator, f, g=None) -> float:
    return float(np.dot(carre_du_champ(gen, f, g), gen.weights))


def cheeger_energy(gen: Generator, f) -> float:
    return 0.5 * dirichlet_form(gen, f)


class NormResult(NamedTuple):
    value: float
    exact: bool
    converged: bool


def _lq_norm(v, mu, q, axis=None):
    v = np.abs(v)
    if math.isinf(q):
        return np.max(v, axis=axis)
    if axis is None:
        return float(np.dot(mu, v**q) ** (1.0 / q))
    return np.sum(mu * v**q, axis=axis) ** (1.0 / q)


def lp_norm(f, mu, p) -> float:
    return float(_lq_norm(values(f), np.asarray(mu), p))


def _dual(p):
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def operator_norm(op: HeatOperator, p: float, q: float, *, starts=8, seed=0,
                  extra_starts: Sequence | None = None) -> NormResult:
    """``||P_t||_{p->q}`` on ``L^p(mu)``.

    Exact whenever ``p == 1`` or ``q == inf`` (extreme points are point
    masses, respectively duality with ``L^{p'}``) and for ``p == q == 2``.
    Other pairs are maximised by multi-start bounded L-BFGS over ``f >= 0``
    and returned as a lower bound.
    """
    p, q = float(p), float(q)
    if not (1 <= p and 1 <= q):
        raise ParameterError("exponents must lie in [1, inf]")
    if p > q:
        raise ParameterError(f"need p <= q, got p={p}, q={q}")
    mu, K = op.weights, op.kernel
    if p == 1:
        return NormResult(float(np.max(_lq_norm(K, mu[:, None], q, axis=0))), True, True)
    if math.isinf(q):
        return NormResult(float(np.max(_lq_norm(K, mu[None, :], _dual(p), axis=1))), True, True)
    if p == 2 and q == 2:
        return NormResult(1.0, True, True)

    A = op.matrix
    n = len(mu)

    def neg_log_ratio(f):
        g = A @ f
        ag = np.abs(g) + 1e-300
        af = np.abs(f) + 1e-300
        Sq = float(np.dot(mu, ag**q))
        Sp = float(np.dot(mu, af**p))
        val = math.log(Sq) / q - math.log(Sp) / p
        grad = A.T @ (mu * ag ** (q - 1) * np.sign(g)) / Sq - mu * af ** (p - 1) * np.sign(f) / Sp
        return -val, -grad

    rng = np.random.default_rng(seed)
    inits = [np.ones(n)]
    if extra_starts is not None:
        inits.extend(values(s) for s in extra_starts)
    for _ in range(starts):
        inits.append(rng.random(n) + 0.1)
    best, converged = -math.inf, True
    for f0 in inits:
        f0 = f0 / (np.max(np.abs(f0)) or 1.0)
        res = optimize.minimize(neg_log_ratio, f0, jac=True, method="L-BFGS-B",
                                bounds=[(0.0, None)] * n, options={"maxiter": 2000})
        val = -float(res.fun)
        if val > best:
            best, converged = val, bool(res.success)
    return NormResult(math.exp(best), False, converged)


def exponential_family_ratio(op: HeatOperator, space: ModelSpace, p: float, q: float,
                             lams: Sequence[float]) -> tuple[float, float]:
    """Largest ``||P_t e^{lam x}||_q / ||e^{lam x}||_p`` over ``lams``.

    Computed in the log domain; returns ``(ratio, argmax lam)``.
    """
    mu = op.weights
    x = np.asarray(space.points)
    best, arg = -math.inf, math.nan
    for lam in lams:
        lf = lam * x
        shift = float(np.max(lf))
        f = np.exp(lf - shift)
        g = apply(op, f)
        val = math.log(_lq_norm(g, mu, q)) - math.log(_lq_norm(f, mu, p))
        if val > best:
            best, arg = val, float(lam)
    return math.exp(best), arg
