"""Acceptance battery: one test per criterion, one printed verdict line each."""

import math

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from rcdlab import inequalities as ineq
from rcdlab import ou, replay
from rcdlab.cli import main as cli_main
from rcdlab.model import Model
from rcdlab.operator import GridFunction, apply, exponential_family_ratio
from rcdlab.space import Curve
from rcdlab.suite import emit_report, preset_config, run_suite
from rcdlab.transport import gaussian_density

TIMES = (0.25, 0.5, 1.0, 2.0)
EXPONENTS = (1.5, 2.0, 4.0)
PAIRS = ((-1.0, 1.0), (0.0, 1.0), (-2.0, 2.0))


def verdict(n, title, failures):
    ok = not failures
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title}"
    if failures:
        line += f" ({len(failures)} failing; first: {failures[0]})"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_01_harnack_sharpness(ou201):
    sp = ou201.space
    lams = np.linspace(-2.0, 2.0, 41)
    failures = []
    for t in TIMES:
        for p in EXPONENTS:
            for x, y in PAIRS:
                i, j = sp.nearest_index(x), sp.nearest_index(y)
                xi, yj = float(sp.points[i]), float(sp.points[j])
                for lam in lams:
                    f = GridFunction.exponential(sp, float(lam))
                    rep = ineq.harnack_check(ou201, f, p, 0.0, t, i, j, K=1.0, oracle=True)
                    if rep.slack < -1e-10:
                        failures.append(("slack", t, p, x, y, lam, rep.slack))
                lam_star = oracles.sharp_lambda(xi, yj, t, p)
                f = GridFunction.exponential(sp, lam_star)
                rep = ineq.harnack_check(ou201, f, p, 0.0, t, i, j, K=1.0, oracle=True)
                if not (-1e-10 <= rep.slack <= 1e-8):
                    failures.append(("sharp", t, p, x, y, rep.slack))
    verdict(1, "Harnack sharpness on the Mehler oracle (36 configurations x 41 rates)", failures)


def test_criterion_02_harnack_constant():
    failures = []
    exact = float(oracles.harnack_exponent_mp(1, 2, 1, 1))
    got = ineq.harnack_constant(1.0, 2.0, 1.0, 1.0)
    if abs(got - exact) > 1e-12:
        failures.append(("value", got, exact))
    for t in TIMES:
        for p in EXPONENTS:
            for x, y in PAIRS:
                d = abs(x - y)
                limit = oracles.harnack_limit(p, t, d)
                for K in (1e-6, -1e-6):
                    err = abs(ineq.harnack_constant(K, p, t, d) - limit)
                    if err > 1e-9:
                        failures.append(("continuity", K, p, t, d, err))
    verdict(2, "Harnack constant value and K -> 0 continuity", failures)


def test_criterion_03_proof_replay(two_point, ou401):
    failures = []
    tp = replay.ReplayContext(two_point, GridFunction([0.0, 1.0]), 2.0, 1.0,
                              Curve(two_point.space, 0, 1), eps=0.5, K=2.0)
    sp = ou401.space
    grid = replay.ReplayContext(ou401, GridFunction.exponential(sp, 1.0), 2.0, 1.0,
                                Curve(sp, sp.nearest_index(-1.0), sp.nearest_index(1.0)), eps=0.1)
    for ctx in (tp, grid):
        for s in replay.sample_times(ctx.t, 9):
            a = replay.g_partial_s(ctx, s, s)
            b = replay.g_partial_s_fd(ctx, s, s)
            if abs(a - b) > max(1e-6, 1e-3 * abs(a)):
                failures.append(("partial", ctx.model.label, s, a, b))

    runs = []
    for p in (2.0, 4.0):
        for t, (x, y) in ((0.5, (-1.0, 1.0)), (1.0, (0.0, 1.0)), (2.0, (-2.0, 2.0))):
            curve = Curve(sp, sp.nearest_index(x), sp.nearest_index(y))
            runs.append(replay.ReplayContext(ou401, GridFunction.exponential(sp, 1.0), p, t, curve))
            lam = oracles.sharp_lambda(float(sp.points[curve.x]), float(sp.points[curve.y]), t, p)
            f = GridFunction.exponential(sp, lam)
            runs.append(replay.ReplayContext(ou401, f, p, t, curve))
            runs.append(replay.ReplayContext(ou401, f, p, t, curve, eps=0.0, K=1.0, oracle=True))
    for ctx in runs:
        rep = replay.derivative_bound_replay(ctx, samples=9)
        if not rep.passed:
            failures.append(("bound", ctx.p, ctx.t, ctx.oracle, rep.slack, rep.tolerance))

    for K in (-0.5, 0.0, 1e-7, 1.0, 2.0):
        for t in (0.5, 1.0, 2.0):
            res = replay.integrated_constant_identity(K, t, 2.0, 1.0)
            if res > 1e-10:
                failures.append(("identity", K, t, res))
    verdict(3, "proof replay: derivative formula, diagonal bound, integrated identity", failures)


def test_criterion_04_gradient_estimates(ou401):
    sp = ou401.space
    fs = {
        "x": GridFunction.coordinate(sp),
        "exp": GridFunction.exponential(sp, 1.0),
        "gauss": GridFunction.from_callable(sp, lambda x: np.exp(-x**2 / 4)),
    }
    failures = []
    for name, f in fs.items():
        for t in (0.1, 0.5, 1.0):
            for order in (1, 2):
                rep = ineq.gradient_estimate_check(ou401, f, t, order)
                if rep.slack < -1e-3:
                    failures.append((name, t, order, rep.slack))
    for t in (0.1, 0.5, 1.0):
        rep = ineq.gradient_estimate_check(ou401, fs["x"], t, 1)
        if abs(rep.slack) > 1e-3:
            failures.append(("sharp", t, rep.slack))
    verdict(4, "gradient estimates on the OU grid and sharpness for f(x) = x", failures)


def test_criterion_05_be_constant(two_point, ou401, circle):
    failures = []
    if abs(two_point.K_hat - 2.0) > 1e-12:
        failures.append(("two-point", two_point.K_hat))
    if not 0.95 <= ou401.K_hat <= 1.05:
        failures.append(("ou401", ou401.K_hat))
    if not -0.02 <= circle.K_hat <= 0.02:
        failures.append(("circle", circle.K_hat))
    verdict(5, "Bakry-Emery constant of the reference models", failures)


def test_criterion_06_w2_contraction(ou401):
    sp = ou401.space
    i, j = sp.nearest_index(-1.0), sp.nearest_index(1.0)
    failures = []
    for t in (0.25, 0.5, 1.0):
        rep = ineq.wasserstein_contraction_check(ou401, i, j, t, 2, K=1.0)
        if abs(rep.lhs - 2 * math.exp(-t)) > 5e-3:
            failures.append(("value", t, rep.lhs))
        if rep.metadata["residual"] > 1e-9:
            failures.append(("residual", t, rep.metadata["residual"]))
    verdict(6, "W2 contraction equality case", failures)


def test_criterion_07_entropy_cost(ou401):
    sp = ou401.space
    m = 1.0
    f = GridFunction(np.sqrt(gaussian_density(sp, m, 1.0).values))
    failures = []
    for t in (0.5, 2.0):
        rep = ineq.entropy_cost_check(ou401, f, t, K=1.0)
        lhs_exact = oracles.gaussian_entropy(m * math.exp(-t))
        rhs_exact = m * m / (2 * math.expm1(2 * t))
        if abs(rep.lhs - lhs_exact) > 2e-3:
            failures.append(("lhs", t, rep.lhs, lhs_exact))
        if abs(rep.rhs - rhs_exact) > 2e-3:
            failures.append(("rhs", t, rep.rhs, rhs_exact))
        if rep.slack < -1e-3:
            failures.append(("slack", t, rep.slack))
        if not rhs_exact - lhs_exact > 0:
            failures.append(("analytic", t))
    verdict(7, "entropy-cost inequality for a shifted Gaussian", failures)


def test_criterion_08_log_sobolev(ou401):
    failures = []
    res = ineq.lsi_estimate(ou401, trials=64, seed=0, target=2.0)
    if not 1.95 <= res.C_lower <= 2.05:
        failures.append(("C_lower", res.C_lower))
    # maximiser: every exponential rate attains the supremum
    for a in (0.25, 0.5, 1.0):
        r = ou.lsi_ratio_exponential(a)
        if abs(r - 2.0) > 1e-6:
            failures.append(("closed form", a, r))
    verdict(8, "log-Sobolev constant of the Gaussian", failures)


def test_criterion_09_hypercontractivity(ou401, circle, two_point, quartic):
    sp = ou401.space
    lams = np.linspace(-2.0, 2.0, 81)
    failures = []
    r_before, _ = exponential_family_ratio(ou401.heat(0.3), sp, 2, 4, lams)
    if not r_before > 1.01:
        failures.append(("t=0.3", r_before))
    r_after, _ = exponential_family_ratio(ou401.heat(0.56), sp, 2, 4, lams)
    if r_after > 1 + 1e-4:
        failures.append(("t=0.56", r_after))
    for model in (ou401, circle, two_point, quartic):
        for t in (0.1, 0.5, 1.0):
            rep = ineq.ultracontractive_identity_check(model, t)
            if not rep.passed:
                failures.append(("identity", model.label, t, rep.lhs))
    verdict(9, "hypercontractivity threshold and the 1->inf identity", failures)


def test_criterion_10_gaussian_moments(ou_wide):
    failures = []
    est = ineq.gaussian_moment(ou_wide, 0.4)
    if abs(est.value - oracles.gaussian_moment(0.4)) > 2e-2:
        failures.append(("value", est.value))
    if est.divergent:
        failures.append(("flag at 0.4",))
    if not ineq.gaussian_moment(ou_wide, 0.6).divergent:
        failures.append(("flag at 0.6",))
    verdict(10, "Gaussian moments and the divergence threshold", failures)


def test_criterion_11_cd_convexity(ou401):
    sp = ou401.space
    r0, r1 = gaussian_density(sp, -1.0, 1.0), gaussian_density(sp, 1.0, 1.0)
    failures = []
    rep = ineq.cd_convexity_check(ou401, r0, r1, K=1.0, steps=11)
    if rep.slack < -(0.05 + 5 * sp.h):
        failures.append(("K=1", rep.slack))
    neg = ineq.cd_convexity_check(ou401, r0, r1, K=3.0, steps=11)
    if neg.passed or neg.metadata["worst_step"] != 5:
        failures.append(("K=3", neg.slack, neg.metadata["worst_step"]))
    verdict(11, "entropy convexity along the displacement geodesic", failures)


def test_criterion_12_infrastructure(tmp_path):
    failures = []
    cfg = preset_config("paper-suite")
    models: dict[str, Model] = {}
    serial = emit_report(run_suite(cfg, threads=1, models=models), "csv")
    parallel = emit_report(run_suite(cfg, threads=4, models=models), "csv")
    if serial != parallel:
        failures.append(("determinism",))
    code = cli_main(["run", "--preset", "negative-controls", "--output", str(tmp_path / "neg.csv")])
    if code != 1:
        failures.append(("negative controls exit", code))
    for model in models.values():
        mu = model.space.weights
        f = np.cos(np.arange(model.space.N, dtype=float))
        for t, op in model._heat.items():
            err = abs(float(np.dot(apply(op, f), mu)) - float(np.dot(f, mu)))
            if err > 1e-12:
                failures.append(("mass", model.label, t, err))
    verdict(12, "determinism, negative-control exit code, mass preservation", failures)
