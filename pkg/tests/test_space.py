import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcdlab import ou
from rcdlab.errors import (
    ConstructionError,
    DegenerateInputError,
    ParameterError,
)
from rcdlab.model import Model
from rcdlab.operator import build_generator
from rcdlab.space import (
    Curve,
    ModelSpec,
    build_model,
    intrinsic_metric,
    local_slope,
    preset_spec,
)


class TestBuildModel:
    def test_ou_mass_and_deficit(self):
        sp = build_model({"kind": "ou", "N": 201, "domain": [-5, 5]})
        # mass of N(0,1) outside [-5, 5]
        tail = math.erfc(5 / math.sqrt(2))
        assert sp.truncation_deficit == pytest.approx(tail, rel=1e-12)
        assert abs(sp.raw_mass - 1.0) < 1e-6
        assert 1 - 1e-6 <= sp.total_mass <= 1.0 + 1e-15
        assert sp.K_target == pytest.approx(1.0)
        assert sp.boundary == "neumann"

    def test_ou_unnormalized_keeps_raw_mass(self):
        sp = build_model({"kind": "ou", "N": 201, "normalize": False})
        assert 1 - 1e-6 <= sp.total_mass <= 1.0

    def test_circle(self):
        sp = build_model("circle")
        assert sp.K_target == 0.0
        assert sp.boundary == "periodic"
        assert sp.total_mass == pytest.approx(1.0, abs=1e-15)
        assert sp.distance(0, sp.N // 2) == pytest.approx(math.pi)

    def test_quartic_interval(self):
        sp = build_model("interval:quartic")
        assert sp.K_target == pytest.approx(0.0, abs=1e-12)
        assert sp.is_probability

    def test_trapezoid_end_weights(self):
        sp = build_model({"kind": "interval", "N": 11, "domain": [0, 1]})
        np.testing.assert_allclose(sp.weights[0] / sp.weights[1], 0.5)
        np.testing.assert_allclose(sp.weights.sum(), 1.0)

    def test_uniform_spacing(self):
        sp = build_model("ou401")
        np.testing.assert_allclose(np.diff(sp.points), sp.h, rtol=1e-12)
        assert np.all(sp.weights > 0)

    def test_small_N_rejected(self):
        with pytest.raises(ParameterError):
            build_model({"kind": "ou", "N": 2})

    def test_nonfinite_potential(self):
        with pytest.raises(ConstructionError):
            build_model({"kind": "interval", "N": 11, "domain": [0, 1], "potential": [float("nan")]})

    def test_interval_needs_domain(self):
        with pytest.raises(ParameterError):
            build_model({"kind": "interval", "N": 11})

    def test_unknown_keys(self):
        with pytest.raises(ParameterError, match="unknown model keys"):
            ModelSpec.from_mapping({"kind": "ou", "NN": 3})

    def test_unknown_preset(self):
        with pytest.raises(ParameterError):
            preset_spec("nope")

    def test_custom_from_potential_samples(self):
        x = np.linspace(-1, 1, 21)
        sp = build_model({"kind": "custom", "points": x.tolist(),
                          "potential_samples": (x**2).tolist()})
        assert sp.K_target == pytest.approx(2.0, abs=1e-9)
        assert sp.is_probability
        gen = build_generator(sp)
        np.testing.assert_allclose(gen.L.sum(axis=1), 0.0, atol=1e-10)

    def test_custom_rejects_nonincreasing(self):
        with pytest.raises(ConstructionError):
            build_model({"kind": "custom", "points": [0, 0], "weights": [1, 1]})


class TestDistance:
    @pytest.mark.parametrize("name", ["ou", "circle", "interval:quartic", "two-point"])
    def test_metric_axioms_exhaustive(self, name):
        sp = build_model(name)
        D = sp.distance_matrix
        np.testing.assert_array_equal(D, D.T)
        np.testing.assert_array_equal(np.diag(D), 0.0)
        # triangle inequality over all triples
        # viol[i, j, k] = d(i, j) - d(i, k) - d(k, j)
        viol = D[:, :, None] - D[:, None, :] - D.T[None, :, :]
        assert np.max(viol) <= 1e-12

    def test_circle_wraps(self):
        sp = build_model("circle")
        assert sp.distance(0, sp.N - 1) == pytest.approx(sp.h)


class TestCurve:
    def test_endpoints_and_speed(self):
        sp = build_model("ou")
        c = Curve(sp, 10, 150)
        assert c.position(0.0) == sp.points[10]
        assert c.position(1.0) == pytest.approx(sp.points[150])
        assert c.speed == pytest.approx(abs(sp.points[150] - sp.points[10]))

    def test_circle_short_arc(self):
        sp = build_model("circle")
        c = Curve(sp, 1, sp.N - 1)
        assert c.speed == pytest.approx(2 * sp.h)
        mid = c.position(0.5)
        assert min(mid, sp.length - mid) == pytest.approx(0.0, abs=1e-12)


class TestLocalSlope:
    def test_constant(self):
        sp = build_model("ou")
        assert all(local_slope(sp, np.ones(sp.N), i) == 0 for i in range(0, sp.N, 20))

    def test_coordinate(self):
        sp = build_model("ou")
        for i in range(1, sp.N - 1, 17):
            assert local_slope(sp, sp.points, i) == pytest.approx(1.0)

    def test_two_point(self):
        sp = build_model("two-point")
        assert local_slope(sp, [0.0, 1.0], 0) == 1.0
        assert local_slope(sp, [0.0, 1.0], 1) == 1.0

    def test_isolated_point(self):
        sp = build_model({"kind": "custom", "points": [0, 1, 2], "weights": [1, 1, 1],
                          "rates": [[0, 1, 0], [1, 0, 0], [0, 0, 0]]})
        with pytest.raises(DegenerateInputError):
            local_slope(sp, [0, 1, 2], 2)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=201, max_size=201))
    def test_dominates_sqrt_gamma(self, vals):
        model = _OU.get()
        from rcdlab.operator import carre_du_champ

        f = np.array(vals)
        g = carre_du_champ(model.gen, f)
        sp = model.space
        # interior nodes: the two edge rates average to e^{-h^2/8} cosh(x h / 2) / h^2
        for i in range(1, sp.N - 1, 7):
            bound = local_slope(sp, f, i) * math.sqrt(math.cosh(sp.points[i] * sp.h / 2))
            assert math.sqrt(max(g[i], 0)) <= bound * (1 + 1e-12) + 1e-12


class _OU:
    _m = None

    @classmethod
    def get(cls):
        if cls._m is None:
            cls._m = Model.build("ou")
        return cls._m


class TestIntrinsicMetric:
    def test_two_point(self, two_point):
        d = intrinsic_metric(two_point.space, two_point.gen, 0, 1)
        assert d == pytest.approx(math.sqrt(2), abs=1e-7)

    def test_diagonal(self, two_point):
        assert intrinsic_metric(two_point.space, two_point.gen, 1, 1) == 0.0

    def test_ou_matches_euclidean(self, ou201):
        sp = ou201.space
        for i, j in ((100, 120), (60, 140), (20, 100)):
            d = intrinsic_metric(sp, ou201.gen, i, j)
            assert abs(d - abs(sp.points[i] - sp.points[j])) <= 2 * sp.h

    def test_symmetry_and_triangle(self, ou201):
        sp, gen = ou201.space, ou201.gen
        a, b, c = 80, 100, 130
        dab = intrinsic_metric(sp, gen, a, b)
        assert dab == pytest.approx(intrinsic_metric(sp, gen, b, a), abs=1e-6)
        dbc = intrinsic_metric(sp, gen, b, c)
        dac = intrinsic_metric(sp, gen, a, c)
        # on a line the inequality is an equality, up to solver accuracy
        assert dac <= dab + dbc + 1e-5
        assert dac == pytest.approx(dab + dbc, abs=1e-5)


class TestOUClosedForm:
    def test_semigroup_exponential(self):
        v = ou.ou_closed_form("semigroup_exponential", lam=1.0, t=math.log(2), x=0.0)
        assert v == pytest.approx(math.exp(0.375), rel=1e-14)
        assert v == pytest.approx(1.454991, abs=1e-6)

    def test_semigroup_matches_quadrature(self):
        for lam, t, x in ((1.0, 0.3, 0.5), (-2.0, 1.0, 1.5)):
            gh = ou.semigroup(lambda z: np.exp(lam * z), t, x)
            assert gh == pytest.approx(ou.semigroup_exponential(lam, t, x), rel=1e-12)

    def test_kernel_diagonal(self):
        for t in (0.1, 1.0, 3.0):
            k = ou.kernel(t, 0.0, 0.0)
            assert k == pytest.approx((1 - math.exp(-2 * t)) ** -0.5)
            assert k >= 1

    def test_kernel_integrates_to_one(self):
        for x in (-1.0, 0.0, 2.0):
            mass = ou.semigroup(lambda y: np.ones_like(y), 0.7, x)
            assert mass == pytest.approx(1.0)
            # integrate p_t(x, .) against N(0, 1) by Gauss-Hermite
            z, w = np.polynomial.hermite_e.hermegauss(120)
            val = sum(wi * ou.kernel(0.7, x, zi) for zi, wi in zip(z, w)) / math.sqrt(2 * math.pi)
            assert val == pytest.approx(1.0, rel=1e-10)

    def test_flow_of_gaussian(self):
        g = ou.ou_closed_form("flow_of_gaussian", m=1.0, v=1.0, t=0.4)
        assert g.mean == pytest.approx(math.exp(-0.4))
        assert g.var == pytest.approx(1.0)

    def test_exponential_moment(self):
        r = ou.exponential_moment(0.4)
        assert r.value == pytest.approx(math.sqrt(5))
        assert not r.divergent
        assert ou.exponential_moment(0.5).divergent

    def test_unknown_query(self):
        with pytest.raises(ParameterError):
            ou.ou_closed_form("nope")

    def test_bad_time(self):
        with pytest.raises(ParameterError):
            ou.kernel(0.0, 0.0, 0.0)
