import numpy as np
import pytest

from distext.core_types import ChartRegion
from distext.euler_flows import (
    ChartEscapeError, EulerField, PolyND, PolyVectorField, conjugation,
    conjugation_residual, cotangent_lift_check, cotangent_lift_vector, flow,
    is_euler, stock_field,
)

from oracles import logistic_flow_h, logistic_flow_jac

CHART = ChartRegion(0, 1, box_h=[[-2.0, 2.0]])
CHARTX = ChartRegion(1, 1, box_x=[[-2.0, 2.0]], box_h=[[-2.0, 2.0]])


def poly_field_1d(chart, coeffs_by_power):
    """Vector field c_k h^k d/dh on a (0, 1) chart."""
    comp = PolyND(1, {(k,): c for k, c in coeffs_by_power.items()})
    return PolyVectorField(chart, [comp])


class TestIsEuler:
    def test_standard_field(self):
        assert is_euler(stock_field("standard", CHART), CHART)

    def test_double_scaling_rejected(self):
        assert not is_euler(poly_field_1d(CHART, {1: 2.0}), CHART)

    def test_logistic_accepted(self):
        assert is_euler(poly_field_1d(CHART, {1: 1.0, 2: 1.0}), CHART)

    def test_normal_form_with_xy_coupling(self):
        # rho = h d/dh + h A(x,h) d/dx stays Euler for smooth polynomial A
        fld = EulerField(
            CHARTX, A={(0, 0): PolyND(2, {(1, 0): 0.3, (0, 1): -0.2})},
            B={(0, 0, 0): PolyND(2, {(0, 0): 0.5})})
        assert is_euler(fld, CHARTX)

    def test_constant_transverse_part_rejected(self):
        # rho = (h + 0.1) d/dh is not tangent to I
        assert not is_euler(poly_field_1d(CHART, {0: 0.1, 1: 1.0}), CHART)


class TestFlow:
    def test_standard_flow_is_linear_scaling(self):
        rho = stock_field("standard", CHART)
        res = flow(rho, 0.37, np.array([0.8]))
        assert res.endpoint[0] == pytest.approx(0.37 * 0.8, abs=1e-9)
        assert res.jacobian[0, 0] == pytest.approx(0.37, abs=1e-9)

    def test_lambda_one_identity(self):
        rho = stock_field("logistic", CHART)
        res = flow(rho, 1.0, np.array([0.5]))
        assert res.endpoint[0] == 0.5
        assert res.jacobian[0, 0] == 1.0
        assert res.steps == 0

    @pytest.mark.parametrize("h0", [0.9, 0.25, -0.45])
    @pytest.mark.parametrize("lam", [0.7, 0.2, 1e-3])
    def test_logistic_flow_closed_form(self, h0, lam):
        rho = stock_field("logistic", CHART)
        res = flow(rho, lam, np.array([h0]))
        assert res.endpoint[0] == pytest.approx(logistic_flow_h(lam, h0), abs=1e-8)
        assert res.jacobian[0, 0] == pytest.approx(logistic_flow_jac(lam, h0),
                                                   abs=1e-8)

    def test_semigroup(self):
        rho = stock_field("logistic", CHART)
        p = np.array([0.6])
        lam, mu = 0.3, 0.5
        two_step = flow(rho, lam, flow(rho, mu, p).endpoint).endpoint
        one_step = flow(rho, lam * mu, p).endpoint
        assert two_step[0] == pytest.approx(one_step[0], abs=1e-8)

    def test_jacobian_determinant_positive(self):
        rho = stock_field("logistic", CHART)
        for lam in (0.8, 0.3, 0.05):
            res = flow(rho, lam, np.array([0.7]))
            assert np.linalg.det(np.atleast_2d(res.jacobian)) > 0

    def test_chart_escape_reports_partial_trajectory(self):
        # outward field: h(1-3h) pushes |h| up for h < 0 under backward time
        tight = ChartRegion(0, 1, box_h=[[-0.5, 0.5]])
        fld = EulerField(tight, B={(0, 0, 0): PolyND(1, {(0,): -3.0})})
        with pytest.raises(ChartEscapeError) as err:
            flow(fld, 1e-4, np.array([0.49]))
        assert err.value.trajectory  # partial trajectory attached

    def test_rejects_lambda_outside_unit(self):
        rho = stock_field("standard", CHART)
        with pytest.raises(ValueError):
            flow(rho, 1.5, np.array([0.1]))


class TestConjugation:
    def test_identity_when_fields_equal(self):
        rho = stock_field("logistic", CHART)
        p = np.array([0.2])
        for lam in (0.9, 0.4, 1e-2):
            q = conjugation(rho, rho, lam, p)
            assert np.max(np.abs(q - p)) < 1e-9

    def test_against_closed_form_flows(self):
        # Phi(lam) = S_1^-1(lam) o S_2(lam) for rho1 = standard, rho2 = logistic
        rho1 = stock_field("standard", CHART)
        rho2 = stock_field("logistic", CHART)
        lam, h0 = 0.5, 0.2
        got = conjugation(rho1, rho2, lam, np.array([h0]))
        want = logistic_flow_h(lam, h0) / lam
        assert got[0] == pytest.approx(want, abs=1e-8)

    @pytest.mark.parametrize("lam", [1.0, 0.3, 1e-2, 1e-3])
    def test_conjugation_relation(self, lam):
        rho1 = stock_field("standard", CHART)
        rho2 = stock_field("logistic", CHART)
        rng = np.random.default_rng(9)
        for h0 in rng.uniform(-0.4, 0.6, size=5):
            assert conjugation_residual(rho1, rho2, lam, [h0]) < 1e-6

    def test_small_lambda_limit_cauchy(self):
        # germ statement: the family converges at rate O(|X| dlam) with
        # |X| ~ h^2, so the 1e-6 Cauchy window needs a point near I
        rho1 = stock_field("standard", CHART)
        rho2 = stock_field("logistic", CHART)
        p = np.array([0.03])
        vals = [conjugation(rho1, rho2, lam, p)[0]
                for lam in (1e-3, 5e-4, 1e-4, 0.0)]
        assert np.max(np.abs(np.diff(vals))) < 1e-6

    def test_limit_linear_rate_away_from_i(self):
        rho1 = stock_field("standard", CHART)
        rho2 = stock_field("logistic", CHART)
        p = np.array([0.3])
        v1 = conjugation(rho1, rho2, 1e-3, p)[0]
        v2 = conjugation(rho1, rho2, 0.0, p)[0]
        # smooth limit: difference controlled by C * lam with C ~ |X| ~ h^2
        assert abs(v1 - v2) < 5.0 * 1e-3 * 0.3 ** 2


class TestCotangentLift:
    def test_h_squared_field_vanishes_on_conormal(self):
        fld = poly_field_1d(CHART, {2: 1.0})  # h^2 d/dh is in F_1
        comp, dk = cotangent_lift_vector(fld, np.array([0.0]), np.array([1.0]))
        assert np.max(np.abs(comp)) == 0.0
        assert np.max(np.abs(dk)) == 0.0

    def test_euler_field_moves_conormal(self):
        fld = poly_field_1d(CHART, {1: 1.0})  # h d/dh is not in F_1
        comp, dk = cotangent_lift_vector(fld, np.array([0.0]), np.array([1.0]))
        assert np.max(np.abs(dk)) > 0.5  # -eta d/deta component

    def test_flat_field_fixes_samples(self):
        fld = poly_field_1d(CHART, {2: 1.0})
        samples = [(np.array([0.0]), np.array([1.0])),
                   (np.array([0.0]), np.array([-1.0]))]
        assert cotangent_lift_check(fld, samples)

    def test_conjugation_family_fixes_conormal(self):
        rho1 = stock_field("standard", CHART)
        rho2 = stock_field("logistic", CHART)
        samples = [(np.array([0.0, 0.0]), np.array([0.0, eta]))
                   for eta in (1.0, -1.0, 2.5)]
        # points (x, h) = (0, 0) with covectors (xi, eta) = (0, eta): use the
        # d = 1, n = 1 chart so x-axes exist in the lift
        chart = CHARTX
        r1 = stock_field("standard", chart)
        r2 = EulerField(chart, B={(0, 0, 0): PolyND(2, {(0, 0): 1.0})})
        assert cotangent_lift_check((r1, r2), samples)

    def test_homotopy_family_single_field(self):
        chart = CHARTX
        fld = EulerField(chart, A={(0, 0): PolyND(2, {(0, 0): 0.4})},
                         B={(0, 0, 0): PolyND(2, {(0, 0): 1.0})})
        samples = [(np.array([0.1, 0.0]), np.array([0.0, 1.0]))]
        assert cotangent_lift_check(fld, samples)
