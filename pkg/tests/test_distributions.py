import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distext.core_types import ChartRegion, make_bump, scale_testfn
from distext.distributions import (
    PairingError, model, pair, scale_pair, scaled_pairing,
)

from oracles import improper_power_pairing, tanh_sinh_quad

CHART1 = ChartRegion(0, 1)
CHARTX = ChartRegion(1, 1)


def bump_profile(radius=1.0, center=0.0):
    def f(u):
        u = np.asarray(u, dtype=float)
        v = (u - center) / radius
        w = 1.0 - v * v
        out = np.zeros_like(v)
        m = w > 1e-12
        out[m] = np.exp(1.0 - 1.0 / w[m])
        return out
    return f


class TestPair:
    def test_delta_reduces_to_base_integral(self):
        t = model("delta_derivative", CHARTX, alpha=0)
        phi = make_bump([0.0, 0.0], [0.8, 0.5], n=1)
        got = pair(t, phi)
        want = tanh_sinh_quad(bump_profile(0.8), -0.8, 0.8)  # phi(x, 0) = bump(x)
        assert got == pytest.approx(want, abs=1e-10)

    def test_constant_kernel_integrates_phi(self):
        t = model("smooth", CHART1, g="one")
        phi = make_bump([0.0], [0.7])
        got = pair(t, phi)
        want = tanh_sinh_quad(bump_profile(0.7), -0.7, 0.7)
        assert got == pytest.approx(want, rel=1e-9)

    def test_integrable_power_law_matches_tanh_sinh(self):
        t = model("power_law", CHART1, a=0.5)
        phi = make_bump([0.0], [1.0])
        got = pair(t, phi)
        want = improper_power_pairing(0.5, bump_profile(1.0), 1.0)
        assert got == pytest.approx(want, abs=1e-7)

    def test_one_sided_matches_oracle(self):
        t = model("one_sided", CHART1, a=0.3)
        phi = make_bump([0.1], [0.6])
        got = pair(t, phi)
        want = improper_power_pairing(0.3, bump_profile(0.6, 0.1), 0.7,
                                      side="plus")
        assert got == pytest.approx(want, abs=1e-8)

    def test_nonintegrable_pairing_raises(self):
        t = model("power_law", CHART1, a=1.0)
        phi = make_bump([0.0], [1.0])  # phi(0) = 1
        with pytest.raises(PairingError):
            pair(t, phi)

    def test_nonintegrable_ok_away_from_i(self):
        t = model("power_law", CHART1, a=1.0)
        phi = make_bump([0.5], [0.2])
        got = pair(t, phi)
        want = improper_power_pairing(1.0, bump_profile(0.2, 0.5), 0.7,
                                      side="plus")
        assert got == pytest.approx(want, abs=1e-8)

    def test_nonsmooth_factor_x_integral(self):
        chart = ChartRegion(2, 1)
        t = model("nonsmooth_factor", chart)
        phi = make_bump([0.0, 0.2, 0.0], [0.8, 0.6, 0.5], n=2)

        def f(x):
            return 2.0 + np.sign(x) * np.abs(x) ** (1.0 / 3.0)

        wx1 = tanh_sinh_quad(lambda u: f(u) * bump_profile(0.8)(u), -0.8, 0.0) \
            + tanh_sinh_quad(lambda u: f(u) * bump_profile(0.8)(u), 0.0, 0.8)
        wx2 = tanh_sinh_quad(bump_profile(0.6, 0.2), -0.4, 0.8)
        wh = tanh_sinh_quad(bump_profile(0.5), -0.5, 0.5)
        assert pair(t, phi) == pytest.approx(wx1 * wx2 * wh, rel=1e-8)

    def test_power_law_d2_matches_polar_oracle(self):
        chart = ChartRegion(0, 2)
        t = model("power_law", chart, a=1.0)  # integrable in d = 2
        phi = make_bump([0.0, 0.0], [0.7, 0.7])

        b = bump_profile(0.7)

        def radial(r):
            vals = []
            for rv in np.atleast_1d(r):
                th = np.linspace(0.0, 2 * np.pi, 721)[:-1]
                vals.append(np.mean(b(rv * np.cos(th)) * b(rv * np.sin(th)))
                            * 2 * np.pi)
            return np.asarray(vals)

        # kernel r^-1 times measure r dr: the radial factor cancels; the
        # support reaches the box corners at r = 0.7 sqrt(2)
        want = tanh_sinh_quad(radial, 0.0, 0.7 * np.sqrt(2.0))
        assert pair(t, phi) == pytest.approx(want, abs=1e-7)

    @settings(max_examples=10, deadline=None)
    @given(a=st.floats(0.1, 0.8), b=st.floats(0.1, 0.8))
    def test_linearity(self, a, b):
        t = model("power_law", CHART1, a=0.5)
        p1 = make_bump([0.2], [0.5])
        p2 = make_bump([-0.3], [0.4])
        combined = pair(t, p1) * a + pair(t, p2) * b
        from distext.core_types import Term, TestFunction
        terms = [Term(a * p1.terms[0].coeff, p1.terms[0].factors),
                 Term(b * p2.terms[0].coeff, p2.terms[0].factors)]
        support = np.stack([np.minimum(p1.support[:, 0], p2.support[:, 0]),
                            np.maximum(p1.support[:, 1], p2.support[:, 1])], axis=1)
        both = TestFunction(0, 1, terms, support)
        assert pair(t, both) == pytest.approx(combined, abs=1e-9)


class TestScalePair:
    def test_lambda_one_is_identity(self):
        t = model("power_law", CHART1, a=0.5)
        phi = make_bump([0.0], [0.9])
        assert scale_pair(t, phi, 1.0, s=-1.7) == pytest.approx(pair(t, phi))

    def test_delta_derivative_scaling_power(self):
        t = model("delta_derivative", CHART1, alpha=1)
        from distext.core_types import PolyF, ProductF, BumpF, Term, TestFunction
        odd = TestFunction(0, 1, [Term(1.0, (ProductF(PolyF([0.0, 1.0]),
                                                      BumpF(0.0, 0.8)),))],
                           [[-0.8, 0.8]])
        base = pair(t, odd)
        for lam in (0.5, 0.25, 0.1):
            got = scale_pair(t, odd, lam, s=0.0)
            assert got == pytest.approx(lam ** (-2) * base, rel=1e-9)

    def test_exact_homogeneity_constant_in_lambda(self):
        t = model("power_law", CHART1, a=0.5)
        phi = make_bump([0.0], [0.9])
        sp = scaled_pairing(t, phi, np.geomspace(1, 1e-3, 12), s=-0.5)
        spread = np.max(np.abs(sp.values - sp.values[0]))
        assert spread < 1e-6 * abs(sp.values[0])

    def test_semigroup_through_duality(self):
        t = model("power_law", CHART1, a=0.4)
        phi = make_bump([0.3], [0.3])
        lam, mu = 0.6, 0.3
        v1 = scale_pair(t, scale_testfn(phi, 1.0 / mu), lam, s=0.0) * mu ** (-1)
        v2 = scale_pair(t, phi, lam * mu, s=0.0)
        assert v1 == pytest.approx(v2, rel=1e-8)

    def test_rejects_lambda_outside_unit(self):
        t = model("power_law", CHART1, a=0.5)
        phi = make_bump([0.0], [0.5])
        with pytest.raises(ValueError):
            scale_pair(t, phi, 1.5, s=0.0)

    def test_support_escape(self):
        t = model("power_law", CHART1, a=0.5)
        phi = make_bump([0.0], [1.4])  # wider than the chart box
        with pytest.raises(PairingError):
            scale_pair(t, phi, 0.5, s=0.0)


class TestModelRegistry:
    def test_unknown_name(self):
        with pytest.raises(ValueError):
            model("zeta_function", CHART1)

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            model("power_law", CHART1, a=-1.0)
        with pytest.raises(ValueError):
            model("one_sided", ChartRegion(0, 2), a=0.5)
        with pytest.raises(ValueError):
            model("delta_derivative", CHART1, alpha=(1, 2))

    def test_meta_claims(self):
        assert model("power_law", CHART1, a=0.5).meta_degree == -0.5
        assert model("delta_derivative", CHART1, alpha=1).meta_degree == -2
        t = model("smooth", CHART1)
        assert t.meta_degree == 0.0
        assert t.meta_cone.is_empty()

    def test_combo_linear(self):
        t1 = model("power_law", CHART1, a=0.5)
        t2 = model("smooth", CHART1)
        phi = make_bump([0.0], [0.8])
        both = t1 + t2
        assert pair(both, phi) == pytest.approx(pair(t1, phi) + pair(t2, phi),
                                                rel=1e-9)
