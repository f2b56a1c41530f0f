import numpy as np
import pytest

from distext.core_types import (
    BumpF, ChartRegion, PolyF, ProductF, Term, make_bump, make_cutoff,
)
from distext.core_types import TestFunction as TF
from distext.distributions import Distribution, PairingError, model, pair
from distext.extension import (
    extend, extend_positive, extend_singular, extension_pairing, taylor_order,
)

from oracles import improper_power_pairing, tanh_sinh_quad

CH = ChartRegion(0, 1, box_h=[[-1.5, 1.5]])
CHI = make_cutoff(0.5, 1.0)
CHI2 = make_cutoff(0.25, 0.75)
CHI_ALT = make_cutoff(0.5, 1.0, profile="exp2")


def bump_profile(radius=1.0, center=0.0):
    def f(u):
        u = np.asarray(u, dtype=float)
        v = (u - center) / radius
        w = 1.0 - v * v
        out = np.zeros_like(v)
        msk = w > 1e-12
        out[msk] = np.exp(1.0 - 1.0 / w[msk])
        return out
    return f


class TestTaylorOrder:
    @pytest.mark.parametrize("s,d,m", [
        (-0.5, 1, -1), (-1.0, 1, 0), (-1.5, 1, 0), (-2.0, 1, 1),
        (-2.5, 1, 1), (-3.0, 2, 1), (-0.5, 2, -1), (-1.0 - 1e-12, 1, 0),
    ])
    def test_dispatch(self, s, d, m):
        assert taylor_order(s, d) == m


class TestPositiveRegime:
    def test_matches_improper_integral(self):
        t = model("power_law", CH, a=0.5)
        phi = make_bump([0.0], [1.0])
        got = extend_positive(t, -0.5, CHI, phi)
        want = improper_power_pairing(0.5, bump_profile(1.0), 1.0)
        assert got == pytest.approx(want, abs=1e-6)

    def test_smooth_distribution_untouched(self):
        t = model("smooth", CH)
        phi = make_bump([0.1], [0.8])
        got = extend_positive(t, 0.0, CHI, phi)
        assert got == pytest.approx(pair(t, phi), abs=1e-8)

    def test_chi_independence(self):
        t = model("power_law", CH, a=0.5)
        phi = make_bump([0.0], [1.0])
        vals = [extend_positive(t, -0.5, c, phi) for c in (CHI, CHI2, CHI_ALT)]
        assert max(vals) - min(vals) < 1e-6

    def test_wrong_regime_rejected(self):
        t = model("power_law", CH, a=1.5)
        phi = make_bump([0.0], [1.0])
        with pytest.raises(ValueError):
            extend_positive(t, -1.5, CHI, phi)


class TestSingularRegime:
    def test_inert_subtraction_when_phi_vanishes_on_i(self):
        t = model("power_law", CH, a=1.0)
        phi = TF(0, 1, [Term(1.0, (ProductF(PolyF([0.0, 0.0, 1.0]),
                                            BumpF(0.0, 1.0)),))],
                 [[-1.0, 1.0]])
        got = extend_singular(t, -1.0, 0, CHI, phi)
        want = improper_power_pairing(
            1.0, lambda h: np.asarray(h) ** 2 * bump_profile(1.0)(h), 1.0)
        assert got == pytest.approx(want, abs=1e-6)

    def test_chi_variation_is_delta_multiple(self):
        t = model("power_law", CH, a=1.0)
        c_oracle = 2.0 * tanh_sinh_quad(
            lambda r: (CHI2.q(r) - CHI.q(r)) / r, 1e-14, 1.2)
        for center, radius, scale in ((0.0, 1.0, 1.0), (0.1, 0.9, 2.0)):
            phi = make_bump([center], [radius])
            phi.terms[0] = Term(scale, phi.terms[0].factors)
            v1 = extend_singular(t, -1.0, 0, CHI, phi)
            v2 = extend_singular(t, -1.0, 0, CHI2, phi)
            phi0 = phi.eval([], [0.0])
            assert v1 - v2 == pytest.approx(c_oracle * phi0, abs=1e-6)

    def test_finite_part_oracle_through_chi_difference(self):
        # tbar against the unit-interval finite part: the difference is the
        # constant integral (chi - 1_{|h|<=1})/|h|, computed by tanh-sinh
        # after splitting at the indicator jump
        from oracles import finite_part_one_over_abs
        t = model("power_law", CH, a=1.0)
        phi = make_bump([0.0], [1.0])
        got = extend_singular(t, -1.0, 0, CHI, phi)
        pf = finite_part_one_over_abs(bump_profile(1.0), 1.0)
        # tbar - Pf = phi(0) * integral (1_{|h|<=1} - chi)/|h| dh = -phi(0) c
        c = 2.0 * tanh_sinh_quad(lambda r: (CHI.q(r) - 1.0) / r, 1e-14, 1.0)
        assert got == pytest.approx(pf - c, abs=1e-6)

    def test_zero_distribution(self):
        t = Distribution(chart=CH, kind="kernel",
                         h_kernel=lambda H: np.zeros(np.asarray(H).shape[:-1]),
                         h_singular=False)
        phi = make_bump([0.0], [1.0])
        assert extend_singular(t, -1.0, 0, CHI, phi) == pytest.approx(0.0, abs=1e-12)

    def test_m_mismatch_rejected(self):
        t = model("power_law", CH, a=1.0)
        phi = make_bump([0.0], [1.0])
        with pytest.raises(ValueError):
            extend_singular(t, -1.0, 1, CHI, phi)

    def test_insufficient_derivatives(self):
        t = model("power_law", CH, a=2.5)
        phi = make_bump([0.0], [1.0], m_max=1)
        with pytest.raises(ValueError):
            extend_singular(t, -2.5, 1, CHI, phi)


class TestRestrictionAndLinearity:
    @pytest.mark.parametrize("a,m", [(0.5, -1), (1.0, 0), (1.5, 0)])
    def test_restriction_to_off_i_probes(self, a, m):
        t = model("power_law", CH, a=a)
        rng = np.random.default_rng(12)
        for _ in range(8):
            c = rng.uniform(0.15, 1.2) * rng.choice([-1.0, 1.0])
            r = min(abs(c) * 0.8, 1.4 - abs(c), rng.uniform(0.05, 0.5))
            phi = make_bump([c], [r])
            assert extension_pairing(t, -a, m, CHI, phi) == pytest.approx(
                pair(t, phi), abs=1e-7)

    def test_linear_in_t(self):
        k1 = model("power_law", CH, a=1.0).h_kernel
        k2 = model("smooth", CH, g="gauss_h").h_kernel
        both = Distribution(
            chart=CH, kind="kernel", h_singular=True, singular_on_I=True,
            h_kernel=lambda H: 2.0 * k1(H) + 0.5 * k2(H))
        phi = make_bump([0.0], [1.0])
        t1 = model("power_law", CH, a=1.0)
        t2 = model("smooth", CH, g="gauss_h")
        v = extension_pairing(both, -1.0, 0, CHI, phi)
        v1 = extension_pairing(t1, -1.0, 0, CHI, phi)
        v2 = extension_pairing(t2, -1.0, 0, CHI, phi)
        assert v == pytest.approx(2.0 * v1 + 0.5 * v2, abs=1e-8)

    def test_delta_kind_rejected(self):
        t = model("delta_derivative", CH, alpha=0)
        phi = make_bump([0.0], [1.0])
        with pytest.raises(PairingError):
            extension_pairing(t, -1.0, 0, CHI, phi)

    def test_cutoff_must_fit_chart(self):
        t = model("power_law", CH, a=0.5)
        phi = make_bump([0.0], [1.0])
        wide = make_cutoff(1.0, 2.0)
        with pytest.raises(ValueError):
            extension_pairing(t, -0.5, -1, wide, phi)


class TestExtendDispatch:
    def test_half_power_report(self):
        t = model("power_law", CH, a=0.5)
        res = extend(t, -0.5, CHI)
        assert res.m == -1
        assert not res.integer_boundary
        assert res.s_out == pytest.approx(-0.5, abs=0.05)
        assert not res.log_flag
        assert res.chi_used == CHI.key

    def test_m_dispatch_without_estimation(self):
        t = model("power_law", CH, a=1.5)
        res = extend(t, -1.5, CHI, estimate=False)
        assert res.m == 0 and res.s_out == -1.5
        t2 = model("power_law", CH, a=1.0)
        res2 = extend(t2, -1.0, CHI, estimate=False)
        assert res2.m == 0 and res2.integer_boundary

    def test_wf_bound_minimal_for_landing_cone(self):
        from distext.microlocal import Cone, conormal
        t = model("power_law", CH, a=1.0)
        res = extend(t, -1.0, CHI, cone_in=Cone((), 0, 1), estimate=False)
        want = conormal(CH)
        assert res.wf_bound.pieces == want.pieces

    def test_unstable_cone_rejected(self):
        from distext.microlocal import BaseRegion, Cap, Cone, ConePiece
        skew = Cone((ConePiece(BaseRegion(h_mode="off_i"),
                               (Cap((1.0,), 0.0),)),), 0, 1)
        # direction (xi component on a (0,1) chart is the h axis itself);
        # build a genuinely unstable mixed cap on an (1,1) chart instead
        chartx = ChartRegion(1, 1, box_h=[[-1.5, 1.5]])
        mixed = Cone((ConePiece(BaseRegion(h_mode="off_i"),
                                (Cap((np.sqrt(0.5), np.sqrt(0.5)), 0.0),)),),
                     1, 1)
        t = model("power_law", chartx, a=0.5)
        with pytest.raises(ValueError):
            extend(t, -0.5, CHI, cone_in=mixed, estimate=False)

    def test_infinite_s_rejected(self):
        t = model("power_law", CH, a=0.5)
        with pytest.raises(ValueError):
            extend(t, float("nan"), CHI, estimate=False)
