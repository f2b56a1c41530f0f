import numpy as np

from distext.core_types import ChartRegion
from distext.distributions import model
from distext.microlocal import (
    BaseRegion, Cap, Cone, ConePiece, SubSphere, check_landing,
    check_scaling_stable, check_transverse, cone_sum, cone_union, conormal,
    full_cone, wf_bound_check, wf_estimate, x_hyperplane_conormal,
    xi_projection,
)

CH11 = ChartRegion(1, 1)
CH21 = ChartRegion(2, 1)
CH01 = ChartRegion(0, 1)


class TestConormal:
    def test_contains_pure_eta(self):
        N = conormal(CH11)
        assert N.contains([0.3, 0.0], [0.0, 1.0])
        assert N.contains([0.3, 0.0], [0.0, -2.0])

    def test_excludes_xi(self):
        N = conormal(CH11)
        assert not N.contains([0.0, 0.0], [1.0, 0.0])

    def test_excludes_base_off_i(self):
        N = conormal(CH11)
        assert not N.contains([0.0, 0.1], [0.0, 1.0])


class TestScalingStable:
    def test_conormal_stable(self):
        assert check_scaling_stable(conormal(CH11), CH11)

    def test_full_cone_stable(self):
        assert check_scaling_stable(full_cone(CH11), CH11)

    def test_fixed_mixed_direction_unstable(self):
        c = 1.0 / np.sqrt(2.0)
        mixed = Cone((ConePiece(BaseRegion(h_mode="off_i"),
                                (Cap((c, c), 0.0),)),), 1, 1)
        assert not check_scaling_stable(mixed, CH11)

    def test_x_hyperplane_conormal_stable(self):
        # directions have eta = 0, so the lam-image stays on the same ray
        assert check_scaling_stable(x_hyperplane_conormal(CH21, 0), CH21)


class TestXiProjection:
    def test_x_hyperplane_forces_xi_cone(self):
        gam = x_hyperplane_conormal(CH21, 0)
        xi = xi_projection(gam, (0.5, 1.0))
        assert not xi.is_empty()
        # over I at x1 = 0, all (xi_1, 0, eta) directions appear
        assert xi.contains([0.0, 0.4, 0.0], [1.0, 0.0, 0.0])
        assert xi.contains([0.0, -0.2, 0.0], [0.6, 0.0, 0.8])
        assert not xi.contains([0.3, 0.0, 0.0], [1.0, 0.0, 0.0])
        assert not xi.contains([0.0, 0.0, 0.0], [0.0, 1.0, 0.0])

    def test_conormal_projects_to_empty(self):
        assert xi_projection(conormal(CH21), (0.5, 1.0)).is_empty()

    def test_eta_only_shell_cone_empty(self):
        gam = Cone((ConePiece(BaseRegion(h_mode=("shell", 0.5, 1.0)),
                              (SubSphere(frozenset([2])),)),), 2, 1)
        assert xi_projection(gam, (0.5, 1.0)).is_empty()


class TestLanding:
    def test_eta_cone_lands(self):
        gam = Cone((ConePiece(BaseRegion(h_mode="off_i"),
                              (SubSphere(frozenset([1])),)),), 1, 1)
        assert check_landing(gam)

    def test_x_conormal_fails(self):
        assert not check_landing(x_hyperplane_conormal(CH21, 0))

    def test_base_away_from_i_lands(self):
        gam = Cone((ConePiece(BaseRegion(h_mode=("shell", 0.3, 0.8)),
                              (Cap((1.0, 0.0), 0.0),)),), 1, 1)
        assert check_landing(gam)

    def test_empty_cone_lands(self):
        assert check_landing(Cone((), 1, 1))


class TestConeAlgebra:
    def test_sum_conormal_with_itself(self):
        N = conormal(CH21)
        S = cone_sum(N, N)
        for p, v in [(([0.1, 0.2, 0.0]), [0.0, 0.0, 1.0])]:
            assert S.contains(p, v)
        assert not S.contains([0.1, 0.2, 0.0], [1.0, 0.0, 0.0])

    def test_sum_with_x_conormal(self):
        # N*({x1=0}) + N*(I) lives over x1 = 0 on I with (xi1, 0, eta) dirs
        gam = x_hyperplane_conormal(CH21, 0, over="all")
        S = cone_sum(gam, conormal(CH21))
        assert S.contains([0.0, 0.3, 0.0], [0.7, 0.0, 0.7])
        assert not S.contains([0.0, 0.3, 0.0], [0.0, 1.0, 0.0])
        assert not S.contains([0.5, 0.3, 0.0], [0.7, 0.0, 0.7])

    def test_transversality(self):
        N = conormal(CH11)
        ok, witness = check_transverse(N, N)
        assert not ok and witness is not None
        gam1 = Cone((ConePiece(BaseRegion(h_mode="off_i"),
                               (Cap((0.0, 1.0), 0.0),)),), 1, 1)
        gam2 = Cone((ConePiece(BaseRegion(h_mode="off_i"),
                               (Cap((1.0, 0.0), 0.0),)),), 1, 1)
        ok2, _ = check_transverse(gam1, gam2)
        assert ok2

    def test_union_set_semantics(self):
        A = conormal(CH11)
        B = x_hyperplane_conormal(CH11, 0)
        ab = cone_union(A, B)
        ba = cone_union(B, A)
        assert set(ab.pieces) == set(ba.pieces)
        assert set(cone_union(A, A).pieces) == set(A.pieces)
        abc = cone_union(cone_union(A, B), full_cone(CH11))
        acb = cone_union(A, cone_union(B, full_cone(CH11)))
        assert set(abc.pieces) == set(acb.pieces)

    def test_serialization_readable(self):
        text = conormal(CH11).serialize()
        assert "subsphere" in text and "on_i" in text
        assert Cone((), 1, 1).serialize() == "(empty cone)"


class TestWfEstimate:
    def test_delta_directions(self):
        t = model("delta_derivative", CH11, alpha=0)
        rep = wf_estimate(t, points=[[0.0, 0.0]],
                          directions=[[0.0, 1.0], [1.0, 0.0]])
        by_dir = {v: e for _, v, e in rep.samples}
        assert by_dir[(0.0, 1.0)] < 1.0          # no decay along eta
        assert by_dir[(1.0, 0.0)] > 3.0          # rapid decay along xi
        assert wf_bound_check(rep, conormal(CH11))

    def test_smooth_has_empty_estimate(self):
        t = model("smooth", CH01, g="gauss_h")
        rep = wf_estimate(t, points=[[0.0], [0.4]],
                          directions=[[1.0], [-1.0]])
        assert not rep.slow_samples()
        assert rep.estimated_cone.is_empty()

    def test_nonsmooth_factor_slow_along_x1(self):
        t = model("nonsmooth_factor", CH21)
        rep = wf_estimate(t, points=[[0.0, 0.2, 0.3]],
                          directions=[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0],
                                      [0.0, 0.0, 1.0]])
        by_dir = {v: e for _, v, e in rep.samples}
        assert by_dir[(1.0, 0.0, 0.0)] < 3.0
        assert by_dir[(0.0, 1.0, 0.0)] > 3.0
        assert by_dir[(0.0, 0.0, 1.0)] > 3.0
        assert not wf_bound_check(rep, conormal(CH21))
        V = cone_union(x_hyperplane_conormal(CH21, 0, over="all"),
                       conormal(CH21))
        assert wf_bound_check(rep, V)

    def test_report_invariant(self):
        t = model("delta_derivative", CH11, alpha=0)
        rep = wf_estimate(t, points=[[0.0, 0.0]],
                          directions=[[0.0, 1.0], [1.0, 0.0]])
        for p, v, e in rep.samples:
            inside = rep.estimated_cone.contains(p, v, ang_slack=1e-9)
            assert inside == (e < rep.threshold)
