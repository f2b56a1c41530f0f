"""Renormalized products: transversality gate, kernel product off I,
extension across I with the combined cone.

Products are kernel level: both factors must expose pointwise kernels off
I (locally integrable there), which is exactly the regime where the
pointwise product represents the distributional one.  The refusal path is
driven by the cone algebra: opposite covectors over a shared base point
block the product before any kernel is touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import Distribution
from .extension import extend
from .microlocal import check_landing, check_transverse, cone_sum, cone_union

__all__ = [
    "ProductError", "ProductRequest", "TransversalityError",
    "hormander_product", "renormalize_product",
]


class ProductError(Exception):
    """Product is not kernel-backed or violates a cone condition."""


class TransversalityError(ProductError):
    """Gamma_1 meets -Gamma_2; carries the violating (region, direction)."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


@dataclass
class ProductRequest:
    u1: Distribution
    u2: Distribution
    s1: float
    s2: float
    gamma1: object
    gamma2: object
    s_target: float = None

    def __post_init__(self):
        if self.s_target is None:
            # any s < s1 + s2 is admissible; stay just below the sum
            self.s_target = self.s1 + self.s2 - 0.01
        if not self.s_target < self.s1 + self.s2:
            raise ValueError("need s_target < s1 + s2")
        for g in (self.gamma1, self.gamma2):
            if not check_landing(g):
                raise ValueError("factor cone violates the conormal landing "
                                 "condition")


def _combined_x_factors(u1, u2):
    n = u1.chart.n
    factors, breaks = [], []
    for i in range(n):
        f1 = u1.x_factors[i] if i < len(u1.x_factors) else None
        f2 = u2.x_factors[i] if i < len(u2.x_factors) else None
        if f1 is None and f2 is None:
            factors.append(None)
        elif f1 is None:
            factors.append(f2)
        elif f2 is None:
            factors.append(f1)
        else:
            factors.append(lambda x, f1=f1, f2=f2: f1(x) * f2(x))
        b1 = tuple(u1.x_breakpoints[i]) if i < len(u1.x_breakpoints) else ()
        b2 = tuple(u2.x_breakpoints[i]) if i < len(u2.x_breakpoints) else ()
        breaks.append(tuple(sorted(set(b1) | set(b2))))
    return factors, breaks


def hormander_product(u1, u2, gamma1, gamma2, ang_slack=1e-9):
    """Pointwise-product kernel on U minus I under the transversality gate.

    Refuses with TransversalityError (and the violating base point and
    direction) when gamma1 meets -gamma2; requires kernel-backed factors
    otherwise.
    """
    ok, witness = check_transverse(gamma1, gamma2, ang_slack=ang_slack)
    if not ok:
        base, direction = witness
        raise TransversalityError(
            f"cones contain opposite covectors over base {base} along "
            f"direction {np.round(direction, 6)}", witness=witness)
    if u1.kind != "kernel" or u2.kind != "kernel":
        raise ProductError("both factors must be kernel-backed off I")
    if u1.chart is not u2.chart and (u1.chart.n, u1.chart.d) != \
            (u2.chart.n, u2.chart.d):
        raise ProductError("factors live on different charts")
    k1, k2 = u1.h_kernel, u2.h_kernel

    if k1 is None and k2 is None:
        kern = None
    elif k1 is None:
        kern = k2
    elif k2 is None:
        kern = k1
    else:
        def kern(H, k1=k1, k2=k2):
            return np.asarray(k1(H)) * np.asarray(k2(H))

    xf, xb = _combined_x_factors(u1, u2)
    s1 = u1.meta_degree if u1.meta_degree is not None else 0.0
    s2 = u2.meta_degree if u2.meta_degree is not None else 0.0
    cone = cone_union(cone_sum(gamma1, gamma2), gamma1, gamma2)
    d = u1.chart.d
    return Distribution(
        chart=u1.chart, kind="kernel", x_factors=xf, x_breakpoints=xb,
        h_kernel=kern, h_singular=u1.h_singular or u2.h_singular,
        singular_on_I=(s1 + s2) + d <= 1e-12 or u1.singular_on_I
        or u2.singular_on_I,
        meta_degree=s1 + s2, meta_cone=cone,
        label=f"({u1.label})*({u2.label})")


def renormalize_product(req, chi, rel_tol=1e-9, estimate=False):
    """Extend the Hormander product across I at degree s_target.

    The combined cone (Gamma_1 + Gamma_2) u Gamma_1 u Gamma_2 must land
    conormally; the result's wave front bound is that cone plus N*(I).
    """
    prod = hormander_product(req.u1, req.u2, req.gamma1, req.gamma2)
    gamma = prod.meta_cone
    if not check_landing(gamma):
        raise ProductError("combined cone violates the conormal landing "
                           "condition")
    return extend(prod, req.s_target, chi, cone_in=gamma, rel_tol=rel_tol,
                  estimate=estimate)
