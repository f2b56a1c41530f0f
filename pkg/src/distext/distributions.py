"""Distributions on a chart as pairing functionals, plus the model library.

Kernel-backed models factor as (per-x-axis weights) x (kernel of h alone),
which lets every pairing against tensor-product test functions collapse
into 1-D quadratures: per-axis x-integrals and a radial h-integral (with an
angular trapezoid rule when d = 2).  Kernels singular at h = 0 are
integrated on dyadic shells; a divergent pairing raises PairingError
instead of returning a number.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_types import ChartRegion, scale_testfn
from .quadrature import (
    NonIntegrableError, QuadratureBudgetError, adaptive_quad,
    dyadic_singular_quad, periodic_trapezoid,
)

__all__ = [
    "Distribution", "PairingError", "ScaledPairing", "combo",
    "kernel_h_integral", "model", "pair", "scale_pair", "scaled_pairing",
    "term_x_integral",
]


class PairingError(Exception):
    """Pairing did not converge (non-integrable kernel or support escape)."""


@dataclass
class Distribution:
    """A pairing functional over a chart, possibly singular on I = {h=0}.

    kind is one of:
      kernel -- locally integrable off I: x_factors (per-axis weights,
                None meaning 1) times h_kernel(H) evaluated pointwise;
      delta  -- coeff(x) * d_h^alpha delta_I;
      combo  -- linear combination of other distributions;
      custom -- pair_impl supplied directly (extensions use this).

    meta_degree / meta_cone are advisory claims, re-derived by the tests.
    """

    chart: ChartRegion
    kind: str = "kernel"
    singular_on_I: bool = False
    meta_degree: float | None = None
    meta_cone: object = None
    x_factors: list = field(default_factory=list)
    x_breakpoints: list = field(default_factory=list)
    h_kernel: object = None
    h_singular: bool = False
    delta_alpha: tuple = ()
    parts: list = field(default_factory=list)
    pair_impl: object = None
    label: str = ""

    def pair(self, phi, rel_tol=1e-9):
        return pair(self, phi, rel_tol=rel_tol)

    def __add__(self, other):
        return combo(self.chart, [(1.0, self), (1.0, other)])

    def __sub__(self, other):
        return combo(self.chart, [(1.0, self), (-1.0, other)])

    def __rmul__(self, c):
        return combo(self.chart, [(float(c), self)])


def combo(chart, parts, label=""):
    return Distribution(chart=chart, kind="combo", parts=list(parts),
                        singular_on_I=any(p.singular_on_I for _, p in parts),
                        label=label or "+".join(p.label for _, p in parts))


# ---------------------------------------------------------------------------
# pairing engine


def term_x_integral(t, term, rel_tol=1e-10):
    """Product over x-axes of integral k_i(x) g_i(x) dx for one tensor term."""
    chart = t.chart
    out = 1.0
    for i in range(chart.n):
        f = term.factors[i]
        lo, hi = chart.box_x[i]
        if f.support is not None:
            lo, hi = max(lo, f.support[0]), min(hi, f.support[1])
        if lo >= hi:
            return 0.0
        weight = t.x_factors[i] if i < len(t.x_factors) else None
        brk = t.x_breakpoints[i] if i < len(t.x_breakpoints) else ()
        if weight is None:
            def g(u, f=f):
                return f.deriv(0, u)
        else:
            def g(u, f=f, weight=weight):
                return weight(u) * f.deriv(0, u)
        out = out * adaptive_quad(g, lo, hi, rel_tol=rel_tol, abs_tol=1e-14,
                                  breakpoints=brk)
        if out == 0.0:
            return 0.0
    return out


def _h_support_radius(chart, h_factors):
    """Bounding |h| radius of the term's h-support clipped to the chart box."""
    r2 = 0.0
    for j, f in enumerate(h_factors):
        lo, hi = chart.box_h[j]
        if f.support is not None:
            lo, hi = max(lo, f.support[0]), min(hi, f.support[1])
        if lo > hi:
            return 0.0
        r2 += max(abs(lo), abs(hi)) ** 2
    return float(np.sqrt(r2))


def kernel_h_integral(t, h_factors, mult=None, r_lo=0.0, r_hi=None,
                      rel_tol=1e-10, theta_n=64):
    """Radial h-integral of k_h(h) * mult(|h|) * prod_j g_j(h_j) * r^(d-1).

    d = 1 sums the two sides; d = 2 integrates the angle with a periodic
    trapezoid rule.  A kernel singular at 0 whose range reaches 0 is
    integrated on dyadic shells.
    """
    chart = t.chart
    d = chart.d
    r_cap = _h_support_radius(chart, h_factors)
    r_hi = r_cap if r_hi is None else min(r_hi, r_cap)
    if r_hi <= r_lo:
        return 0.0
    k_h = t.h_kernel

    if d == 1:
        g0 = h_factors[0]

        def integrand(r):
            r = np.asarray(r, dtype=float)
            vals = None
            for sgn in (1.0, -1.0):
                u = sgn * r
                gv = g0.deriv(0, u)
                if k_h is not None:
                    gv = gv * np.asarray(k_h(u[..., None]))
                vals = gv if vals is None else vals + gv
            if mult is not None:
                vals = vals * mult(r)
            return vals
    elif d == 2:
        g0, g1 = h_factors

        def integrand(r):
            r = np.asarray(r, dtype=float)
            out = np.zeros(r.shape, dtype=complex)

            for idx, rv in np.ndenumerate(r):
                def ang(theta, rv=rv):
                    h1 = rv * np.cos(theta)
                    h2 = rv * np.sin(theta)
                    gv = g0.deriv(0, h1) * g1.deriv(0, h2)
                    if k_h is not None:
                        gv = gv * np.asarray(k_h(np.stack([h1, h2], axis=-1)))
                    return gv

                out[idx] = periodic_trapezoid(ang, n=theta_n, tol=rel_tol)
            out = out * r
            if mult is not None:
                out = out * mult(r)
            if not np.any(out.imag):
                out = out.real
            return out
    else:
        raise NotImplementedError("transverse dimension d <= 2 at desk scale")

    singular = t.h_singular and r_lo == 0.0
    try:
        if singular:
            return dyadic_singular_quad(integrand, r_hi, rel_tol=rel_tol)
        return adaptive_quad(integrand, max(r_lo, 0.0), r_hi,
                             rel_tol=rel_tol, abs_tol=1e-14)
    except NonIntegrableError as exc:
        raise PairingError(f"pairing does not converge: {exc}") from exc
    except QuadratureBudgetError as exc:
        raise PairingError(f"pairing quadrature failed: {exc}") from exc


def _pair_kernel(t, phi, rel_tol, mult=None, r_lo=0.0, r_hi=None):
    total = 0.0
    for term in phi.terms:
        xint = term_x_integral(t, term, rel_tol=rel_tol * 0.1)
        if xint == 0.0:
            continue
        hint = kernel_h_integral(t, term.factors[phi.n:], mult=mult,
                                 r_lo=r_lo, r_hi=r_hi, rel_tol=rel_tol * 0.1)
        total = total + term.coeff * xint * hint
    return total


def _pair_delta(t, phi, rel_tol):
    alpha = t.delta_alpha if t.delta_alpha else (0,) * t.chart.d
    sign = (-1.0) ** sum(alpha)
    total = 0.0
    for term in phi.terms:
        hval = 1.0
        for j, f in enumerate(term.factors[phi.n:]):
            hval = hval * f.deriv(alpha[j], np.array([0.0]))[0]
        if hval == 0.0:
            continue
        xint = term_x_integral(t, term, rel_tol=rel_tol * 0.1)
        total = total + sign * term.coeff * xint * hval
    return total


def pair(t, phi, rel_tol=1e-9):
    """<t, phi> by adaptive quadrature (exact functional for delta kinds).

    Raises PairingError when the integral is not absolutely convergent,
    e.g. a kernel with a non-integrable singularity probed across I.
    """
    if t.kind == "combo":
        return sum(c * pair(p, phi, rel_tol=rel_tol) for c, p in t.parts)
    if t.kind == "custom":
        return t.pair_impl(phi)
    if t.kind == "delta":
        return _pair_delta(t, phi, rel_tol)
    if t.kind == "kernel":
        return _pair_kernel(t, phi, rel_tol)
    raise ValueError(f"unknown distribution kind {t.kind!r}")


def scale_pair(t, phi, lam, s):
    """<lam^-s t_lam, phi> through the duality rule
    <t_lam, phi> = lam^-d <t, phi_(1/lam)>."""
    if not (0.0 < lam <= 1.0):
        raise ValueError("lam must lie in (0, 1]")
    box = t.chart.box
    supp = phi.support
    if np.any(supp[:, 0] < box[:, 0] - 1e-9) or np.any(supp[:, 1] > box[:, 1] + 1e-9):
        raise PairingError("test function support escapes the chart")
    shrunk = scale_testfn(phi, 1.0 / lam)
    return lam ** (-s - t.chart.d) * pair(t, shrunk)


@dataclass
class ScaledPairing:
    """Raw scaling data <lam^-s t_lam, phi> over a decreasing lambda grid."""

    lambda_grid: np.ndarray
    values: np.ndarray
    s_used: float

    def __post_init__(self):
        g = np.asarray(self.lambda_grid, dtype=float)
        if g.ndim != 1 or np.any(np.diff(g) >= 0) or g[0] > 1.0 or g[-1] <= 0.0:
            raise ValueError("lambda grid must be strictly decreasing in (0, 1]")


def scaled_pairing(t, phi, grid, s):
    vals = np.array([scale_pair(t, phi, lam, s) for lam in grid])
    return ScaledPairing(np.asarray(grid, dtype=float), vals, float(s))


# ---------------------------------------------------------------------------
# model library


def _power_law_kernel(a):
    def k(H):
        H = np.asarray(H, dtype=float)
        r = np.sqrt(np.sum(H * H, axis=-1))
        return r ** (-a)
    return k


def _power_law_log_kernel(a):
    def k(H):
        H = np.asarray(H, dtype=float)
        r = np.sqrt(np.sum(H * H, axis=-1))
        return r ** (-a) * np.log(r)
    return k


def _one_sided_kernel(a):
    def k(H):
        H = np.asarray(H, dtype=float)
        h = H[..., 0]
        return np.where(h > 0.0, np.where(h > 0.0, h, 1.0) ** (-a), 0.0)
    return k


def _nonsmooth_f(x):
    x = np.asarray(x, dtype=float)
    return 2.0 + np.sign(x) * np.abs(x) ** (1.0 / 3.0)


_SMOOTH_REGISTRY = {
    "one": None,  # constant kernel 1
    "cos_h": lambda H: np.cos(np.sum(np.asarray(H), axis=-1)),
    "gauss_h": lambda H: np.exp(-np.sum(np.asarray(H) ** 2, axis=-1)),
}


def model(name, chart=None, **params):
    """Model registry addressable by string id.

    power_law(a): |h|^-a            delta_derivative(alpha)
    one_sided(a): theta(h) h^-a     nonsmooth_factor: f(x_1) * 1
    smooth(g): smooth kernel        power_law_log(a): |h|^-a log|h|
    on_i(coeff, alpha): coeff(x) d_h^alpha delta_I
    """
    if chart is None:
        chart = ChartRegion(0, 1)
    d = chart.d
    from .microlocal import Cone, conormal, x_hyperplane_conormal

    if name in ("power_law", "power_law_log"):
        a = float(params["a"])
        if a <= 0:
            raise ValueError(f"{name} needs a > 0")
        kern = _power_law_kernel(a) if name == "power_law" else _power_law_log_kernel(a)
        lbl = f"|h|^-{a}" + (" log|h|" if name.endswith("log") else "")
        return Distribution(
            chart=chart, kind="kernel", h_kernel=kern, h_singular=True,
            singular_on_I=a >= d, meta_degree=-a, meta_cone=conormal(chart),
            label=lbl)
    if name == "one_sided":
        a = float(params["a"])
        if d != 1:
            raise ValueError("one_sided is a d = 1 model")
        if a <= 0:
            raise ValueError("one_sided needs a > 0")
        return Distribution(
            chart=chart, kind="kernel", h_kernel=_one_sided_kernel(a),
            h_singular=True, singular_on_I=a >= 1, meta_degree=-a,
            meta_cone=conormal(chart), label=f"theta(h) h^-{a}")
    if name == "delta_derivative":
        alpha = params.get("alpha", 0)
        if isinstance(alpha, int):
            alpha = (alpha,) + (0,) * (d - 1)
        alpha = tuple(int(a) for a in alpha)
        if len(alpha) != d or any(a < 0 for a in alpha):
            raise ValueError("alpha must be a multi-index over the h-axes")
        return Distribution(
            chart=chart, kind="delta", delta_alpha=alpha,
            meta_degree=-d - sum(alpha), meta_cone=conormal(chart),
            label=f"d^{alpha} delta_I")
    if name == "nonsmooth_factor":
        if chart.n < 1:
            raise ValueError("nonsmooth_factor needs n >= 1")
        xf = [None] * chart.n
        xb = [()] * chart.n
        xf[0] = _nonsmooth_f
        xb[0] = (0.0,)
        return Distribution(
            chart=chart, kind="kernel", x_factors=xf, x_breakpoints=xb,
            h_kernel=None, h_singular=False, singular_on_I=False,
            meta_degree=0.0, meta_cone=x_hyperplane_conormal(chart, 0),
            label="f(x1)*1")
    if name == "smooth":
        g = params.get("g", "one")
        kern = _SMOOTH_REGISTRY[g] if isinstance(g, str) else g
        return Distribution(
            chart=chart, kind="kernel", h_kernel=kern, h_singular=False,
            singular_on_I=False, meta_degree=0.0, meta_cone=Cone(()),
            label=f"smooth({g})")
    if name == "on_i":
        alpha = params.get("alpha", 0)
        if isinstance(alpha, int):
            alpha = (alpha,) + (0,) * (d - 1)
        alpha = tuple(int(a) for a in alpha)
        coeff = params.get("coeff")
        xf = [None] * chart.n
        xb = [()] * chart.n
        if coeff is not None:
            xf[0] = coeff
            xb[0] = tuple(params.get("coeff_breakpoints", (0.0,)))
        return Distribution(
            chart=chart, kind="delta", delta_alpha=alpha, x_factors=xf,
            x_breakpoints=xb, meta_degree=-d - sum(alpha),
            meta_cone=conormal(chart), label=f"coeff(x) d^{alpha} delta_I")
    raise ValueError(f"unknown model {name!r}")
