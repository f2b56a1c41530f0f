"""Weak-homogeneity degree estimation and membership checks.

The raw data are pairings <t_lam, phi_i> over a geometric lambda grid.
Slopes are fitted in log-log on the small-lambda window (the asymptotic
regime; counterterm transients near lam = 1 would otherwise bias the fit),
the degree estimate is the most singular probe's slope, and a logarithmic
factor is detected by comparing a pure power-law fit against one with a
log(lambda) basis term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_types import BumpF, PolyF, ProductF, Term, TestFunction, TrigF
from .distributions import PairingError, scale_pair
from .euler_flows import rk45

__all__ = [
    "DEFAULT_LAMBDA_GRID", "DegenerateFitError", "RhoIndependenceReport",
    "ScalingReport", "check_membership", "default_lambda_grid",
    "default_probes", "estimate_degree", "flow_scale_pair",
    "rho_independence_check",
]


class DegenerateFitError(Exception):
    """Not enough usable grid points to fit a scaling exponent."""


def default_lambda_grid(n_points=40, lam_min=1e-4):
    return np.geomspace(1.0, lam_min, n_points)


DEFAULT_LAMBDA_GRID = default_lambda_grid()

# Fit window: only lambdas at or below this enter slope fits.
FIT_LAMBDA_MAX = 1e-2
VALUE_FLOOR = 1e-250


def default_probes(chart, straddle=True, m_max=6):
    """Stock probe family with varied supports and oscillation.

    Straddling probes (plain, odd, h^2-weighted, modulated) are the ones
    that see I-supported distributions; shell probes keep clear of I and
    are mandatory for kernels that are non-integrable at h = 0.
    """
    n, d = chart.n, chart.d
    r0 = chart.h_ball_radius()
    x_ctr = [0.0] * n
    x_rad = [0.8 * min(-chart.box_x[i, 0], chart.box_x[i, 1]) for i in range(n)]

    def tensor(h_factors, h_support):
        factors = tuple(BumpF(c, r) for c, r in zip(x_ctr, x_rad)) + h_factors
        support = np.array([[c - r, c + r] for c, r in zip(x_ctr, x_rad)]
                           + list(h_support))
        return TestFunction(n, d, [Term(1.0, factors)], support, m_max=m_max)

    probes = []
    if straddle:
        for rad in (0.45 * r0, 0.8 * r0):
            hf = tuple(BumpF(0.0, rad) for _ in range(d))
            probes.append(tensor(hf, [[-rad, rad]] * d))
        odd = (ProductF(PolyF([0.0, 1.0]), BumpF(0.0, 0.6 * r0)),) + tuple(
            BumpF(0.0, 0.6 * r0) for _ in range(d - 1))
        probes.append(tensor(odd, [[-0.6 * r0, 0.6 * r0]] * d))
        sq = (ProductF(PolyF([0.0, 0.0, 1.0]), BumpF(0.0, 0.6 * r0)),) + tuple(
            BumpF(0.0, 0.6 * r0) for _ in range(d - 1))
        probes.append(tensor(sq, [[-0.6 * r0, 0.6 * r0]] * d))
        mod = (ProductF(TrigF(3.0, 0.7), BumpF(0.0, 0.5 * r0)),) + tuple(
            BumpF(0.0, 0.5 * r0) for _ in range(d - 1))
        probes.append(tensor(mod, [[-0.5 * r0, 0.5 * r0]] * d))
        if d > 1:
            # odd along every transverse axis, for mixed delta derivatives
            allodd = tuple(ProductF(PolyF([0.0, 1.0]), BumpF(0.0, 0.6 * r0))
                           for _ in range(d))
            probes.append(tensor(allodd, [[-0.6 * r0, 0.6 * r0]] * d))
    centers = [0.5 * r0, 0.35 * r0, 0.7 * r0]
    radii = [0.25 * r0, 0.15 * r0, 0.2 * r0]
    for c, r in zip(centers, radii):
        hf = (BumpF(c, r),) + tuple(BumpF(0.0, 0.5 * r0) for _ in range(d - 1))
        supp = [[c - r, c + r]] + [[-0.5 * r0, 0.5 * r0]] * (d - 1)
        probes.append(tensor(hf, supp))
    return probes


@dataclass
class ScalingReport:
    s_hat: float
    log_flag: bool
    residual: float
    probes: list
    lambda_grid: np.ndarray
    raw: np.ndarray
    slopes: list = field(default_factory=list)
    binding_probe: int = -1

    def __post_init__(self):
        g = np.asarray(self.lambda_grid, dtype=float)
        if np.any(np.diff(g) >= 0) or g[0] > 1.0 or g[-1] <= 0.0:
            raise ValueError("lambda grid must be strictly decreasing in (0, 1]")
        if not np.isfinite(self.s_hat) or self.residual < 0:
            raise ValueError("report fields out of range")

    def to_csv_rows(self):
        rows = []
        for i, lam in enumerate(self.lambda_grid):
            rows.append([lam] + list(self.raw[i]))
        return rows


def _fit_window(grid):
    return np.asarray(grid) <= FIT_LAMBDA_MAX


def _power_fit(L, logV):
    """Least-squares log|V| = c0 + c1 L; returns (slope, rms residual)."""
    A = np.stack([np.ones_like(L), L], axis=1)
    coef, *_ = np.linalg.lstsq(A, logV, rcond=None)
    res = logV - A @ coef
    return float(coef[1]), float(np.sqrt(np.mean(res ** 2)))


def _amplitude_scan(L, V, s_guess, half_width=0.45, steps=91):
    """Relative residuals of V = C lam^c (pure power) versus
    V = lam^c (a + b log lam), scanning the exponent around s_guess.

    Working with W = V e^{-c L} keeps every lambda decade on equal
    footing.  Returns (r_pow, r_log, s_log): best relative rms residuals
    of the two amplitude models and the log-model exponent.
    """
    cs = s_guess + np.linspace(-half_width, half_width, steps)
    r_pow = np.inf
    r_log = np.inf
    s_log = s_guess
    design = np.stack([np.ones_like(L), L], axis=1)
    for c in cs:
        W = V * np.exp(-c * L)
        scale = float(np.sqrt(np.mean(W ** 2)))
        if scale == 0.0:
            continue
        r1 = float(np.sqrt(np.mean((W - np.mean(W)) ** 2))) / scale
        coef, *_ = np.linalg.lstsq(design, W, rcond=None)
        r2 = float(np.sqrt(np.mean((W - design @ coef) ** 2))) / scale
        r_pow = min(r_pow, r1)
        if r2 < r_log:
            r_log = r2
            s_log = float(c)
    return r_pow, r_log, s_log


def _raw_matrix(t, probes, grid, s, pair_values=None):
    raw = np.zeros((len(grid), len(probes)))
    for j, phi in enumerate(probes):
        for i, lam in enumerate(grid):
            if pair_values is not None:
                v = pair_values(phi, lam)
            else:
                v = scale_pair(t, phi, lam, s)
            if not np.isfinite(v):
                raise PairingError(f"pairing overflowed at lam = {lam}")
            raw[i, j] = v
    return raw


def estimate_degree(t, probes=None, grid=None, log_improvement=10.0,
                    pair_values=None):
    """Fit |<t_lam, phi_i>| ~ lam^slope_i per probe; s_hat = min_i slope_i.

    log_flag is set when adding a log(lambda) basis term improves the
    binding probe's residual by at least `log_improvement` (and the pure
    power fit misfits by more than fit noise).
    """
    if probes is None:
        probes = default_probes(t.chart, straddle=not t.singular_on_I)
    if grid is None:
        grid = DEFAULT_LAMBDA_GRID
    grid = np.asarray(grid, dtype=float)
    raw = _raw_matrix(t, probes, grid, 0.0, pair_values=pair_values)
    win = _fit_window(grid)
    L = np.log(grid)
    slopes, scans = [], []
    for j in range(len(probes)):
        V = np.abs(raw[:, j])
        usable = win & (V > VALUE_FLOOR * max(1.0, V.max()))
        if np.count_nonzero(usable) < 4:
            slopes.append(None)
            scans.append(None)
            continue
        slope, _ = _power_fit(L[usable], np.log(V[usable]))
        scan = _amplitude_scan(L[usable], raw[usable, j], slope)
        slopes.append(slope)
        scans.append(scan)
    if all(sl is None for sl in slopes):
        raise DegenerateFitError(
            "no probe produced 4 usable grid points; widen the probe family")
    binding = min((j for j in range(len(probes)) if slopes[j] is not None),
                  key=lambda j: slopes[j])
    res_pow, res_log, s_log = scans[binding]
    log_flag = bool(res_pow > 3e-4
                    and res_pow >= log_improvement * max(res_log, 1e-12))
    s_hat = s_log if log_flag else slopes[binding]
    return ScalingReport(
        s_hat=float(s_hat), log_flag=log_flag, residual=res_pow,
        probes=[getattr(p, "label", f"probe{k}") for k, p in enumerate(probes)],
        lambda_grid=grid, raw=raw, slopes=slopes, binding_probe=binding)


def check_membership(t, s, probes=None, grid=None, growth_tol=-0.02,
                     pair_values=None):
    """Evidence that lam^-s t_lam stays bounded over the probe family.

    True iff no usable probe shows a growth trend toward lam -> 0: the
    fitted slope of lam^-s <t_lam, phi> in log-log must be >= growth_tol.
    Returns (flag, witness) with per-probe slopes; membership at s implies
    membership at every s' <= s on the same data.
    """
    if probes is None:
        probes = default_probes(t.chart, straddle=not t.singular_on_I)
    if grid is None:
        grid = DEFAULT_LAMBDA_GRID
    grid = np.asarray(grid, dtype=float)
    raw = _raw_matrix(t, probes, grid, s, pair_values=pair_values)
    win = _fit_window(grid)
    L = np.log(grid)
    witness = {"slopes": [], "sup": float(np.max(np.abs(raw)))}
    ok = True
    any_usable = False
    for j in range(len(probes)):
        W = np.abs(raw[:, j])
        usable = win & (W > VALUE_FLOOR * max(1.0, W.max()))
        if np.count_nonzero(usable) < 4:
            witness["slopes"].append(None)
            continue
        any_usable = True
        slope, _ = _power_fit(L[usable], np.log(W[usable]))
        witness["slopes"].append(slope)
        if slope < growth_tol:
            ok = False
            witness["violating_probe"] = j
    if not any_usable:
        raise DegenerateFitError("no probe produced 4 usable grid points")
    return ok, witness


# ---------------------------------------------------------------------------
# scaling along a general Euler flow


def _require_h_only(rho):
    if rho.A:
        raise NotImplementedError(
            "flow-pullback pairing supports fields that do not move x (A = 0)")
    n = rho.chart.n
    for poly in rho.B.values():
        if any(e != 0 for expo in poly.terms for e in expo[:n]):
            raise NotImplementedError(
                "flow-pullback pairing needs x-independent B coefficients")


def _h_flow_map(rho, lam, grid_points=1500):
    """Vectorized h -> h-component of e^{log lam rho}(x, h) (x untouched).

    For d = 1 the flow is integrated once on a dense signed geometric grid
    (one batched solve) and interpolated in log|h| afterwards; the flow is
    asymptotically linear near 0, where log-log interpolation is exact.
    """
    n, d = rho.chart.n, rho.chart.d
    if lam == 1.0:
        return lambda h: np.asarray(h, dtype=float)

    def rhs(t, hflat):
        h = hflat.reshape(-1, d)
        out = h.copy()
        for (i, j, k), poly in rho.B.items():
            pts = np.concatenate([np.zeros((h.shape[0], n)), h], axis=1)
            out[:, k] += h[:, i] * h[:, j] * poly(pts)
        return out.reshape(-1)

    T = float(np.log(lam))

    if d == 1:
        # flows preserve the sign of h (the field is tangent to I), so each
        # side interpolates its own magnitude in log-log coordinates
        rmax = rho.chart.h_ball_radius()
        base = np.geomspace(1e-9, rmax, grid_points)
        nodes = np.concatenate([base, -base])
        res, _ = rk45(rhs, 0.0, T, nodes, rtol=1e-11, atol=1e-13)
        logb = np.log(base)
        pos_mag = np.log(np.abs(res[:grid_points]))
        neg_mag = np.log(np.abs(res[grid_points:]))

        def apply_signed(h):
            h = np.asarray(h, dtype=float)
            shape = h.shape
            flat = h.reshape(-1)
            out = np.zeros_like(flat)
            small = np.abs(flat) < base[0]
            li = np.log(np.clip(np.abs(flat), base[0], base[-1]))
            p = flat > 0
            m = ~p & (flat < 0)
            out[p] = np.exp(np.interp(li[p], logb, pos_mag))
            out[m] = -np.exp(np.interp(li[m], logb, neg_mag))
            out[small] = lam * flat[small]  # linearization, exact to O(h^2)
            return out.reshape(shape)

        return apply_signed

    def apply_nd(h):
        h = np.asarray(h, dtype=float)
        single = h.ndim == 1
        hh = h[None, :] if single else h
        res, _ = rk45(rhs, 0.0, T, hh.reshape(-1), rtol=1e-11, atol=1e-12)
        res = res.reshape(hh.shape)
        return res[0] if single else res

    return apply_nd


def flow_scale_pair(t, phi, rho, lam, s, rel_tol=1e-9):
    """<lam^-s e^{log lam rho *} t, phi> for kernel or plain delta models.

    Kernel route: integral of t(S(lam)(p)) phi(p) dp with the h-flow
    integrated numerically per quadrature node.  The delta route uses the
    exact variational fact that the h-Jacobian of S(lam) on I is lam * Id
    for every normal-form Euler field.
    """
    from .distributions import kernel_h_integral, term_x_integral
    if not (0.0 < lam <= 1.0):
        raise ValueError("lam must lie in (0, 1]")
    _require_h_only(rho)
    chart = t.chart
    if t.kind == "delta" and not any(t.delta_alpha):
        total = 0.0
        for term in phi.terms:
            hval = 1.0
            for f in term.factors[phi.n:]:
                hval = hval * f.deriv(0, np.array([0.0]))[0]
            if hval == 0.0:
                continue
            total += term.coeff * term_x_integral(t, term) * hval
        return lam ** (-s - chart.d) * total
    if t.kind != "kernel":
        raise NotImplementedError("flow scaling implemented for kernel models"
                                  " and plain delta_I")
    fmap = _h_flow_map(rho, lam)
    kern = t.h_kernel

    if chart.d == 1:
        def flowed_kernel(H):
            Hf = fmap(np.asarray(H, dtype=float).reshape(-1, 1))
            return np.asarray(kern(Hf)) if kern is not None else np.ones(len(Hf))
    else:
        def flowed_kernel(H):
            Hf = fmap(np.asarray(H, dtype=float).reshape(-1, chart.d))
            return np.asarray(kern(Hf)) if kern is not None else np.ones(len(Hf))

    proxy_kernel = _FlowedKernelView(t, flowed_kernel)
    total = 0.0
    for term in phi.terms:
        xint = term_x_integral(t, term, rel_tol=rel_tol * 0.1)
        if xint == 0.0:
            continue
        hint = kernel_h_integral(proxy_kernel, term.factors[phi.n:],
                                 rel_tol=rel_tol * 0.1)
        total += term.coeff * xint * hint
    return lam ** (-s) * total


class _FlowedKernelView:
    """Kernel view with the h-kernel precomposed with a flow map."""

    def __init__(self, t, flowed_kernel):
        self.chart = t.chart
        self.h_kernel = flowed_kernel
        self.h_singular = t.h_singular
        self.x_factors = t.x_factors
        self.x_breakpoints = t.x_breakpoints


@dataclass
class RhoIndependenceReport:
    agree: bool
    member: tuple
    s_hat: tuple
    slopes: tuple


def rho_independence_check(t, rho1, rho2, s, probes=None, grid=None):
    """Membership under the scaling flows of two Euler fields must agree.

    Returns a report with the per-field boolean and fitted degree (minimum
    probe slope), so callers can also compare the numeric estimates.
    """
    if probes is None:
        straddle = not t.singular_on_I
        fam = default_probes(t.chart, straddle=straddle)
        probes = fam[:3] if not straddle else [fam[0], fam[5], fam[6]]
    if grid is None:
        grid = default_lambda_grid(20, 1e-3)
    results = []
    for rho in (rho1, rho2):
        def pv(phi, lam, rho=rho):
            return flow_scale_pair(t, phi, rho, lam, s, rel_tol=1e-7)
        ok, wit = check_membership(t, s, probes=probes, grid=grid,
                                   pair_values=pv)
        slopes = [sl for sl in wit["slopes"] if sl is not None]
        # slopes are of lam^-s <t_lam, phi>; shift back to raw degree
        s_fit = (min(slopes) + s) if slopes else float("nan")
        results.append((ok, s_fit, wit["slopes"]))
    agree = results[0][0] == results[1][0]
    return RhoIndependenceReport(
        agree=agree,
        member=(results[0][0], results[1][0]),
        s_hat=(results[0][1], results[1][1]),
        slopes=(results[0][2], results[1][2]))
