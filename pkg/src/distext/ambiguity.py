"""Counterterm space of extensions: rank, decomposition, smoothness.

Two extensions of the same t differ by an I-supported distribution
sum_{|alpha| <= m} t_alpha(x) d_h^alpha delta_I.  The coefficients are read
off by pairing the difference against probes

    phi_{alpha, x0}(x, h) = bump(x - x0) h^alpha / alpha! Q(h / r)

with Q an even plateau-normalized bump and r small enough that only the
I-supported part contributes.  The resulting moment system is triangular
in |alpha| (odd Q-derivatives vanish), so extraction is a back-substitution
from |alpha| = m downward.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial

import numpy as np

from .core_types import BumpF, PolyF, ProductF, Term, TestFunction
from .distributions import Distribution, combo, model, pair

__all__ = [
    "Counterterm", "counterterm_basis_size", "counterterm_distribution",
    "counterterm_rank", "decompose_difference", "smooth_coefficient_check",
]

EQUAL_TOL = 1e-6
H_LOCAL_FRACTION = 0.1  # h-probe radius = fraction * cutoff plateau radius


@dataclass
class Counterterm:
    """Extracted coefficients t_alpha sampled on a grid along I."""

    terms: list  # (alpha, np.ndarray of coefficients over x_grid)
    x_grid: list
    m: int

    def __post_init__(self):
        for alpha, coeffs in self.terms:
            if sum(alpha) > self.m:
                raise ValueError("counterterm order exceeds m")
            if not np.all(np.isfinite(coeffs)):
                raise ValueError("non-finite counterterm coefficient")

    def coefficient(self, alpha):
        for a, c in self.terms:
            if tuple(a) == tuple(alpha):
                return c
        return np.zeros(len(self.x_grid))

    def max_abs(self):
        if not self.terms:
            return 0.0
        return max(float(np.max(np.abs(c))) for _, c in self.terms)

    def to_csv_rows(self):
        rows = []
        for alpha, coeffs in self.terms:
            for x0, c in zip(self.x_grid, coeffs):
                rows.append([str(alpha), x0, c])
        return rows


def _multi_indices_upto(d, m):
    if d == 0:
        yield ()
        return
    for head in range(m + 1):
        for tail in _multi_indices_upto(d - 1, m - head):
            yield (head,) + tail


def counterterm_rank(s, d):
    """Number of independent counterterms C(m + d, d), m = floor(-s - d).

    Zero when s + d > 0 (the extension is unique there).
    """
    if s + d > 1e-12:
        return 0
    m = int(np.floor(-s - d + 1e-12))
    return comb(m + d, d)


def counterterm_basis_size(m, d):
    """Brute-force count of multi-indices |alpha| <= m in d variables."""
    return sum(1 for _ in _multi_indices_upto(d, m))


def counterterm_distribution(chart, terms):
    """Distribution sum t_alpha(x) d_h^alpha delta_I from (alpha, coeff) pairs.

    coeff may be a constant or a vectorized callable of x_1.
    """
    parts = []
    for alpha, coeff in terms:
        if callable(coeff):
            parts.append((1.0, model("on_i", chart, alpha=alpha, coeff=coeff)))
        else:
            parts.append((float(coeff), model("on_i", chart, alpha=alpha)))
    return combo(chart, parts, label="counterterm")


def _probe(chart, alpha, x0, r_h, x_radius=0.4, m_max=6):
    """bump(x - x0) h^alpha / alpha! Q(h / r_h), Q(0) = 1 and even."""
    n, d = chart.n, chart.d
    factors = []
    support = []
    x0 = np.atleast_1d(np.asarray(x0, dtype=float)) if n else np.zeros(0)
    for i in range(n):
        lo, hi = chart.box_x[i]
        rad = min(x_radius, x0[i] - lo, hi - x0[i])
        factors.append(BumpF(x0[i], rad))
        support.append([x0[i] - rad, x0[i] + rad])
    for j in range(d):
        q = BumpF(0.0, r_h)
        aj = alpha[j]
        if aj:
            mono = PolyF([0.0] * aj + [1.0 / factorial(aj)])
            factors.append(ProductF(mono, q))
        else:
            factors.append(q)
        support.append([-r_h, r_h])
    return TestFunction(n, d, [Term(1.0, tuple(factors))], support, m_max=m_max)


def _pair_u(u, phi):
    if isinstance(u, Distribution):
        return pair(u, phi)
    return u(phi)  # raw pairing callable


def _q_deriv_at_zero(r_h, order):
    return BumpF(0.0, r_h).deriv(order, np.array([0.0]))[0]


def decompose_difference(tb1, tb2, m, x_grid, r_h=None, x_radius=0.4,
                         equal_tol=EQUAL_TOL):
    """Coefficients of tb1 - tb2 = sum t_alpha d_h^alpha delta_I on x_grid.

    tb1/tb2 are ExtensionResults or Distributions over the same chart.
    Returns "equal" when every extracted coefficient is below equal_tol.
    The estimates are bump-smeared at width x_radius, exact for constant
    coefficients.
    """
    d1 = getattr(tb1, "tbar", tb1)
    d2 = getattr(tb2, "tbar", tb2)
    chart = d1.chart
    n, d = chart.n, chart.d
    if r_h is None:
        r_h = H_LOCAL_FRACTION * 0.5  # a tenth of the default plateau radius
    x_grid = list(x_grid) if n else [()]
    alphas = sorted(_multi_indices_upto(d, m), key=sum, reverse=True)

    if n:
        mass_probe = _probe(chart, (0,) * d, x_grid[0], r_h, x_radius)
        xb = mass_probe.terms[0].factors[0]
        lo, hi = xb.support
        from .quadrature import adaptive_quad
        x_mass = adaptive_quad(lambda u: xb.deriv(0, u), lo, hi,
                               rel_tol=1e-12, abs_tol=1e-15)
    else:
        x_mass = 1.0

    coeffs = {}
    for alpha in alphas:
        vals = np.zeros(len(x_grid))
        for gi, x0 in enumerate(x_grid):
            phi = _probe(chart, alpha, x0, r_h, x_radius)
            raw = _pair_u(d1, phi) - _pair_u(d2, phi)
            corr = 0.0
            for beta in alphas:
                if beta == alpha or any(b < a for a, b in zip(alpha, beta)):
                    continue
                diff = tuple(b - a for a, b in zip(alpha, beta))
                if any(v % 2 for v in diff):
                    continue
                qfac = np.prod([_q_deriv_at_zero(r_h, v) for v in diff])
                cba = np.prod([comb(b, a) for a, b in zip(alpha, beta)])
                corr += ((-1.0) ** sum(beta)) * cba * qfac \
                    * coeffs[beta][gi] * x_mass
            vals[gi] = ((raw - corr) / x_mass) * ((-1.0) ** sum(alpha))
        coeffs[alpha] = vals
    terms = [(alpha, coeffs[alpha]) for alpha in sorted(coeffs)]
    ct = Counterterm(terms=terms, x_grid=list(x_grid), m=m)
    if ct.max_abs() < equal_tol:
        return "equal"
    return ct


def smooth_coefficient_check(u, x_grid, m=1, k_grid=None,
                             threshold=3.0, r_h=0.05, x_radius=0.35,
                             support_tol=1e-9):
    """Windowed-Fourier smoothness evidence for the coefficients of an
    I-supported distribution u = sum t_alpha d^alpha delta_I.

    Pairs u against oscillatory coefficient probes along x_1 and fits the
    decay exponent as in the wave front estimator; True iff every
    coefficient decays faster than k^-threshold at every grid point.
    """
    from .core_types import ExpIF
    chart = u.chart
    n, d = chart.n, chart.d
    if n < 1:
        raise ValueError("coefficient smoothness needs at least one x axis")
    shell_probe = _probe(chart, (0,) * d, [0.0] * n, 0.05, x_radius)
    shifted = TestFunction(
        n, d, [Term(1.0, tuple(
            f if i < n else BumpF(0.7, 0.15)
            for i, f in enumerate(shell_probe.terms[0].factors)))],
        np.array([[lo, hi] for lo, hi in shell_probe.support[:n]]
                 + [[0.55, 0.85]] * d))
    if abs(_pair_u(u, shifted)) > support_tol:
        raise ValueError("distribution is not supported on I")

    from .microlocal import DEFAULT_K_GRID, FIT_K_MIN
    if k_grid is None:
        k_grid = DEFAULT_K_GRID
    karr = np.asarray(k_grid, dtype=float)
    tail = karr >= FIT_K_MIN
    if np.count_nonzero(tail) < 3:
        tail = np.ones(karr.size, dtype=bool)
    kk = np.log(karr[tail])
    for alpha in _multi_indices_upto(d, m):
        for x0 in x_grid:
            x0v = np.atleast_1d(np.asarray(x0, dtype=float))
            mags = []
            for k in k_grid:
                base = _probe(chart, alpha, x0v, r_h, x_radius)
                factors = list(base.terms[0].factors)
                factors[0] = ProductF(factors[0], ExpIF(-k))
                osc = TestFunction(n, d,
                                   [Term(np.exp(1j * k * x0v[0]), tuple(factors))],
                                   base.support, m_max=base.m_max)
                mags.append(max(abs(_pair_u(u, osc)), 1e-300))
            mags = np.asarray(mags)[tail]
            if np.max(mags) < 1e-200:
                continue  # coefficient absent at this order/point
            slope = np.polyfit(kk, np.log(mags), 1)[0]
            if -slope < threshold:
                return False
    return True
