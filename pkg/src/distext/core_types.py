"""Test functions, cutoffs and Taylor operators on a flat chart.

A chart splits coordinates into x (along the subspace {h=0}) and h
(transverse).  Test functions are finite sums of tensor products of 1-D
factors with closed-form derivatives of every order we need; this keeps
all pairings factorizable into 1-D quadratures and makes derivative
evaluation exact instead of finite-differenced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as npoly

from .quadrature import gauss_legendre

__all__ = [
    "ChartRegion", "TestFunction", "Cutoff", "PsiFunction",
    "BumpF", "PolyF", "TrigF", "ExpIF", "ConstF", "ScaledF", "DerivF",
    "ProductF", "Term",
    "make_bump", "scale_testfn", "seminorm", "taylor_poly",
    "taylor_remainder", "taylor_poly_tf", "taylor_remainder_tf",
    "make_cutoff", "psi_of",
]

TAYLOR_GL_ORDER = 32  # Gauss-Legendre order for the remainder t-integral


# ---------------------------------------------------------------------------
# chart geometry


def _as_box(box, dim_name):
    b = np.atleast_2d(np.asarray(box, dtype=float))
    if b.shape[1] != 2 or np.any(b[:, 0] > b[:, 1]):
        raise ValueError(f"{dim_name} must be a (k, 2) array of lo <= hi rows")
    return b


@dataclass(frozen=True)
class ChartRegion:
    """Box chart U = box_x x box_h with the subspace I = {h = 0}.

    box_h must contain 0 so that (x, h) in U implies (x, lam*h) in U for
    every lam in (0, 1].
    """

    n: int
    d: int
    box_x: np.ndarray
    box_h: np.ndarray

    def __init__(self, n, d, box_x=None, box_h=None):
        if d < 1 or n < 0:
            raise ValueError("need d >= 1 and n >= 0")
        if box_x is None:
            box_x = np.tile([-1.0, 1.0], (n, 1))
        if box_h is None:
            box_h = np.tile([-1.0, 1.0], (d, 1))
        bx = _as_box(box_x, "box_x") if n else np.zeros((0, 2))
        bh = _as_box(box_h, "box_h")
        if bx.shape[0] != n or bh.shape[0] != d:
            raise ValueError("box shapes inconsistent with (n, d)")
        if np.any(bh[:, 0] > 0.0) or np.any(bh[:, 1] < 0.0):
            raise ValueError("box_h must contain h = 0")
        object.__setattr__(self, "n", int(n))
        object.__setattr__(self, "d", int(d))
        object.__setattr__(self, "box_x", bx)
        object.__setattr__(self, "box_h", bh)

    @property
    def dim(self):
        return self.n + self.d

    @property
    def box(self):
        return np.vstack([self.box_x, self.box_h]) if self.n else self.box_h

    def h_ball_radius(self):
        """Largest r with {|h| <= r} inside box_h."""
        return float(np.min(np.minimum(-self.box_h[:, 0], self.box_h[:, 1])))

    def contains(self, p, slack=1e-12):
        p = np.asarray(p, dtype=float)
        b = self.box
        return bool(np.all(p >= b[:, 0] - slack) and np.all(p <= b[:, 1] + slack))


# ---------------------------------------------------------------------------
# 1-D factors with exact derivatives


class Factor1D:
    """One axis of a tensor-product term; subclasses give exact derivatives."""

    support = None  # (lo, hi) or None when not compactly supported

    def deriv(self, k, u):
        raise NotImplementedError

    def value(self, u):
        return self.deriv(0, u)


def _bump_deriv_polys(k_max):
    """P_k with d^k/du^k exp(-1/(1-u^2)) = P_k/(1-u^2)^(2k) * exp(-1/(1-u^2))."""
    polys = [np.array([1.0])]
    w = np.array([1.0, 0.0, -1.0])  # 1 - u^2
    u = np.array([0.0, 1.0])
    for k in range(k_max):
        pk = polys[-1]
        if k == 0:
            polys.append(np.array([0.0, -2.0]))  # P_1 = -2u
            continue
        inner = npoly.polyadd(npoly.polymul(npoly.polyder(pk), w),
                              4.0 * k * npoly.polymul(u, pk))
        nxt = npoly.polysub(npoly.polymul(inner, w),
                            2.0 * npoly.polymul(u, pk))
        polys.append(nxt)
    return polys


_BUMP_POLYS = _bump_deriv_polys(12)
_BUMP_W_MIN = 1.45e-3  # below this 1-u^2, exp(-1/(1-u^2)) underflows anyway


class BumpF(Factor1D):
    """exp(1 - 1/(1 - v^2)) with v = (u - center)/radius; peak value 1."""

    def __init__(self, center=0.0, radius=1.0):
        if radius <= 0:
            raise ValueError("bump radius must be positive")
        self.center = float(center)
        self.radius = float(radius)
        self.support = (self.center - self.radius, self.center + self.radius)

    def deriv(self, k, u):
        v = (np.asarray(u, dtype=float) - self.center) / self.radius
        w = 1.0 - v * v
        out = np.zeros_like(v)
        mask = w > _BUMP_W_MIN
        if np.any(mask):
            vm, wm = v[mask], w[mask]
            core = np.exp(1.0 - 1.0 / wm)
            if k == 0:
                out[mask] = core
            else:
                pk = npoly.polyval(vm, _BUMP_POLYS[k])
                wpow = wm
                for _ in range(2 * k - 1):  # integer power, cheaper than **
                    wpow = wpow * wm
                out[mask] = pk / wpow * core / self.radius ** k
        return out


class PolyF(Factor1D):
    """Polynomial sum c_j (u - center)^j, coefficients ascending."""

    def __init__(self, coeffs, center=0.0):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.center = float(center)

    def deriv(self, k, u):
        c = self.coeffs
        for _ in range(k):
            c = npoly.polyder(c)
        u = np.asarray(u, dtype=float)
        if c.size == 0:
            return np.zeros_like(u)
        return npoly.polyval(u - self.center, c)


class TrigF(Factor1D):
    """sin(omega u + phase); derivatives shift the phase by pi/2."""

    def __init__(self, omega=1.0, phase=0.0):
        self.omega = float(omega)
        self.phase = float(phase)

    def deriv(self, k, u):
        u = np.asarray(u, dtype=float)
        return self.omega ** k * np.sin(self.omega * u + self.phase + k * np.pi / 2.0)


class ExpIF(Factor1D):
    """exp(i omega u), used for windowed-Fourier probes."""

    def __init__(self, omega):
        self.omega = float(omega)

    def deriv(self, k, u):
        u = np.asarray(u, dtype=float)
        return (1j * self.omega) ** k * np.exp(1j * self.omega * u)


class ConstF(Factor1D):
    def __init__(self, c=1.0):
        self.c = c

    def deriv(self, k, u):
        u = np.asarray(u, dtype=float)
        if k == 0:
            return np.full(u.shape, self.c)
        return np.zeros(u.shape, dtype=type(self.c))


class ScaledF(Factor1D):
    """u -> inner(c u) for c > 0."""

    def __init__(self, inner, c):
        if c <= 0:
            raise ValueError("scale factor must be positive")
        self.inner = inner
        self.c = float(c)
        if inner.support is not None:
            lo, hi = inner.support
            self.support = (lo / self.c, hi / self.c)

    def deriv(self, k, u):
        u = np.asarray(u, dtype=float)
        return self.c ** k * self.inner.deriv(k, self.c * u)


class DerivF(Factor1D):
    """The order-th derivative of inner, as a factor in its own right."""

    def __init__(self, inner, order):
        self.inner = inner
        self.order = int(order)
        self.support = inner.support

    def deriv(self, k, u):
        return self.inner.deriv(self.order + k, u)


class ProductF(Factor1D):
    def __init__(self, left, right):
        self.left = left
        self.right = right
        sl, sr = left.support, right.support
        if sl is None:
            self.support = sr
        elif sr is None:
            self.support = sl
        else:
            self.support = (max(sl[0], sr[0]), min(sl[1], sr[1]))

    def deriv(self, k, u):
        u = np.asarray(u, dtype=float)
        out = None
        for j in range(k + 1):
            term = _binom(k, j) * self.left.deriv(j, u) * self.right.deriv(k - j, u)
            out = term if out is None else out + term
        return out


def _binom(n, k):
    from math import comb
    return float(comb(n, k))


# ---------------------------------------------------------------------------
# test functions


@dataclass
class Term:
    coeff: complex
    factors: tuple


class TestFunction:
    """Finite sum of tensor-product terms over an (n, d) chart.

    eval and deriv are exact up to floating point; seminorms are grid
    suprema.  Values vanish outside `support` (a (n+d, 2) box; +-inf rows
    mark axes without compact support, which only Taylor polynomials use).
    """

    def __init__(self, n, d, terms, support, m_max=6):
        self.n = int(n)
        self.d = int(d)
        self.terms = list(terms)
        self.support = np.asarray(support, dtype=float).reshape(self.n + self.d, 2)
        self.m_max = int(m_max)

    @property
    def dim(self):
        return self.n + self.d

    def is_complex(self):
        return any(np.iscomplexobj(np.asarray(t.coeff)) or
                   any(isinstance(f, ExpIF) for f in t.factors) for t in self.terms)

    def _point_array(self, x, h):
        x = np.atleast_1d(np.asarray(x, dtype=float)) if self.n else np.zeros(0)
        h = np.atleast_1d(np.asarray(h, dtype=float))
        if x.size != self.n or h.size != self.d:
            raise ValueError(f"expected ({self.n}, {self.d}) coordinates")
        return np.concatenate([x, h])

    def eval(self, x, h):
        return self.deriv(np.zeros(self.dim, dtype=int), x, h)

    def __call__(self, x, h):
        return self.eval(x, h)

    def deriv(self, alpha, x, h):
        alpha = np.asarray(alpha, dtype=int)
        if alpha.size != self.dim:
            raise ValueError("multi-index length must be n + d")
        if int(alpha.sum()) > self.m_max:
            raise ValueError(f"|alpha| = {alpha.sum()} exceeds M_max = {self.m_max}")
        p = self._point_array(x, h)
        total = 0.0
        for t in self.terms:
            prod = t.coeff
            for i, f in enumerate(t.factors):
                prod = prod * f.deriv(int(alpha[i]), np.array([p[i]]))[0]
            total = total + prod
        return total

    def values(self, pts):
        """Vectorized evaluation at pts of shape (N, n + d)."""
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[0], dtype=complex if self.is_complex() else float)
        for t in self.terms:
            prod = np.full(pts.shape[0], t.coeff,
                           dtype=complex if self.is_complex() else float)
            for i, f in enumerate(t.factors):
                prod = prod * f.deriv(0, pts[:, i])
            out += prod
        return out

    def support_radius_h(self):
        """Radius of the smallest origin-centered h-ball containing the support."""
        hs = self.support[self.n:]
        return float(np.sqrt(np.sum(np.max(np.abs(hs), axis=1) ** 2)))


def make_bump(center, radii, n=0, m_max=6):
    """Smooth tensor-product bump, positive on the open box, peak value 1.

    The first n coordinates of `center` are x-axes, the rest h-axes.
    """
    center = np.atleast_1d(np.asarray(center, dtype=float))
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if radii.size == 1:
        radii = np.full(center.size, radii[0])
    if center.size != radii.size:
        raise ValueError("center and radii must have equal length")
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    d = center.size - n
    if d < 1:
        raise ValueError("need at least one transverse axis")
    factors = tuple(BumpF(c, r) for c, r in zip(center, radii))
    support = np.stack([center - radii, center + radii], axis=1)
    return TestFunction(n, d, [Term(1.0, factors)], support, m_max=m_max)


def scale_testfn(phi, lam):
    """phi_lam with phi_lam(x, h) = phi(x, lam h); lam in (0, 1] in the
    scaling regime, any positive lam accepted (the duality rule needs 1/lam)."""
    if lam <= 0:
        raise ValueError("scaling parameter must be positive")
    terms = []
    for t in phi.terms:
        fx = t.factors[:phi.n]
        fh = tuple(f if isinstance(f, ConstF) else ScaledF(f, lam)
                   for f in t.factors[phi.n:])
        terms.append(Term(t.coeff, fx + fh))
    support = phi.support.copy()
    support[phi.n:] = support[phi.n:] / lam
    return TestFunction(phi.n, phi.d, terms, support, m_max=phi.m_max)


def _multi_indices(dim, m):
    if dim == 0:
        yield ()
        return
    for head in range(m + 1):
        for tail in _multi_indices(dim - 1, m - head):
            yield (head,) + tail


def _abs_deriv_on_grid(phi, alpha, axes):
    dims = [len(a) for a in axes]
    vals = np.zeros(dims, dtype=complex if phi.is_complex() else float)
    for t in phi.terms:
        prod = np.asarray(t.coeff)
        for i, f in enumerate(t.factors):
            fv = f.deriv(alpha[i], axes[i])
            shape = [1] * len(axes)
            shape[i] = dims[i]
            prod = prod * fv.reshape(shape)
        vals = vals + prod
    return np.abs(vals)


def seminorm(phi, m, K=None, base_grid=64, refine_tol=0.01, polish_iters=8):
    """Grid supremum of |d^alpha phi| over |alpha| <= m and the box K.

    Tensor grid of base_grid(+1, to make the count odd so box centers are
    sampled) points per axis, doubled once when two levels disagree by more
    than refine_tol; each candidate maximum is then polished by iterated
    local grid refinement, which pins interior maxima of smooth factors to
    near machine precision.
    """
    if m > phi.m_max:
        raise ValueError(f"m = {m} exceeds M_max = {phi.m_max}")
    if K is None:
        K = phi.support
    K = np.asarray(K, dtype=float).reshape(phi.dim, 2)
    lo = np.maximum(K[:, 0], phi.support[:, 0])
    hi = np.minimum(K[:, 1], phi.support[:, 1])
    if np.any(lo > hi) or not phi.terms:
        return 0.0

    def scan(alpha, npts):
        npts += 1 - npts % 2
        axes = [np.linspace(lo[i], hi[i], npts) for i in range(phi.dim)]
        vals = _abs_deriv_on_grid(phi, alpha, axes)
        idx = np.unravel_index(np.argmax(vals), vals.shape)
        point = np.array([axes[i][idx[i]] for i in range(phi.dim)])
        width = np.array([(hi[i] - lo[i]) / max(npts - 1, 1) for i in range(phi.dim)])
        return float(vals[idx]), point, width

    def polish(alpha, point, width):
        best = 0.0
        for _ in range(polish_iters):
            axes = [np.clip(np.linspace(point[i] - width[i], point[i] + width[i], 9),
                            lo[i], hi[i]) for i in range(phi.dim)]
            vals = _abs_deriv_on_grid(phi, alpha, axes)
            idx = np.unravel_index(np.argmax(vals), vals.shape)
            best = float(vals[idx])
            point = np.array([axes[i][idx[i]] for i in range(phi.dim)])
            width = width / 4.0
        return best

    npts = base_grid if phi.dim <= 3 else 24
    best = 0.0
    for alpha in _multi_indices(phi.dim, m):
        v1, p1, w1 = scan(alpha, npts)
        v2, p2, w2 = scan(alpha, 2 * npts)
        if abs(v2 - v1) > refine_tol * max(v2, 1e-300):
            v2, p2, w2 = scan(alpha, 4 * npts)
        best = max(best, polish(alpha, p2, w2))
    return best


def taylor_poly_tf(phi, m):
    """Taylor polynomial of phi in h around h = 0, as a tensor-term sum."""
    if m + 1 > phi.m_max:
        raise ValueError("need m + 1 <= M_max derivatives")
    from math import factorial
    terms = []
    for t in phi.terms:
        fx = t.factors[:phi.n]
        fh = t.factors[phi.n:]
        for beta in _multi_indices(phi.d, m):
            coeff = t.coeff
            for bj, f in zip(beta, fh):
                coeff = coeff * f.deriv(bj, np.array([0.0]))[0] / factorial(bj)
            if coeff == 0:
                continue
            mono = tuple(PolyF([0.0] * bj + [1.0]) for bj in beta)
            terms.append(Term(coeff, fx + mono))
    support = phi.support.copy()
    support[phi.n:, 0] = -np.inf
    support[phi.n:, 1] = np.inf
    return TestFunction(phi.n, phi.d, terms, support, m_max=phi.m_max)


def taylor_remainder_tf(phi, m, gl_order=TAYLOR_GL_ORDER):
    """Integral-form Taylor remainder of order m, free of cancellation.

    Expands the t-integral with Gauss-Legendre nodes so the result stays a
    tensor-term sum:

        I_m phi = sum_{|alpha| = m+1} (m+1)/alpha! h^alpha
                  * integral_0^1 (1-t)^m (d_h^alpha phi)(x, t h) dt.

    Coincides with phi - taylor_poly(phi, m) analytically (the constant is
    the multivariate one; it reduces to 1/m! when d = 1).
    """
    if m + 1 > phi.m_max:
        raise ValueError("need m + 1 <= M_max derivatives")
    from math import factorial
    tq, wq = gauss_legendre(gl_order)
    terms = []
    for t in phi.terms:
        fx = t.factors[:phi.n]
        fh = t.factors[phi.n:]
        for alpha in _multi_indices(phi.d, m + 1):
            if sum(alpha) != m + 1:
                continue
            alpha_fact = np.prod([float(factorial(a)) for a in alpha])
            const = (m + 1) / alpha_fact
            for q in range(gl_order):
                coeff = t.coeff * const * wq[q] * (1.0 - tq[q]) ** m
                factors = []
                for aj, f in zip(alpha, fh):
                    shifted = ScaledF(DerivF(f, aj), tq[q])
                    if aj:
                        factors.append(ProductF(PolyF([0.0] * aj + [1.0]), shifted))
                    else:
                        factors.append(shifted)
                terms.append(Term(coeff, fx + tuple(factors)))
    support = phi.support.copy()
    support[phi.n:, 0] = -np.inf
    support[phi.n:, 1] = np.inf
    return TestFunction(phi.n, phi.d, terms, support, m_max=max(0, phi.m_max - m - 1))


def taylor_poly(phi, m):
    """Public form: callable (x, h) -> value of the h-Taylor polynomial."""
    tf = taylor_poly_tf(phi, m)
    return lambda x, h: tf.eval(x, h)


def taylor_remainder(phi, m):
    """Public form: callable (x, h) -> value of the integral remainder."""
    tf = taylor_remainder_tf(phi, m)
    return lambda x, h: tf.eval(x, h)


# ---------------------------------------------------------------------------
# cutoffs


def _smoothstep(s, kind):
    """Monotone C-infinity transition, 0 at s <= 0 and 1 at s >= 1."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    out[s >= 1.0] = 1.0
    mid = (s > 0.0) & (s < 1.0)
    if np.any(mid):
        sm = s[mid]
        if kind == "exp":
            f1 = np.exp(-1.0 / sm)
            f2 = np.exp(-1.0 / (1.0 - sm))
        elif kind == "exp2":
            f1 = np.exp(-1.0 / sm ** 2)
            f2 = np.exp(-1.0 / (1.0 - sm) ** 2)
        else:
            raise ValueError(f"unknown cutoff profile {kind!r}")
        out[mid] = f1 / (f1 + f2)
    return out


def _smoothstep_deriv(s, kind):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    mid = (s > 0.0) & (s < 1.0)
    if np.any(mid):
        sm = s[mid]
        if kind == "exp":
            f1 = np.exp(-1.0 / sm)
            f2 = np.exp(-1.0 / (1.0 - sm))
            d1 = f1 / sm ** 2
            d2 = -f2 / (1.0 - sm) ** 2
        else:
            f1 = np.exp(-1.0 / sm ** 2)
            f2 = np.exp(-1.0 / (1.0 - sm) ** 2)
            d1 = 2.0 * f1 / sm ** 3
            d2 = -2.0 * f2 / (1.0 - sm) ** 3
        out[mid] = (d1 * f2 - f1 * d2) / (f1 + f2) ** 2
    return out


@dataclass(frozen=True)
class Cutoff:
    """Radial cutoff chi(x, h) = q(|h|): 1 on |h| <= a, 0 on |h| >= b."""

    a: float
    b: float
    profile: str = "exp"

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise ValueError("need 0 < a < b")

    def q(self, r):
        s = (self.b - np.asarray(r, dtype=float)) / (self.b - self.a)
        return _smoothstep(s, self.profile)

    def dq(self, r):
        s = (self.b - np.asarray(r, dtype=float)) / (self.b - self.a)
        return -_smoothstep_deriv(s, self.profile) / (self.b - self.a)

    def chi(self, x, h):
        h = np.atleast_1d(np.asarray(h, dtype=float))
        return float(self.q(np.sqrt(np.sum(h * h))))

    def psi_radial(self, r):
        """-r q'(r), the shell density of the continuous partition of unity."""
        r = np.asarray(r, dtype=float)
        return -r * self.dq(r)

    @property
    def key(self):
        return f"{self.profile}(a={self.a}, b={self.b})"


@dataclass(frozen=True)
class PsiFunction:
    """psi = -sum_j h^j d(chi)/dh^j, supported on the shell a <= |h| <= b."""

    cutoff: Cutoff

    @property
    def inner_radius(self):
        return self.cutoff.a

    @property
    def outer_radius(self):
        return self.cutoff.b

    def psi(self, x, h):
        h = np.atleast_1d(np.asarray(h, dtype=float))
        r = np.sqrt(np.sum(h * h))
        return float(self.cutoff.psi_radial(r))


def make_cutoff(a, b, profile="exp"):
    if a >= b:
        raise ValueError("need a < b")
    if a <= 0:
        raise ValueError("need a > 0")
    return Cutoff(float(a), float(b), profile)


def psi_of(chi):
    return PsiFunction(chi)
