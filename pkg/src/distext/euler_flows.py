"""Euler vector fields in normal form, their scaling flows and conjugations.

A field in normal form is

    rho = h^j d/dh^j + h^i A_i^j(x,h) d/dx^j + h^i h^j B_ij^k(x,h) d/dh^k

with polynomial coefficient functions A, B, so that Jacobians and cotangent
lifts are exact.  Flows integrate with an adaptive Dormand-Prince step
(atol = rtol = 1e-10) and carry the variational Jacobian along.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ChartEscapeError", "ConjugationFamily", "EulerField", "FlowResult",
    "PolyND", "PolyVectorField", "conjugation", "conjugation_residual",
    "cotangent_lift_check", "cotangent_lift_vector", "flow", "is_euler",
    "stock_field",
]


class ChartEscapeError(Exception):
    """Trajectory left the chart box; carries the partial trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []


# ---------------------------------------------------------------------------
# exact polynomials in several variables


class PolyND:
    """Polynomial sum c * prod_i u_i^e_i given as {exponents: coeff}."""

    def __init__(self, dim, terms):
        self.dim = int(dim)
        self.terms = {tuple(int(v) for v in k): float(c)
                      for k, c in terms.items() if c != 0.0}

    @classmethod
    def const(cls, dim, c):
        return cls(dim, {(0,) * dim: c})

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = p[None, :] if single else p
        out = np.zeros(pts.shape[0])
        for expo, c in self.terms.items():
            mono = np.full(pts.shape[0], c)
            for i, e in enumerate(expo):
                if e:
                    mono = mono * pts[:, i] ** e
            out += mono
        return out[0] if single else out

    def partial(self, i):
        terms = {}
        for expo, c in self.terms.items():
            if expo[i] == 0:
                continue
            new = list(expo)
            new[i] -= 1
            terms[tuple(new)] = terms.get(tuple(new), 0.0) + c * expo[i]
        return PolyND(self.dim, terms)


class PolyVectorField:
    """Generic polynomial vector field; used for Euler candidates and lifts."""

    def __init__(self, chart, components):
        self.chart = chart
        self.components = list(components)
        if len(self.components) != chart.dim:
            raise ValueError("one component per coordinate required")

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = p[None, :] if single else p
        out = np.stack([c(pts) for c in self.components], axis=-1)
        return out[0] if single else out

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = p[None, :] if single else p
        dim = self.chart.dim
        J = np.zeros((pts.shape[0], dim, dim))
        for r, comp in enumerate(self.components):
            for c in range(dim):
                J[:, r, c] = comp.partial(c)(pts)
        return J[0] if single else J


# ---------------------------------------------------------------------------
# Euler fields


@dataclass
class EulerField:
    """Normal-form Euler field with polynomial A (d x n) and B (d x d x d).

    A maps (i, j) -> PolyND coefficient of h^i A_i^j d/dx^j;
    B maps (i, j, k) -> PolyND coefficient of h^i h^j B_ij^k d/dh^k.
    """

    chart: object
    A: dict = field(default_factory=dict)
    B: dict = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        n, d, dim = self.chart.n, self.chart.d, self.chart.dim
        for (i, j), poly in self.A.items():
            if not (0 <= i < d and 0 <= j < n and poly.dim == dim):
                raise ValueError("A index or arity out of range")
        for (i, j, k), poly in self.B.items():
            if not (0 <= i < d and 0 <= j < d and 0 <= k < d and poly.dim == dim):
                raise ValueError("B index or arity out of range")

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = p[None, :] if single else p
        n, d = self.chart.n, self.chart.d
        h = pts[:, n:]
        out = np.zeros_like(pts)
        out[:, n:] = h
        for (i, j), poly in self.A.items():
            out[:, j] += h[:, i] * poly(pts)
        for (i, j, k), poly in self.B.items():
            out[:, n + k] += h[:, i] * h[:, j] * poly(pts)
        return out[0] if single else out

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = p[None, :] if single else p
        n, d, dim = self.chart.n, self.chart.d, self.chart.dim
        h = pts[:, n:]
        J = np.zeros((pts.shape[0], dim, dim))
        for k in range(d):
            J[:, n + k, n + k] = 1.0
        for (i, j), poly in self.A.items():
            J[:, j, n + i] += poly(pts)
            for c in range(dim):
                J[:, j, c] += h[:, i] * poly.partial(c)(pts)
        for (i, j, k), poly in self.B.items():
            J[:, n + k, n + i] += h[:, j] * poly(pts)
            J[:, n + k, n + j] += h[:, i] * poly(pts)
            for c in range(dim):
                J[:, n + k, c] += h[:, i] * h[:, j] * poly.partial(c)(pts)
        return J[0] if single else J

    def homotopy_field(self, lam, p):
        """X(lam) = -(h^i A_i^j(x, lam h) d/dx^j + h^i h^j B_ij^k(x, lam h) d/dh^k).

        Generates the family Phi(lam) with S(lam) = S_self(lam) Phi(lam),
        S the standard scaling; smooth through lam = 0.
        """
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = p[None, :] if single else p
        n = self.chart.n
        h = pts[:, n:]
        scaled = pts.copy()
        scaled[:, n:] *= lam
        out = np.zeros_like(pts)
        for (i, j), poly in self.A.items():
            out[:, j] -= h[:, i] * poly(scaled)
        for (i, j, k), poly in self.B.items():
            out[:, n + k] -= h[:, i] * h[:, j] * poly(scaled)
        return out[0] if single else out

    def homotopy_jacobian(self, lam, p):
        """d(homotopy_field)/dp, exact (for the lifted covector transport)."""
        p = np.asarray(p, dtype=float)
        single = p.ndim == 1
        pts = p[None, :] if single else p
        n, dim = self.chart.n, self.chart.dim
        h = pts[:, n:]
        scaled = pts.copy()
        scaled[:, n:] *= lam
        J = np.zeros((pts.shape[0], dim, dim))
        for (i, j), poly in self.A.items():
            J[:, j, n + i] -= poly(scaled)
            for c in range(dim):
                fac = lam if c >= n else 1.0
                J[:, j, c] -= h[:, i] * fac * poly.partial(c)(scaled)
        for (i, j, k), poly in self.B.items():
            J[:, n + k, n + i] -= h[:, j] * poly(scaled)
            J[:, n + k, n + j] -= h[:, i] * poly(scaled)
            for c in range(dim):
                fac = lam if c >= n else 1.0
                J[:, n + k, c] -= h[:, i] * h[:, j] * fac * poly.partial(c)(scaled)
        return J[0] if single else J


def stock_field(name, chart):
    """Stock fields: "standard" = h d/dh; "logistic" = h(1+h) d/dh (d = 1)."""
    if name == "standard":
        return EulerField(chart, name="standard")
    if name == "logistic":
        if chart.d != 1:
            raise ValueError("logistic stock field is d = 1")
        return EulerField(
            chart, B={(0, 0, 0): PolyND.const(chart.dim, 1.0)}, name="logistic")
    raise ValueError(f"unknown stock field {name!r}")


# ---------------------------------------------------------------------------
# adaptive Dormand-Prince integration

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784,
                   11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


def rk45(f, t0, t1, y0, rtol=1e-10, atol=1e-10, max_steps=100_000,
         step_callback=None):
    """Adaptive embedded Runge-Kutta (Dormand-Prince 5(4)).

    y0 may be batched; the step is controlled on the worst component.
    Returns (y_end, accepted_steps).
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    span = t1 - t0
    if span == 0.0:
        return y, 0
    sign = np.sign(span)
    hstep = sign * max(1e-6, abs(span) / 64.0)
    steps = 0
    for _ in range(max_steps):
        if sign * (t + hstep - t1) > 0:
            hstep = t1 - t
        k = []
        for i in range(7):
            yi = y
            for aij, kj in zip(_DP_A[i], k):
                yi = yi + hstep * aij * kj
            k.append(f(t + _DP_C[i] * hstep, yi))
        y5 = y
        for b, kj in zip(_DP_B5, k):
            y5 = y5 + hstep * b * kj
        y4 = y
        for b, kj in zip(_DP_B4, k):
            y4 = y4 + hstep * b * kj
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y5))
        err = float(np.max(np.abs(y5 - y4) / scale)) if y5.size else 0.0
        if err <= 1.0:
            t = t + hstep
            y = y5
            steps += 1
            if step_callback is not None:
                step_callback(t, y)
            if sign * (t - t1) >= 0 or abs(t - t1) < 1e-15 * max(1.0, abs(t1)):
                return y, steps
        fac = 0.9 * (1.0 / max(err, 1e-10)) ** 0.2
        hstep = hstep * min(5.0, max(0.2, fac))
    raise RuntimeError("rk45 step limit exceeded (stiffness failure?)")


# ---------------------------------------------------------------------------
# flows and conjugation


@dataclass
class FlowResult:
    endpoint: np.ndarray
    jacobian: np.ndarray
    lam: float
    steps: int


def flow(rho, lam, p, rtol=1e-10, atol=1e-10, check_chart=True):
    """Integrate the scaling flow S(lam) = e^{log(lam) rho} from p.

    Also transports the variational Jacobian.  Raises ChartEscapeError with
    the partial trajectory attached when the solution leaves the chart box.
    """
    if not (0.0 < lam <= 1.0):
        raise ValueError("lam must lie in (0, 1]")
    p = np.asarray(p, dtype=float)
    dim = rho.chart.dim
    if p.size != dim:
        raise ValueError("point dimension mismatch")
    if lam == 1.0:
        return FlowResult(p.copy(), np.eye(dim), 1.0, 0)
    T = float(np.log(lam))

    def rhs(t, state):
        q = state[:dim]
        J = state[dim:].reshape(dim, dim)
        dq = rho(q)
        dJ = rho.jacobian(q) @ J
        return np.concatenate([dq, dJ.ravel()])

    trajectory = []

    def watch(t, state):
        q = state[:dim]
        trajectory.append((t, q.copy()))
        if check_chart and not rho.chart.contains(q, slack=1e-9):
            raise ChartEscapeError(
                f"flow left the chart at t = {t:.6f}, point {q}",
                trajectory=trajectory)

    state0 = np.concatenate([p, np.eye(dim).ravel()])
    state, steps = rk45(rhs, 0.0, T, state0, rtol=rtol, atol=atol,
                        step_callback=watch)
    endpoint = state[:dim]
    J = state[dim:].reshape(dim, dim)
    return FlowResult(endpoint, J, lam, steps)


def _homotopy_transport(rho_field, lam_from, lam_to, p, rtol=1e-10, atol=1e-10):
    """Solve dq/dsigma = X_rho(sigma, q) between family parameters."""
    p = np.asarray(p, dtype=float)

    def rhs(sig, q):
        return rho_field.homotopy_field(sig, q)

    q, _ = rk45(rhs, lam_from, lam_to, p, rtol=rtol, atol=atol)
    return q


def conjugation(rho1, rho2, lam, p, rtol=1e-10, atol=1e-10):
    """Point value of Phi(lam) with S_2(lam) = S_1(lam) o Phi(lam).

    Built from the two homotopy families Phi_a(lam) (non-autonomous ODE
    with Phi_a(1) = Id), as Phi = Phi_1(lam) o Phi_2(lam)^-1; well defined
    down to lam = 0 where the family has its smooth limit.
    """
    if not (0.0 <= lam <= 1.0):
        raise ValueError("lam must lie in [0, 1]")
    q = _homotopy_transport(rho2, lam, 1.0, p, rtol=rtol, atol=atol)
    return _homotopy_transport(rho1, 1.0, lam, q, rtol=rtol, atol=atol)


def conjugation_residual(rho1, rho2, lam, p):
    """|S_2(lam)(p) - S_1(lam)(Phi(lam)(p))|, the defining relation's error."""
    lhs = flow(rho2, lam, np.asarray(p, dtype=float)).endpoint
    mid = conjugation(rho1, rho2, lam, p)
    rhs = flow(rho1, lam, mid).endpoint
    return float(np.max(np.abs(lhs - rhs)))


# ---------------------------------------------------------------------------
# Euler recognition


def is_euler(candidate, chart=None, ray_radii=None, tol=1e-6):
    """True iff rho f - f vanishes to second order on I for the generators
    f in {h^j} and {x^i h^j}.

    Residuals along rays h = r omega are fit against {1, r, r^2}; the
    constant and linear coefficients must vanish (|c0|, |c1| < tol).
    """
    chart = chart or getattr(candidate, "chart", None)
    if chart is None:
        raise ValueError("need a chart to test against")
    n, d = chart.n, chart.d
    if ray_radii is None:
        ray_radii = np.geomspace(1e-4, 1e-1, 12)
    rng = np.random.default_rng(3)
    xs = [np.zeros(n)] if n == 0 else [rng.uniform(-0.5, 0.5, size=n)
                                       for _ in range(3)]
    omegas = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        omegas.extend([e, -e])
    if d > 1:
        omegas.append(np.full(d, 1.0 / np.sqrt(d)))

    # basis through r^3 so cubic parts of smooth coefficients do not leak
    # into the constant/linear coefficients under test
    design = np.stack([np.ones_like(ray_radii), ray_radii, ray_radii ** 2,
                       ray_radii ** 3], axis=1)

    def fit_ok(res):
        coef, *_ = np.linalg.lstsq(design, res, rcond=None)
        return abs(coef[0]) < tol and abs(coef[1]) < tol

    for x in xs:
        for omega in omegas:
            pts = np.stack([np.concatenate([x, r * omega]) for r in ray_radii])
            vals = candidate(pts)
            h = pts[:, n:]
            for j in range(d):
                # f = h^j: residual rho(h^j) - h^j
                res = vals[:, n + j] - h[:, j]
                if not fit_ok(res):
                    return False
            for i in range(n):
                for j in range(d):
                    # f = x^i h^j: residual x^i rho_h^j + h^j rho_x^i - x^i h^j
                    res = (pts[:, i] * vals[:, n + j] + h[:, j] * vals[:, i]
                           - pts[:, i] * h[:, j])
                    if not fit_ok(res):
                        return False
    return True


# ---------------------------------------------------------------------------
# cotangent lifts


def cotangent_lift_vector(vfield, q, kappa):
    """X* at (q, kappa): (components(q), -Jacobian(q)^T kappa)."""
    q = np.asarray(q, dtype=float)
    kappa = np.asarray(kappa, dtype=float)
    comp = vfield(q)
    J = vfield.jacobian(q)
    return comp, -J.T @ kappa


def cotangent_lift_check(field_like, samples, tol=1e-7, rtol=1e-11, atol=1e-11):
    """Integrate the lifted Hamiltonian flow on sampled covectors and check
    that conormal covectors stay fixed.

    field_like is an autonomous PolyVectorField in F_1 (flow time [0, 1]),
    a single EulerField (its homotopy family, parameter 1 -> 0), or a pair
    (rho1, rho2) for the full conjugation family.
    """
    if isinstance(field_like, tuple):
        rho1, rho2 = field_like
        stages = [(rho2, 1.0, 0.0), (rho1, 0.0, 1.0)]

        def transport(q, kappa):
            for fld, sfrom, sto in stages:
                q, kappa = _lifted_homotopy(fld, sfrom, sto, q, kappa,
                                            rtol=rtol, atol=atol)
            return q, kappa
    elif isinstance(field_like, EulerField):
        def transport(q, kappa):
            return _lifted_homotopy(field_like, 1.0, 0.0, q, kappa,
                                    rtol=rtol, atol=atol)
    else:
        def transport(q, kappa, fld=field_like):
            dim = fld.chart.dim

            def rhs(t, state):
                qq, kk = state[:dim], state[dim:]
                comp = fld(qq)
                J = fld.jacobian(qq)
                return np.concatenate([comp, -J.T @ kk])

            state, _ = rk45(rhs, 0.0, 1.0, np.concatenate([q, kappa]),
                            rtol=rtol, atol=atol)
            return state[:dim], state[dim:]

    for q0, kappa0 in samples:
        q0 = np.asarray(q0, dtype=float)
        kappa0 = np.asarray(kappa0, dtype=float)
        q1, kappa1 = transport(q0, kappa0)
        if np.max(np.abs(q1 - q0)) > tol or np.max(np.abs(kappa1 - kappa0)) > tol:
            return False
    return True


def _lifted_homotopy(rho_field, sfrom, sto, q, kappa, rtol=1e-11, atol=1e-11):
    dim = rho_field.chart.dim

    def rhs(sig, state):
        qq, kk = state[:dim], state[dim:]
        comp = rho_field.homotopy_field(sig, qq)
        J = rho_field.homotopy_jacobian(sig, qq)
        return np.concatenate([comp, -J.T @ kk])

    state, _ = rk45(rhs, sfrom, sto, np.concatenate([q, kappa]),
                    rtol=rtol, atol=atol)
    return state[:dim], state[dim:]
