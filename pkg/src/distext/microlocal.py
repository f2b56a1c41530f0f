"""Finite-presentation cone algebra over T*U minus the zero section, and a
windowed-Fourier wave front probe.

Cones are finite unions of (base region) x (direction atom) pieces.  Two
atom kinds cover everything the toolkit produces: spherical caps around a
unit codirection, and unit spheres of coordinate subspaces ("all directions
supported on these axes").  Minkowski sums fall back to the coordinate-mask
union, which can over-estimate a sum of skew caps; that is safe here
because every consumer treats cones as upper bounds for wave front sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BaseRegion", "Cap", "Cone", "ConePiece", "SubSphere", "WfReport",
    "check_landing", "check_scaling_stable", "check_transverse", "cone_sum",
    "cone_union", "conormal", "full_cone", "wf_bound_check", "wf_estimate",
    "x_hyperplane_conormal", "xi_projection",
]

_DEG = np.pi / 180.0


def _unit(v):
    v = np.asarray(v, dtype=float)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise ValueError("zero covector has no direction")
    return v / nrm


# ---------------------------------------------------------------------------
# direction atoms


@dataclass(frozen=True)
class Cap:
    """Closed spherical cap: directions within `radius` radians of center."""

    center: tuple
    radius: float = 0.0

    def angle_to(self, v):
        c = _unit(self.center)
        v = _unit(v)
        n = max(c.size, v.size)
        c = np.pad(c, (0, n - c.size))
        v = np.pad(v, (0, n - v.size))
        ang = float(np.arccos(np.clip(np.dot(c, v), -1.0, 1.0)))
        return max(0.0, ang - self.radius)

    def mask(self):
        return frozenset(int(i) for i, c in enumerate(self.center)
                         if abs(c) > 1e-14)

    def samples(self):
        return [_unit(self.center)]


@dataclass(frozen=True)
class SubSphere:
    """All unit directions supported on the given coordinate axes."""

    axes: frozenset

    def angle_to(self, v):
        v = _unit(v)
        off = np.sqrt(sum(v[i] ** 2 for i in range(v.size)
                          if i not in self.axes))
        return float(np.arcsin(np.clip(off, 0.0, 1.0)))

    def mask(self):
        return frozenset(int(i) for i in self.axes)

    def samples(self):
        out = []
        dim = max(self.axes) + 1
        idx = sorted(self.axes)
        for i in idx:
            for sgn in (1.0, -1.0):
                e = np.zeros(dim)
                e[i] = sgn
                out.append(e)
        if len(idx) >= 2:
            e = np.zeros(dim)
            e[idx[0]] = e[idx[1]] = 1.0 / np.sqrt(2.0)
            out.append(e)
            e2 = e.copy()
            e2[idx[1]] *= -1.0
            out.append(e2)
        return out


def _atom_dim_pad(atom, dim):
    outs = []
    for s in atom.samples():
        if s.size < dim:
            s = np.concatenate([s, np.zeros(dim - s.size)])
        outs.append(s)
    return outs


def _minkowski_atoms(a1, a2):
    """Direction set of {u + v : u in cone(a1), v in cone(a2)} minus 0.

    Exact for identical / antipodal zero-radius caps and for subspheres;
    otherwise the coordinate-mask union (a closed conservative bound).
    """
    if isinstance(a1, Cap) and isinstance(a2, Cap) and a1.radius == 0 == a2.radius:
        c1, c2 = _unit(a1.center), _unit(a2.center)
        n = max(c1.size, c2.size)
        c1 = np.pad(c1, (0, n - c1.size))
        c2 = np.pad(c2, (0, n - c2.size))
        if np.allclose(c1, c2, atol=1e-12):
            return Cap(tuple(c1), 0.0)
    return SubSphere(frozenset(a1.mask() | a2.mask()))


# ---------------------------------------------------------------------------
# base regions


@dataclass(frozen=True)
class BaseRegion:
    """(x, h) footprint of a cone piece.

    h_mode: "on_i", "off_i", "all", or ("shell", lo, hi) on |h|.
    x_eq: equality constraints ((axis, value), ...) on the x coordinates.
    x_pt: full x-point pin, used by estimated WF cones.
    """

    h_mode: object = "all"
    x_eq: tuple = ()
    x_pt: tuple = None

    def contains(self, x, h, tol=1e-9):
        x = np.atleast_1d(np.asarray(x, dtype=float)) if np.size(x) else np.zeros(0)
        h = np.atleast_1d(np.asarray(h, dtype=float))
        r = float(np.linalg.norm(h))
        if self.h_mode == "on_i":
            if r > tol:
                return False
        elif self.h_mode == "off_i":
            if r <= tol:
                return False
        elif isinstance(self.h_mode, tuple):
            _, lo, hi = self.h_mode
            if r < lo - tol or r > hi + tol:
                return False
        if self.x_pt is not None:
            if not np.allclose(x, np.asarray(self.x_pt), atol=1e-7):
                return False
        for axis, val in self.x_eq:
            if abs(x[axis] - val) > tol:
                return False
        return True

    def h_reaches_i(self):
        if self.h_mode in ("on_i", "off_i", "all"):
            return True
        return self.h_mode[1] <= 1e-12

    def meets_shell(self, lo, hi):
        if self.h_mode == "on_i":
            return False
        if self.h_mode in ("off_i", "all"):
            return True
        _, plo, phi_ = self.h_mode
        return plo <= hi and phi_ >= lo

    def intersect(self, other):
        if self.h_mode == other.h_mode:
            h_mode = self.h_mode
        else:
            modes = {self.h_mode if isinstance(self.h_mode, str) else "shell",
                     other.h_mode if isinstance(other.h_mode, str) else "shell"}
            a = self.h_mode if isinstance(self.h_mode, tuple) else None
            b = other.h_mode if isinstance(other.h_mode, tuple) else None
            if "on_i" in modes:
                if a is not None or b is not None or "off_i" in modes:
                    return None
                h_mode = "on_i"
            elif a is not None or b is not None:
                lo = max((x[1] for x in (a, b) if x is not None), default=0.0)
                hi = min((x[2] for x in (a, b) if x is not None), default=np.inf)
                if lo > hi:
                    return None
                h_mode = ("shell", lo, hi)
            else:
                h_mode = "off_i" if "off_i" in modes else "all"
        eq = dict(self.x_eq)
        for axis, val in other.x_eq:
            if axis in eq and abs(eq[axis] - val) > 1e-12:
                return None
            eq[axis] = val
        if self.x_pt is not None and other.x_pt is not None:
            if not np.allclose(self.x_pt, other.x_pt, atol=1e-9):
                return None
        x_pt = self.x_pt if self.x_pt is not None else other.x_pt
        return BaseRegion(h_mode=h_mode, x_eq=tuple(sorted(eq.items())), x_pt=x_pt)

    def sample_points(self, chart, rng):
        xs = [rng.uniform(0.8 * lo, 0.8 * hi) for lo, hi in chart.box_x] \
            if chart.n else []
        if self.x_pt is not None:
            xs = list(self.x_pt)
        for axis, val in self.x_eq:
            xs[axis] = val
        x = np.array(xs)
        rad = chart.h_ball_radius()
        if self.h_mode == "on_i":
            hs = [np.zeros(chart.d)]
        elif isinstance(self.h_mode, tuple):
            _, lo, hi = self.h_mode
            r = 0.5 * (max(lo, 1e-6) + min(hi, rad))
            hs = [r * _sphere_dir(chart.d, j) for j in range(2 * chart.d)]
        else:
            hs = [0.3 * rad * _sphere_dir(chart.d, j) for j in range(2 * chart.d)]
            if self.h_mode == "all":
                hs.append(np.zeros(chart.d))
        return [(x, h) for h in hs]


def _sphere_dir(d, j):
    e = np.zeros(d)
    e[j % d] = 1.0 if j < d else -1.0
    return e


# ---------------------------------------------------------------------------
# cones


@dataclass(frozen=True)
class ConePiece:
    base: BaseRegion
    dirs: tuple


@dataclass(frozen=True)
class Cone:
    """Closed conic subset of T*U minus the zero section, finitely presented."""

    pieces: tuple
    n: int = 0
    d: int = 1

    def is_empty(self):
        return len(self.pieces) == 0

    def contains(self, point, codir, ang_slack=1e-9, base_tol=1e-9):
        point = np.asarray(point, dtype=float)
        x, h = point[:self.n], point[self.n:]
        for piece in self.pieces:
            if not piece.base.contains(x, h, tol=base_tol):
                continue
            for atom in piece.dirs:
                if atom.angle_to(codir) <= ang_slack:
                    return True
        return False

    def serialize(self):
        lines = []
        for piece in self.pieces:
            dirs = ", ".join(
                f"cap(center={tuple(np.round(a.center, 6))}, radius={a.radius:.6f})"
                if isinstance(a, Cap) else f"subsphere(axes={sorted(a.axes)})"
                for a in piece.dirs)
            lines.append(f"base[h={piece.base.h_mode}, x_eq={piece.base.x_eq},"
                         f" x_pt={piece.base.x_pt}] dirs[{dirs}]")
        return "\n".join(lines) if lines else "(empty cone)"


def conormal(chart):
    """N*(I) = {(x, 0; 0, eta) : eta != 0}."""
    eta_axes = frozenset(range(chart.n, chart.n + chart.d))
    piece = ConePiece(BaseRegion(h_mode="on_i"), (SubSphere(eta_axes),))
    return Cone((piece,), chart.n, chart.d)


def x_hyperplane_conormal(chart, axis, over="off_i"):
    """N*({x_axis = 0}), restricted off I by default."""
    piece = ConePiece(BaseRegion(h_mode=over, x_eq=((axis, 0.0),)),
                      (SubSphere(frozenset([axis])),))
    return Cone((piece,), chart.n, chart.d)


def full_cone(chart):
    axes = frozenset(range(chart.n + chart.d))
    piece = ConePiece(BaseRegion(h_mode="all"), (SubSphere(axes),))
    return Cone((piece,), chart.n, chart.d)


def cone_union(*cones):
    cones = [c for c in cones if c is not None and not c.is_empty()]
    if not cones:
        return Cone(())
    n, d = cones[0].n, cones[0].d
    if any((c.n, c.d) != (n, d) for c in cones):
        raise ValueError("cones live over different charts")
    seen = []
    for c in cones:
        for p in c.pieces:
            if p not in seen:
                seen.append(p)
    return Cone(tuple(seen), n, d)


def cone_sum(c1, c2):
    """Minkowski sum of directions over shared base points, zero sums excluded."""
    if (c1.n, c1.d) != (c2.n, c2.d):
        raise ValueError("cones live over different charts")
    pieces = []
    for p1 in c1.pieces:
        for p2 in c2.pieces:
            base = p1.base.intersect(p2.base)
            if base is None:
                continue
            atoms = []
            for a1 in p1.dirs:
                for a2 in p2.dirs:
                    atom = _minkowski_atoms(a1, a2)
                    if atom not in atoms:
                        atoms.append(atom)
            if atoms:
                pieces.append(ConePiece(base, tuple(atoms)))
    return Cone(tuple(pieces), c1.n, c1.d)


def check_transverse(c1, c2, ang_slack=1e-9):
    """True iff no shared base point carries opposite covectors.

    Returns (flag, witness); witness is the (region, direction) violating
    the condition when the check fails.
    """
    for p1 in c1.pieces:
        for p2 in c2.pieces:
            base = p1.base.intersect(p2.base)
            if base is None:
                continue
            for a1 in p1.dirs:
                for a2 in p2.dirs:
                    hit = _opposite_atoms(a1, a2, ang_slack)
                    if hit is not None:
                        return False, (base, hit)
    return True, None


def _opposite_atoms(a1, a2, slack):
    if isinstance(a1, SubSphere) and isinstance(a2, SubSphere):
        shared = a1.axes & a2.axes
        if shared:
            i = sorted(shared)[0]
            v = np.zeros(i + 1)
            v[i] = 1.0
            return v
        return None
    if isinstance(a1, SubSphere):
        a1, a2 = a2, a1
    if isinstance(a2, SubSphere):
        v = -_unit(np.asarray(a1.center, dtype=float))
        if a2.angle_to(v) <= a1.radius + slack:
            return np.asarray(a1.center)
        return None
    c1 = _unit(np.asarray(a1.center, dtype=float))
    c2 = _unit(np.asarray(a2.center, dtype=float))
    n = max(c1.size, c2.size)
    c1, c2 = np.pad(c1, (0, n - c1.size)), np.pad(c2, (0, n - c2.size))
    ang = float(np.arccos(np.clip(np.dot(c1, -c2), -1.0, 1.0)))
    if ang <= a1.radius + a2.radius + slack:
        return c1
    return None


def check_scaling_stable(cone, chart=None, lams=(1.0, 0.5, 0.25, 0.125),
                         ang_slack=1e-9, seed=11):
    """Sampled check of (x, h; xi, eta) -> (x, lam^-1 h; xi, lam eta) in cone."""
    from .core_types import ChartRegion
    if chart is None:
        chart = ChartRegion(cone.n, cone.d)
    rng = np.random.default_rng(seed)
    dim = cone.n + cone.d
    for piece in cone.pieces:
        for x, h in piece.base.sample_points(chart, rng):
            for atom in piece.dirs:
                for v in _atom_dim_pad(atom, dim):
                    for lam in lams:
                        h2 = h / lam
                        if not chart.contains(np.concatenate([x, h2])):
                            continue  # image left T*U, nothing to check
                        v2 = v.copy()
                        v2[cone.n:] *= lam
                        nrm = np.linalg.norm(v2)
                        if nrm == 0:
                            continue
                        if not cone.contains(np.concatenate([x, h2]), v2 / nrm,
                                             ang_slack=ang_slack):
                            return False
    return True


def xi_projection(cone, psi_shell):
    """Covectors over I forced by shell directions with vanishing eta part:

        Xi = {(x, 0; xi, eta) | exists (x, h; xi, 0) in cone, a <= |h| <= b},

    eta running free for each such xi.
    """
    a, b = psi_shell
    n, d = cone.n, cone.d
    eta_axes = frozenset(range(n, n + d))
    pieces = []
    for piece in cone.pieces:
        if not piece.base.meets_shell(a, b):
            continue
        for atom in piece.dirs:
            xi_axes = frozenset(i for i in atom.mask() if i < n)
            if not xi_axes:
                continue
            if isinstance(atom, Cap):
                c = _unit(np.asarray(atom.center, dtype=float))
                eta_off = np.linalg.norm(c[n:])
                if np.arcsin(np.clip(eta_off, 0, 1)) > atom.radius + 1e-12:
                    continue  # cap holds no (xi, 0) direction
            base = BaseRegion(h_mode="on_i", x_eq=piece.base.x_eq,
                              x_pt=piece.base.x_pt)
            piece_out = ConePiece(base, (SubSphere(xi_axes | eta_axes),))
            if piece_out not in pieces:
                pieces.append(piece_out)
    return Cone(tuple(pieces), n, d)


def check_landing(cone, ang_slack=1e-6):
    """Conormal landing: the closure of the cone over I sits inside N*(I).

    Pieces based away from I contribute nothing; every other piece must
    have all direction atoms within slack of the eta subspace.  Any xi
    component beyond slack survives the scaling limit (xi, lam eta)/|.|
    and lands outside the conormal.
    """
    n = cone.n
    for piece in cone.pieces:
        if not piece.base.h_reaches_i():
            continue
        for atom in piece.dirs:
            if isinstance(atom, SubSphere):
                if any(i < n for i in atom.axes):
                    return False
            else:
                c = _unit(np.asarray(atom.center, dtype=float))
                xi_part = np.linalg.norm(c[:n])
                if np.arcsin(np.clip(xi_part, 0, 1)) + atom.radius > ang_slack:
                    return False
    return True


# ---------------------------------------------------------------------------
# wave front estimation


DEFAULT_K_GRID = (8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0)
FIT_K_MIN = 48.0  # decay fits use the tail, where window transforms reach their asymptotic rate


@dataclass
class WfReport:
    """Decay exponents of windowed Fourier pairings per (point, direction)."""

    samples: list
    threshold: float
    estimated_cone: Cone = None
    k_grid: tuple = DEFAULT_K_GRID
    errors: list = field(default_factory=list)

    def slow_samples(self):
        return [(p, v, e) for p, v, e in self.samples if e < self.threshold]

    def to_csv_rows(self):
        rows = []
        for p, v, e in self.samples:
            rows.append(list(p) + list(v) + [e])
        return rows


def _fourier_probe(chart, point, direction, k, window_radius, m_max=6):
    from .core_types import BumpF, ExpIF, ProductF, Term, TestFunction
    point = np.asarray(point, dtype=float)
    direction = _unit(direction)
    dim = chart.n + chart.d
    box = chart.box
    factors = []
    support = np.zeros((dim, 2))
    for i in range(dim):
        rad = min(window_radius, point[i] - box[i, 0], box[i, 1] - point[i])
        rad = max(rad, 0.25 * window_radius)
        bump = BumpF(point[i], rad)
        osc = ExpIF(-k * direction[i])
        factors.append(ProductF(bump, osc))
        support[i] = [point[i] - rad, point[i] + rad]
    coeff = np.exp(1j * k * float(np.dot(point, direction)))
    return TestFunction(chart.n, chart.d, [Term(coeff, tuple(factors))],
                        support, m_max=m_max)


def wf_estimate(t, points, directions, window=0.3, k_grid=DEFAULT_K_GRID,
                threshold=3.0, rel_tol=1e-7, pair_fn=None):
    """Fit |<t, window e^{-ik <., dir>}>| ~ k^-N per (point, direction).

    decay_exponent is the fitted N over the tail of the k grid (the
    compactly supported window only reaches its asymptotic decay rate past
    k * radius ~ 10, and including the preasymptotic head would blur the
    smooth/singular separation); samples below `threshold` are flagged as
    wave front candidates and collected into estimated_cone.  Pairing
    failures are recorded per sample instead of raised.
    """
    from .distributions import PairingError, pair as _pair
    chart = t.chart
    if pair_fn is None:
        def pair_fn(probe):
            return _pair(t, probe, rel_tol=rel_tol)
    samples = []
    errors = []
    karr = np.asarray(k_grid, dtype=float)
    tail = karr >= FIT_K_MIN
    if np.count_nonzero(tail) < 3:
        tail = np.ones(karr.size, dtype=bool)
    kk = np.log(karr[tail])
    for point in points:
        for direction in directions:
            direction = _unit(direction)
            mags = []
            try:
                for k in k_grid:
                    probe = _fourier_probe(chart, point, direction, k, window)
                    val = pair_fn(probe)
                    mags.append(max(abs(val), 1e-300))
            except PairingError as exc:
                errors.append((tuple(np.asarray(point, dtype=float)),
                               tuple(direction), str(exc)))
                continue
            mags = np.asarray(mags)[tail]
            if np.max(mags) < 1e-250:
                expo = float("inf")
            else:
                slope = np.polyfit(kk, np.log(mags), 1)[0]
                expo = -float(slope)
            samples.append((tuple(np.asarray(point, dtype=float)),
                            tuple(direction), expo))
    pieces = []
    for p, v, e in samples:
        if e < threshold:
            x = p[:chart.n]
            h = np.asarray(p[chart.n:])
            r = float(np.linalg.norm(h))
            h_mode = "on_i" if r <= 1e-9 else ("shell", r, r)
            base = BaseRegion(h_mode=h_mode, x_pt=tuple(x))
            pieces.append(ConePiece(base, (Cap(tuple(v), 0.0),)))
    est = Cone(tuple(pieces), chart.n, chart.d)
    return WfReport(samples=samples, threshold=threshold, estimated_cone=est,
                    k_grid=tuple(k_grid), errors=errors)


def wf_bound_check(report, bound, ang_slack=5.0 * _DEG):
    """True iff every slow-decay sample direction lies inside the bound."""
    for point, direction, expo in report.slow_samples():
        if not bound.contains(point, direction, ang_slack=ang_slack,
                              base_tol=1e-6):
            return False
    return True
