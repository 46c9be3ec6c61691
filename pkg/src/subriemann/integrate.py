"""Flows, controlled horizontal curves and the control algebra.

Controls are piecewise constant on [0, 1].  They are stored as segment
durations plus one row of k values per segment, so time reversal is an exact
involution; breakpoints are derived by cumulative summation.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .errors import ConvergenceError, DomainError, DomainExit, InputError
from .fields import Geometry, VectorField

DEFAULT_STEP = 1e-3
_SUM_TOL = 1e-9


class Control:
    """Piecewise-constant control u: [0, 1] -> R^k."""

    __slots__ = ("durations", "values")

    def __init__(self, durations, values):
        d = np.array(durations, dtype=float).reshape(-1)
        v = np.array(values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(len(d), -1) if len(d) else v.reshape(0, 0)
        if d.size == 0:
            raise InputError("a control needs at least one segment")
        if v.shape[0] != d.size:
            raise InputError(f"{d.size} segments but {v.shape[0]} value rows")
        if v.shape[1] < 1:
            raise InputError("control values need at least one channel")
        if not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise InputError("breakpoints must be strictly increasing")
        if abs(math.fsum(d) - 1.0) > _SUM_TOL:
            raise InputError(f"segment durations sum to {math.fsum(d)!r}, expected 1")
        if not np.all(np.isfinite(v)):
            raise InputError("control values must be finite")
        d.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "durations", d)
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("Control is immutable")

    @classmethod
    def from_breakpoints(cls, breakpoints, values):
        bp = np.array(breakpoints, dtype=float).reshape(-1)
        if bp.size < 2:
            raise InputError("need at least two breakpoints")
        if abs(bp[0]) > 1e-12 or abs(bp[-1] - 1.0) > 1e-12:
            raise InputError("breakpoints must run from 0 to 1")
        return cls(np.diff(bp), values)

    @classmethod
    def zero(cls, k):
        return cls([1.0], np.zeros((1, k)))

    @classmethod
    def constant(cls, u):
        return cls([1.0], [list(u)])

    @classmethod
    def from_segments(cls, segments, k):
        """Unit-speed control traversing ``(generator, signed time)`` segments.

        Time slices are proportional to |time|; the speed is the total length,
        so the control length equals the sum of |time|.
        """
        segs = [(j, float(t)) for j, t in segments if t != 0.0]
        total = math.fsum(abs(t) for _, t in segs)
        if not segs or total == 0.0:
            return cls.zero(k)
        durations = [abs(t) / total for _, t in segs]
        values = np.zeros((len(segs), k))
        for row, (j, t) in enumerate(segs):
            values[row, j - 1] = math.copysign(total, t)
        # absorb rounding so the durations sum to one
        durations[-1] = 1.0 - math.fsum(durations[:-1])
        if durations[-1] <= 0:
            durations = [abs(t) / total for _, t in segs]
            s = math.fsum(durations)
            durations = [d / s for d in durations]
        return cls(durations, values)

    @property
    def m(self):
        return self.durations.size

    @property
    def k(self):
        return self.values.shape[1]

    @property
    def breakpoints(self):
        bp = np.concatenate([[0.0], np.cumsum(self.durations)])
        bp[-1] = 1.0
        return bp

    def l1_norm(self) -> float:
        """sum_j sum_i |u_ji| (t_j - t_{j-1})."""
        return math.fsum((np.abs(self.values) * self.durations[:, None]).ravel())

    def value_at(self, t: float) -> np.ndarray:
        j = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return self.values[min(max(j, 0), self.m - 1)].copy()

    def refined(self, parts: int) -> "Control":
        """Same function with each segment split into ``parts`` equal pieces."""
        d = np.repeat(self.durations / parts, parts)
        v = np.repeat(self.values, parts, axis=0)
        return Control(d, v)

    def is_zero(self) -> bool:
        return not np.any(self.values)

    def __eq__(self, other):
        return (
            isinstance(other, Control)
            and np.array_equal(self.durations, other.durations)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"Control(m={self.m}, k={self.k}, l1={self.l1_norm():.6g})"

    def to_json(self):
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_json(cls, data):
        try:
            return cls.from_breakpoints(data["breakpoints"], data["values"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"control JSON needs 'breakpoints' and 'values': {exc}") from None


def load_control(path) -> Control:
    try:
        with open(path) as fh:
            return Control.from_json(json.load(fh))
    except OSError as exc:
        raise InputError(f"cannot read control file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"control file is not valid JSON: {exc}") from None


def control_length(u: Control) -> float:
    """sum_j ||u_j||_2 (t_j - t_{j-1}); the length when the frame is orthonormal."""
    return math.fsum(np.linalg.norm(u.values, axis=1) * u.durations)


@dataclass
class HorizontalPath:
    times: np.ndarray
    points: np.ndarray
    control: Control
    length: float
    offsets: np.ndarray  # sample index where each segment starts; last entry = final index

    @property
    def endpoint(self) -> np.ndarray:
        return self.points[-1].copy()

    def at(self, t) -> np.ndarray:
        """Piecewise-linear interpolation of the samples."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty((t.size, self.points.shape[1]))
        for i in range(self.points.shape[1]):
            out[:, i] = np.interp(t, self.times, self.points[:, i])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        n = self.points.shape[1]
        buf.write(",".join(["t"] + [f"x{i + 1}" for i in range(n)]) + "\n")
        for t, p in zip(self.times, self.points):
            buf.write(",".join(repr(float(v)) for v in (t, *p)) + "\n")
        return buf.getvalue()


# ----------------------------------------------------------------- RK4 core


def _steps_for(duration, step, even=False):
    n = max(1, math.ceil(abs(duration) / step - 1e-12))
    if even and n % 2:
        n += 1
    return n


def _check_state(x, lo, hi):
    for v, a, b in zip(x, lo, hi):
        if not (a <= v <= b):
            if math.isfinite(v):
                raise DomainExit(f"curve left the domain box at {list(x)}", list(x))
            raise DomainExit(f"non-finite state {list(x)}", list(x))


def _rk4(fn, x, h, nsteps, lo, hi, out=None):
    """Classical RK4 with fixed step on lists of floats."""
    h2 = 0.5 * h
    h6 = h / 6.0
    try:
        for _ in range(nsteps):
            k1 = fn(x)
            k2 = fn([a + h2 * b for a, b in zip(x, k1)])
            k3 = fn([a + h2 * b for a, b in zip(x, k2)])
            k4 = fn([a + h * b for a, b in zip(x, k3)])
            x = [a + h6 * (b + 2.0 * c + 2.0 * d + e) for a, b, c, d, e in zip(x, k1, k2, k3, k4)]
            _check_state(x, lo, hi)
            if out is not None:
                out.append(x)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"field undefined near {list(x)}: {exc}") from None
    return x


def _as_point(g: Geometry, x):
    pt = [float(v) for v in np.asarray(x, dtype=float).reshape(-1)]
    if len(pt) != g.dim:
        raise InputError(f"point has {len(pt)} coordinates, geometry has {g.dim}")
    if not g.in_domain(pt):
        raise DomainExit(f"point {pt} is outside the domain box", pt)
    return pt


def _field_fn(g: Geometry, X):
    if isinstance(X, (int, np.integer)):
        X = int(X)
        if not 1 <= X <= g.k:
            raise InputError(f"generator index {X} out of range 1..{g.k}")
        X = g.generators[X - 1]
    if not isinstance(X, VectorField) or X.dim != g.dim:
        raise InputError("flow needs a vector field of the geometry's dimension")
    return ex.compile_exprs(X.components, g.dim, "scalar")


def flow(g: Geometry, X, t: float, x, step: float = DEFAULT_STEP) -> np.ndarray:
    """Fl^X_t(x) by RK4 with ceil(|t|/step) equal steps.

    ``X`` is a VectorField or a 1-based generator index.
    """
    pt = _as_point(g, x)
    fn = _field_fn(g, X)
    if t == 0:
        return np.array(pt)
    n = _steps_for(t, step)
    lo, hi = g.domain[:, 0].tolist(), g.domain[:, 1].tolist()
    return np.array(_rk4(fn, pt, t / n, n, lo, hi))


def compose_flows(g: Geometry, segments, x, step: float = DEFAULT_STEP) -> np.ndarray:
    """Apply generator flows ``(j, t)`` left to right starting from x."""
    pt = _as_point(g, x)
    lo, hi = g.domain[:, 0].tolist(), g.domain[:, 1].tolist()
    for j, t in segments:
        if t == 0:
            continue
        fn = _field_fn(g, j)
        n = _steps_for(t, step)
        pt = _rk4(fn, pt, t / n, n, lo, hi)
    return np.array(pt)


def _controlled_fn(g: Geometry, mode="scalar"):
    return ex.compile_exprs(g.controlled_exprs(), g.dim + g.k, mode)


def integrate_control(g: Geometry, u: Control, x0, step: float = DEFAULT_STEP) -> HorizontalPath:
    """Solve gamma' = sum_i u_i(t) X_i(gamma), gamma(0) = x0 segment by segment.

    Each segment gets an even number of equal RK4 steps no longer than
    ``step``, so the samples support composite Simpson quadrature.
    """
    if u.k != g.k:
        raise InputError(f"control has {u.k} channels, geometry has {g.k} generators")
    x = _as_point(g, x0)
    F = _controlled_fn(g)
    lo, hi = g.domain[:, 0].tolist(), g.domain[:, 1].tolist()
    points = [x]
    times = [0.0]
    offsets = [0]
    t0 = 0.0
    bp = u.breakpoints
    for j in range(u.m):
        d = u.durations[j]
        n = _steps_for(d, step, even=True)
        h = d / n
        row = u.values[j].tolist()
        seg = []
        if any(row):
            _rk4(lambda y, row=row: F(y + row), x, h, n, lo, hi, seg)
        else:
            seg = [x] * n
        points.extend(seg)
        t0 = bp[j]
        times.extend(t0 + h * np.arange(1, n + 1))
        times[-1] = bp[j + 1]
        x = seg[-1]
        offsets.append(len(points) - 1)
    return HorizontalPath(
        np.array(times), np.array(points), u, control_length(u), np.array(offsets)
    )


def endpoint(g: Geometry, u: Control, x0, step: float = DEFAULT_STEP) -> np.ndarray:
    """End_x0(u): the endpoint of the controlled curve."""
    if u.k != g.k:
        raise InputError(f"control has {u.k} channels, geometry has {g.k} generators")
    x = _as_point(g, x0)
    F = _controlled_fn(g)
    lo, hi = g.domain[:, 0].tolist(), g.domain[:, 1].tolist()
    for j in range(u.m):
        row = u.values[j].tolist()
        if not any(row):
            continue
        d = u.durations[j]
        n = _steps_for(d, step, even=True)
        x = _rk4(lambda y, row=row: F(y + row), x, d / n, n, lo, hi)
    return np.array(x)


def endpoint_batch(g: Geometry, durations, values, x0, step: float = DEFAULT_STEP):
    """Endpoints for a batch of controls sharing the same breakpoints.

    ``values`` has shape (B, m, k).  Returns ``(points (B, n), ok (B,))`` where
    ``ok`` is False for samples that left the domain box or became
    non-finite.  Columns are integrated independently, so each sample's result
    does not depend on the rest of the batch.
    """
    values = np.asarray(values, dtype=float)
    B, m, k = values.shape
    if k != g.k:
        raise InputError(f"controls have {k} channels, geometry has {g.k} generators")
    F = _controlled_fn(g, "numpy")
    lo, hi = g.domain[:, 0], g.domain[:, 1]
    x0 = np.asarray(x0, dtype=float)
    x = [np.full(B, v) for v in x0]
    ok = np.ones(B, dtype=bool)
    with np.errstate(all="ignore"):
        for j in range(m):
            d = float(durations[j])
            n = _steps_for(d, step, even=True)
            h = d / n
            row = [values[:, j, i] for i in range(k)]
            f = lambda y: [np.broadcast_to(c, (B,)) for c in F(y + row)]  # noqa: E731
            for _ in range(n):
                k1 = f(x)
                k2 = f([a + 0.5 * h * b for a, b in zip(x, k1)])
                k3 = f([a + 0.5 * h * b for a, b in zip(x, k2)])
                k4 = f([a + h * b for a, b in zip(x, k3)])
                x = [a + (h / 6.0) * (b + 2.0 * c + 2.0 * d_ + e) for a, b, c, d_, e in zip(x, k1, k2, k3, k4)]
                for i in range(g.dim):
                    ok &= (x[i] >= lo[i]) & (x[i] <= hi[i])
    return np.stack(x, axis=1), ok


# ------------------------------------------------------- control algebra


def concat_controls(u: Control, v: Control, s: float = 0.5) -> Control:
    """u *_s v: u time-compressed into [0, s), v into [s, 1]."""
    if not 0.0 < s < 1.0:
        raise InputError("concatenation parameter s must lie in (0, 1)")
    if u.k != v.k:
        raise InputError("controls have different channel counts")
    d = np.concatenate([u.durations * s, v.durations * (1.0 - s)])
    vals = np.concatenate([u.values / s, v.values / (1.0 - s)])
    return Control(d, vals)


def l1_distance(u: Control, v: Control) -> float:
    """||u - v||_L1, exact on the common refinement of the breakpoints."""
    if u.k != v.k:
        raise InputError("controls have different channel counts")
    grid = np.union1d(u.breakpoints, v.breakpoints)
    mids = 0.5 * (grid[1:] + grid[:-1])
    widths = np.diff(grid)
    ju = np.clip(np.searchsorted(u.breakpoints, mids, side="right") - 1, 0, u.m - 1)
    jv = np.clip(np.searchsorted(v.breakpoints, mids, side="right") - 1, 0, v.m - 1)
    diff = np.abs(u.values[ju] - v.values[jv]).sum(axis=1)
    return math.fsum(diff * widths)


def reverse_control(u: Control) -> Control:
    """The inverse control t -> -u(1 - t)."""
    return Control(u.durations[::-1].copy(), -u.values[::-1])


# --------------------------------------------------------- Picard oracle


def lipschitz_bound(g: Geometry, samples: int = 512, seed: int = 0, safety: float = 1.5) -> float:
    """Estimate L with ||X_i(x) - X_i(y)||_1 <= L ||x - y||_1 on the domain box.

    Samples the symbolic Jacobians at random points, the box corners and the
    centre, takes the largest induced 1-norm and multiplies by ``safety``.
    """
    n = g.dim
    entries = [ex.diff_expr(c, b) for X in g.generators for c in X.components for b in range(n)]
    fn = ex.compile_exprs(entries, n, "numpy")
    rng = np.random.default_rng(seed)
    lo, hi = g.domain[:, 0], g.domain[:, 1]
    pts = [lo + (hi - lo) * rng.random((samples, n)), ((lo + hi) / 2)[None, :]]
    if n <= 10:
        corners = np.array(list(np.ndindex(*(2,) * n)), dtype=float)
        pts.append(lo + (hi - lo) * corners)
    P = np.concatenate(pts)
    with np.errstate(all="ignore"):
        vals = fn([P[:, i] for i in range(n)])
    J = np.stack([np.broadcast_to(np.asarray(v, dtype=float), (P.shape[0],)) for v in vals], axis=1)
    J = J.reshape(P.shape[0], g.k, n, n)  # point, generator, component, derivative
    col_sums = np.abs(J).sum(axis=2)
    norms = np.where(np.isfinite(col_sums), col_sums, 0.0).max(axis=2)
    return safety * float(norms.max())


def picard_solve(
    g: Geometry,
    u: Control,
    x0,
    grid: int = 512,
    max_iter: int = 200,
    tol: float = 1e-12,
    L: float | None = None,
) -> HorizontalPath:
    """Solve the controlled ODE as the fixed point of gamma -> x0 + int sum u_i X_i(gamma).

    [0, 1] is split at the control breakpoints and further until the control's
    L1 norm on each piece is below 1/(3L), where the integral operator is a
    1/3-contraction.  Each piece is iterated on a uniform grid of ``grid``
    points with the trapezoid rule.
    """
    if u.k != g.k:
        raise InputError(f"control has {u.k} channels, geometry has {g.k} generators")
    if grid < 3:
        raise InputError("grid must have at least 3 points")
    x = np.array(_as_point(g, x0))
    if L is None:
        L = lipschitz_bound(g)
    F = _controlled_fn(g, "numpy")
    lo, hi = g.domain[:, 0], g.domain[:, 1]
    bp = u.breakpoints
    times = [np.array([0.0])]
    points = [x[None, :]]
    offsets = [0]
    count = 1
    piece_id = 0
    for j in range(u.m):
        rate = float(np.abs(u.values[j]).sum())
        pieces = int(math.floor(3.0 * L * rate * u.durations[j])) + 1
        edges = np.linspace(bp[j], bp[j + 1], pieces + 1)
        row = u.values[j].tolist()
        for a, b in zip(edges[:-1], edges[1:]):
            ts = np.linspace(a, b, grid)
            dt = ts[1] - ts[0]
            gamma = np.tile(x, (grid, 1))
            prev = math.inf
            first = None
            with np.errstate(all="ignore"):
                for it in range(max_iter):
                    vals = F([gamma[:, i] for i in range(g.dim)] + row)
                    rhs = np.stack([np.broadcast_to(v, (grid,)) for v in vals], axis=1)
                    cum = np.concatenate(
                        [np.zeros((1, g.dim)), np.cumsum(0.5 * dt * (rhs[1:] + rhs[:-1]), axis=0)]
                    )
                    new = x + cum
                    delta = float(np.max(np.abs(new - gamma)))
                    gamma = new
                    if not math.isfinite(delta):
                        raise ConvergenceError(f"Picard iteration diverged on piece {piece_id} [{a:.6g}, {b:.6g}]")
                    if first is None:
                        first = delta
                    if delta < tol:
                        break
                    if it > 3 and delta > max(prev, 10.0 * first):
                        raise ConvergenceError(
                            f"Picard iteration not contracting on piece {piece_id} [{a:.6g}, {b:.6g}]"
                        )
                    prev = delta
                else:
                    raise ConvergenceError(
                        f"Picard iteration did not reach tol={tol:g} on piece {piece_id} [{a:.6g}, {b:.6g}]"
                    )
            if np.any(gamma < lo) or np.any(gamma > hi):
                raise DomainExit(f"Picard iterate left the domain box on piece {piece_id}")
            times.append(ts[1:])
            points.append(gamma[1:])
            count += grid - 1
            x = gamma[-1]
            piece_id += 1
        offsets.append(count - 1)
    return HorizontalPath(
        np.concatenate(times), np.concatenate(points), u, control_length(u), np.array(offsets)
    )
