"""Reconstruction of a function from its horizontal derivatives.

Given h_i = X_i f, the value at a target follows from any horizontal path
gamma driven by u from x0:

    f(target) = f(x0) + int_0^1 sum_i u_i(t) h_i(gamma(t)) dt.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from . import expr as ex
from .chow import steer_plan
from .errors import DomainError, InputError, NumericError
from .fields import Geometry, eval_bracket, growth_vector
from .integrate import DEFAULT_STEP, Control, HorizontalPath, integrate_control
from .metrics import ball_sample

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HorizontalDerivatives:
    geometry: Geometry
    fields: tuple

    def __post_init__(self):
        if len(self.fields) != self.geometry.k:
            raise InputError(f"need {self.geometry.k} horizontal derivatives, got {len(self.fields)}")
        for h in self.fields:
            if ex.max_coord(h) >= self.geometry.dim:
                raise InputError("horizontal derivative uses a coordinate outside the geometry")

    @classmethod
    def from_text(cls, g: Geometry, texts):
        return cls(g, tuple(ex.parse_expr(t, g.coords) for t in texts))

    def to_json(self):
        return {"fields": [ex.to_text(h, self.geometry.coords) for h in self.fields]}

    @classmethod
    def from_json(cls, g: Geometry, data):
        try:
            texts = data["fields"]
        except (KeyError, TypeError):
            raise InputError('horizontal derivative JSON needs a "fields" list') from None
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            raise InputError('"fields" must be a list of expression strings')
        return cls.from_text(g, texts)

    def evaluate(self, points) -> np.ndarray:
        """h_i at each row of ``points``; shape (N, k)."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        fn = ex.compile_exprs(list(self.fields), self.geometry.dim, "numpy")
        with np.errstate(all="raise"):
            try:
                vals = fn([P[:, i] for i in range(P.shape[1])])
            except (FloatingPointError, ZeroDivisionError, ValueError) as exc:
                raise DomainError(f"horizontal derivative undefined on the path: {exc}") from None
        out = np.stack([np.broadcast_to(np.asarray(v, dtype=float), (P.shape[0],)) for v in vals], axis=1)
        if not np.all(np.isfinite(out)):
            raise DomainError("horizontal derivative is not finite on the path")
        return out


def load_horizontal_derivatives(path, g: Geometry) -> HorizontalDerivatives:
    try:
        with open(path) as fh:
            return HorizontalDerivatives.from_json(g, json.load(fh))
    except OSError as exc:
        raise InputError(f"cannot read derivative file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"derivative file is not valid JSON: {exc}") from None


def horizontal_derivatives(g: Geometry, f) -> HorizontalDerivatives:
    """h_i = X_i f computed symbolically (a helper for building test data)."""
    if isinstance(f, str):
        f = ex.parse_expr(f, g.coords)
    return HorizontalDerivatives(g, tuple(X.apply(f) for X in g.generators))


def line_integral(d: HorizontalDerivatives, path: HorizontalPath) -> float:
    """int sum_i u_i h_i(gamma) dt, composite Simpson on each control segment."""
    H = d.evaluate(path.points)
    u = path.control
    total = 0.0
    for j in range(u.m):
        a, b = path.offsets[j], path.offsets[j + 1]
        if not np.any(u.values[j]):
            continue
        integrand = H[a : b + 1] @ u.values[j]
        total += float(simpson(integrand, x=path.times[a : b + 1]))
    return total


def route_control(g: Geometry, waypoints, tol=1e-9, step=DEFAULT_STEP, max_depth=4) -> Control:
    """One control visiting the waypoints in order (steered leg by leg)."""
    segs = []
    pts = [np.asarray(p, dtype=float) for p in waypoints]
    current = pts[0]
    for nxt in pts[1:]:
        plan = steer_plan(g, current, nxt, tol=tol, max_depth=max_depth, step=step)
        segs.extend(plan.segments)
        current = plan.path.endpoint
    return Control.from_segments(segs, g.k)


def reconstruct_along(d: HorizontalDerivatives, u: Control, x0, f0: float, step=DEFAULT_STEP):
    """(f0 + line integral, endpoint) along the path driven by u."""
    path = integrate_control(d.geometry, u, x0, step)
    return f0 + line_integral(d, path), path.endpoint


def reconstruct(
    d: HorizontalDerivatives,
    x0,
    f0: float,
    target,
    tol: float = 1e-9,
    step: float = DEFAULT_STEP,
    max_depth: int = 4,
    via=(),
) -> float:
    """f(target) from f(x0) = f0 and the horizontal derivatives.

    The path is a steering control from x0 to target, optionally routed
    through the points in ``via``.
    """
    x0 = np.asarray(x0, dtype=float)
    target = np.asarray(target, dtype=float)
    if np.array_equal(x0, target) and not len(via):
        return float(f0)
    u = route_control(d.geometry, [x0, *via, target], tol, step, max_depth)
    value, _ = reconstruct_along(d, u, x0, f0, step)
    return value


@dataclass
class PathIndependence:
    max_discrepancy: float
    values: list
    routes: list = field(default_factory=list)

    def __float__(self):
        return self.max_discrepancy


def loop_waypoint(g: Geometry, p, size: float = 0.04, max_depth: int = 4) -> np.ndarray:
    """p displaced along the highest-weight bracket direction of the chart at p.

    Steering p -> waypoint -> p traces a closed bracket loop (the commutator
    square and its reverse on the Heisenberg group).
    """
    gv = growth_vector(g, p, max_depth)
    B, _ = gv.basis[-1]
    v = eval_bracket(g, B, p)
    return np.asarray(p, dtype=float) + size * v / np.linalg.norm(v)


def path_independence_check(
    d: HorizontalDerivatives,
    x0,
    f0: float,
    target,
    trials: int = 4,
    seed: int = 0,
    spread: float | None = None,
    loop_size: float = 0.04,
    tol: float = 1e-9,
    step: float = DEFAULT_STEP,
    max_depth: int = 4,
) -> PathIndependence:
    """Reconstruct along several routes and report the largest pairwise gap.

    Routes: the direct steer, the direct steer followed by a closed bracket
    loop at the target, then routes through random intermediate waypoints.
    """
    g = d.geometry
    x0 = np.asarray(x0, dtype=float)
    target = np.asarray(target, dtype=float)
    if trials < 2:
        raise InputError("need at least two routes")
    if np.array_equal(x0, target):
        return PathIndependence(0.0, [float(f0)] * trials, [[x0, target]] * trials)
    rng = np.random.default_rng(seed)
    if spread is None:
        spread = 0.5 * max(float(np.linalg.norm(target - x0)), 0.1)
    routes = [[x0, target]]
    w = loop_waypoint(g, target, loop_size, max_depth)
    routes.append([x0, target, w, target])
    while len(routes) < trials:
        mid = 0.5 * (x0 + target) + spread * rng.uniform(-1, 1, g.dim)
        routes.append([x0, mid, target])
    values, used = [], []
    for r in routes[:trials]:
        try:
            values.append(reconstruct(d, r[0], f0, r[-1], tol, step, max_depth, via=r[1:-1]))
            used.append(r)
        except NumericError as exc:
            log.warning("route through %s failed: %s", [p.tolist() for p in r[1:-1]], exc)
    if len(values) < 2:
        raise NumericError(f"only {len(values)} route(s) could be steered")
    gap = float(max(values) - min(values))
    return PathIndependence(gap, values, used)


@dataclass
class CCReport:
    cc_ratio_max: float
    euclid_ratio_at: list
    ray_axis: int
    samples: int

    def to_json(self):
        return {
            "cc_ratio_max": self.cc_ratio_max,
            "euclid_ratio_at": [[h, r] for h, r in self.euclid_ratio_at],
            "ray_axis": self.ray_axis,
            "samples": self.samples,
        }


def degenerate_axis(g: Geometry, x0) -> int:
    """Coordinate axis with the smallest component inside H_x0."""
    F = g.frame(x0)
    Q, _ = np.linalg.qr(F)
    inside = np.linalg.norm(Q.T, axis=0)  # |projection of e_j onto range(F)|
    return int(np.argmin(inside))


def cc_lipschitz_check(
    d: HorizontalDerivatives,
    f,
    x0,
    eps: float = 0.5,
    n_samples: int = 500,
    seed: int = 0,
    offsets=(1e-4, 1e-6, 1e-8),
    axis: int | None = None,
    segments: int = 4,
    step: float = DEFAULT_STEP,
) -> CCReport:
    """Witness of |f(p) - f(x0)| <= C d(p, x0) against the Euclidean ratio.

    The CC ratio divides by recorded control lengths, which bound d from
    above.  The Euclidean ratio is taken along a coordinate ray least aligned
    with H_x0, at the given offsets.
    """
    g = d.geometry
    if isinstance(f, str):
        f = ex.parse_expr(f, g.coords)
    x0 = np.asarray(x0, dtype=float)
    fn = ex.compile_exprs([f], g.dim, "numpy")

    def fval(P):
        P = np.atleast_2d(P)
        with np.errstate(all="raise"):
            try:
                v = fn([P[:, i] for i in range(g.dim)])[0]
            except (FloatingPointError, ZeroDivisionError, ValueError) as exc:
                raise DomainError(f"f undefined on the sample set: {exc}") from None
        return np.broadcast_to(np.asarray(v, dtype=float), (P.shape[0],))

    cloud = ball_sample(g, x0, eps, n_samples, segments, seed, step)
    f0 = fval(x0[None, :])[0]
    diffs = np.abs(fval(cloud.points) - f0)
    ratios = np.divide(diffs, cloud.lengths, out=np.zeros_like(diffs), where=cloud.lengths > 0)
    if axis is None:
        axis = degenerate_axis(g, x0)
    ray = []
    for h in offsets:
        p = x0.copy()
        p[axis] += h
        ray.append((float(h), float(abs(fval(p[None, :])[0] - f0) / h)))
    return CCReport(float(ratios.max()), ray, axis, n_samples)


def reconstruction_csv(points, values) -> str:
    buf = io.StringIO()
    n = len(points[0])
    buf.write(",".join([f"x{i + 1}" for i in range(n)] + ["f_reconstructed"]) + "\n")
    for p, v in zip(points, values):
        buf.write(",".join(repr(float(c)) for c in (*p, v)) + "\n")
    return buf.getvalue()
