"""Brackets of flows and constructive local steering.

The steering map composes root-reparametrised brackets of generator flows,

    psi(t_1, ..., t_n) = psi_n(t_n) o ... o psi_1(t_1)(x0),
    psi_i(t, x) = chi_i(s_i(t), x),

where chi_i is the bracket of flows for the i-th basis bracket B_i (or for
C_i, B_i with its outermost arguments swapped, when w_i is even and the root
parameter is negative).  psi is C^1 with d psi / d t_i = B_i(X)(x0) / w_i! at
0, so Newton's method on psi inverts it near x0, and unrolling the chi_i into
elementary generator flows gives an explicit piecewise-constant control.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, DomainExit, InputError, NotBracketGenerating, SteeringError
from .fields import FormalBracket, Geometry, GrowthVector, Leaf, Node, eval_bracket, growth_vector
from .integrate import DEFAULT_STEP, Control, HorizontalPath, compose_flows, integrate_control

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps


def unroll(B: FormalBracket, t: float) -> list:
    """Elementary flows ``(generator, signed time)`` of the bracket of flows B at t.

    [E, F]_t = F_t^-1 o E_t^-1 o F_t o E_t, listed in application order.
    """
    if isinstance(B, Leaf):
        return [(B.index, t)]
    e = unroll(B.left, t)
    f = unroll(B.right, t)
    return e + f + _inverse(e) + _inverse(f)


def _inverse(segs):
    return [(j, -t) for j, t in reversed(segs)]


def bracket_flow(g: Geometry, B: FormalBracket, t: float, x, step: float = DEFAULT_STEP) -> np.ndarray:
    return compose_flows(g, unroll(B, t), x, step)


# -------------------------------------------------------- derivative check


def central_weights(order: int, p: int) -> np.ndarray:
    """Weights w_j on offsets -p..p with sum_j w_j f(j h) / h^order ~ f^(order)(0)."""
    offsets = np.arange(-p, p + 1, dtype=float)
    A = np.vander(offsets, 2 * p + 1, increasing=True).T
    rhs = np.zeros(2 * p + 1)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(A, rhs)


@dataclass
class MichorReport:
    order: int
    low_order_max: float
    kth_estimate: np.ndarray
    reference: np.ndarray
    rel_err: float
    cancellation: bool = False
    low_order: list = field(default_factory=list)


def michor_check(
    g: Geometry, B: FormalBracket, x, h: float = 1e-2, step: float = DEFAULT_STEP
) -> MichorReport:
    """Compare the first non-vanishing derivative of the bracket of flows with B(X).

    Derivatives of t -> bracket_flow(B, t, x) at 0 are taken with second-order
    central stencils at spacings h and h/2 and one Richardson step.
    """
    x = np.asarray(x, dtype=float)
    k = B.weight
    p = (k + 1) // 2
    cache = {}

    def value(t):
        if t not in cache:
            cache[t] = bracket_flow(g, B, t, x, step) - x
        return cache[t]

    def derivative(order, hh):
        pp = (order + 1) // 2
        w = central_weights(order, pp)
        acc = np.zeros_like(x)
        for j, wj in zip(range(-pp, pp + 1), w):
            if wj != 0.0:
                acc += wj * value(j * hh)
        return acc / hh**order

    estimates = []
    for order in range(1, k + 1):
        coarse = derivative(order, h)
        fine = derivative(order, h / 2)
        estimates.append((4.0 * fine - coarse) / 3.0)
    for j in range(-p, p + 1):
        value(j * h)
    spread = max(float(np.linalg.norm(v)) for v in cache.values())
    cancellation = spread < 1e3 * EPS * max(1.0, float(np.linalg.norm(x)))
    if cancellation:
        log.warning("stencil values for %s differ by only %.3g; derivatives are noise", B, spread)
    kth = estimates[-1] / math.factorial(k)
    ref = eval_bracket(g, B, x)
    low = [float(np.linalg.norm(e)) for e in estimates[:-1]]
    ref_norm = float(np.linalg.norm(ref))
    err = float(np.linalg.norm(kth - ref))
    rel = err / ref_norm if ref_norm > 0 else err
    return MichorReport(k, max(low, default=0.0), kth, ref, rel, cancellation, low)


# ----------------------------------------------------------- steering chart


def root_param(t: float, w: int) -> float:
    """s_w: inverse of tau -> sign(tau) w! |tau|^w."""
    if t == 0:
        return 0.0
    return math.copysign((abs(t) / math.factorial(w)) ** (1.0 / w), t)


def root_inverse(tau: float, w: int) -> float:
    return math.copysign(math.factorial(w) * abs(tau) ** w, tau)


@dataclass
class SteeringChart:
    geometry: Geometry
    x0: np.ndarray
    basis: list
    weights: tuple
    swapped: list
    K: int
    rho: float
    jacobian: np.ndarray
    condition: float
    growth: GrowthVector
    step: float = DEFAULT_STEP

    @property
    def box(self) -> np.ndarray:
        """Half-widths of the trust box in t (root parameters bounded by rho)."""
        return np.array([root_inverse(self.rho, w) for w in self.weights])


def chart_segments(c: SteeringChart, t) -> list:
    """Elementary flows realising psi(t), in application order."""
    segs = []
    for ti, B, C, w in zip(t, c.basis, c.swapped, c.weights):
        tau = root_param(float(ti), w)
        if tau == 0.0:
            continue
        expr = B if (w % 2 == 1 or tau >= 0) else C
        segs.extend(unroll(expr, tau))
    return segs


def psi_map(c: SteeringChart, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if t.shape != (len(c.basis),):
        raise InputError(f"psi takes {len(c.basis)} parameters")
    return compose_flows(c.geometry, chart_segments(c, t), c.x0, c.step)


def psi_jacobian(c: SteeringChart, t, delta: float = 1e-7) -> np.ndarray:
    """Forward-difference Jacobian; psi is only C^1."""
    t = np.asarray(t, dtype=float)
    base = psi_map(c, t)
    J = np.empty((base.size, t.size))
    for i in range(t.size):
        d = delta * max(1.0, abs(t[i]))
        tp = t.copy()
        tp[i] += d
        J[:, i] = (psi_map(c, tp) - base) / d
    return J


def build_chart(
    g: Geometry,
    x0,
    max_depth: int = 4,
    rank_tol: float = 1e-9,
    step: float = DEFAULT_STEP,
    rho0: float = 0.5,
    cond_max: float = 1e6,
    min_rho: float = 1e-6,
) -> SteeringChart:
    """Bracket basis at x0 plus a trust radius found by halving from ``rho0``."""
    x0 = np.asarray(x0, dtype=float)
    gv = growth_vector(g, x0, max_depth, rank_tol)
    if not gv.bracket_generating:
        raise NotBracketGenerating(
            f"not bracket generating at {x0.tolist()} within depth {max_depth}: "
            f"growth vector {list(gv.ranks)}",
            gv,
        )
    basis = gv.brackets
    weights = gv.weights
    swapped = [B.swapped() for B in basis]
    K = sum(B.segments for B in basis)
    rho = rho0
    n = g.dim
    while rho >= min_rho:
        chart = SteeringChart(g, x0, basis, weights, swapped, K, rho, np.eye(n), math.inf, gv, step)
        try:
            J = psi_jacobian(chart, np.zeros(n), delta=min(1e-7, 1e-3 * rho))
            cond = float(np.linalg.cond(J))
            if cond < cond_max:
                for signs in itertools.product((-1.0, 1.0), repeat=n):
                    psi_map(chart, np.array(signs) * chart.box)
                chart.jacobian = J
                chart.condition = cond
                return chart
        except (DomainExit, DomainError):
            pass
        rho /= 2
    raise SteeringError(f"no usable trust radius at {x0.tolist()}")


@dataclass
class SteerResult:
    control: Control
    path: HorizontalPath
    segments: list
    params: np.ndarray | None = None
    residual: float = 0.0

    def __iter__(self):
        return iter((self.control, self.path))


def steer_local(
    c: SteeringChart, target, max_newton: int = 50, tol: float = 1e-10
) -> SteerResult:
    """Invert psi by damped Newton and emit the unrolled control."""
    g = c.geometry
    target = np.asarray(target, dtype=float)
    n = g.dim
    t = np.zeros(n)
    r = psi_map(c, t) - target
    res = float(np.linalg.norm(r))
    limit = 4.0 * c.box
    for _ in range(max_newton):
        if res < tol:
            break
        J = psi_jacobian(c, t)
        dt = np.linalg.lstsq(J, -r, rcond=None)[0]
        lam = 1.0
        while lam > 1e-8:
            cand = t + lam * dt
            if np.any(np.abs(cand) > limit):
                lam *= 0.5
                continue
            try:
                r_new = psi_map(c, cand) - target
            except (DomainExit, DomainError):
                lam *= 0.5
                continue
            res_new = float(np.linalg.norm(r_new))
            if res_new < res:
                t, r, res = cand, r_new, res_new
                break
            lam *= 0.5
        else:
            break
    if res >= tol:
        outside = np.any(np.abs(t) > c.box * (1 + 1e-9))
        kind = "target outside trust region" if outside else "Newton stagnated"
        raise SteeringError(f"{kind}: best residual {res:.3g} (tol {tol:.3g})", res)
    if np.any(np.abs(t) > c.box * (1 + 1e-9)):
        raise SteeringError(f"target outside trust region (rho={c.rho:g})", res)
    segs = chart_segments(c, t)
    control = Control.from_segments(segs, g.k)
    path = integrate_control(g, control, c.x0, c.step)
    return SteerResult(control, path, segs, t, float(np.linalg.norm(path.endpoint - target)))


def steer_plan(
    g: Geometry,
    x0,
    target,
    tol: float = 1e-8,
    max_depth: int = 4,
    step: float = DEFAULT_STEP,
    max_subdiv: int = 6,
    rank_tol: float = 1e-9,
) -> SteerResult:
    """Chain local steers along straight-line waypoints from x0 to target."""
    x0 = np.asarray(x0, dtype=float)
    target = np.asarray(target, dtype=float)
    if x0.shape != (g.dim,) or target.shape != (g.dim,):
        raise InputError(f"points must have {g.dim} coordinates")
    for p in (x0, target):
        if not g.in_domain(p):
            raise DomainExit(f"point {p.tolist()} is outside the domain box", p.tolist())
    if np.array_equal(x0, target):
        u = Control.zero(g.k)
        return SteerResult(u, integrate_control(g, u, x0, step), [], None, 0.0)

    try:
        first = build_chart(g, x0, max_depth, rank_tol, step)
    except NotBracketGenerating as exc:
        raise NotBracketGenerating(f"waypoint 0 (start) is not bracket generating: {exc}", exc.growth) from None
    dist = float(np.linalg.norm(target - x0))
    legs = max(1, math.ceil(dist / (first.rho / 2)))
    local_tol = tol / 10
    last_error = None
    for _ in range(max_subdiv + 1):
        try:
            segs = _chain(g, x0, target, legs, first, local_tol, max_depth, rank_tol, step)
        except SteeringError as exc:
            last_error = exc
            legs *= 2
            continue
        control = Control.from_segments(segs, g.k)
        path = integrate_control(g, control, x0, step)
        err = float(np.linalg.norm(path.endpoint - target))
        if err < tol:
            return SteerResult(control, path, segs, None, err)
        last_error = SteeringError(f"chained control misses target by {err:.3g}", err)
        legs *= 2
    raise SteeringError(f"steering failed after subdivision limit: {last_error}",
                        getattr(last_error, "residual", None))


def _chain(g, x0, target, legs, first, tol, max_depth, rank_tol, step):
    segs = []
    current = x0
    for j in range(1, legs + 1):
        waypoint = x0 + (j / legs) * (target - x0)
        if j == 1:
            chart = first
        else:
            try:
                chart = build_chart(g, current, max_depth, rank_tol, step)
            except NotBracketGenerating as exc:
                raise NotBracketGenerating(
                    f"waypoint {j} at {current.tolist()} is not bracket generating: {exc}", exc.growth
                ) from None
        leg = steer_local(chart, waypoint, tol=tol)
        segs.extend(leg.segments)
        current = leg.path.endpoint
    return segs


def steer(g: Geometry, x0, target, **opts) -> Control:
    return steer_plan(g, x0, target, **opts).control
