"""Lengths, Carnot-Caratheodory distance upper bounds, ball clouds and Ball-Box fits."""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .chow import steer_plan
from .errors import DomainError, DomainExit, InputError, NumericError
from .fields import Geometry, numerical_rank
from .integrate import DEFAULT_STEP, Control, control_length, endpoint, endpoint_batch, reverse_control

log = logging.getLogger(__name__)

LAMBDAS = (1e2, 1e3, 1e4, 1e5, 1e6)


def path_length(g: Geometry, u: Control) -> float:
    """Length of the horizontal curve driven by u (generators orthonormal)."""
    if u.k != g.k:
        raise InputError(f"control has {u.k} channels, geometry has {g.k} generators")
    return control_length(u)


def _length(durations, V):
    return math.fsum(np.linalg.norm(V, axis=1) * durations)


def frame_rank_deficit(g: Geometry, points, rank_tol: float = 1e-9) -> list:
    """Sample points (among ``points``) where the generator frame drops rank."""
    bad = []
    for p in points:
        if numerical_rank(g.frame(p).T, rank_tol) < g.k:
            bad.append(np.asarray(p, dtype=float))
    return bad


def refine_control(
    g: Geometry,
    u: Control,
    x,
    y,
    tol: float = 1e-8,
    step: float = DEFAULT_STEP,
    pieces: int = 2,
    sweeps: int = 3,
    coarse_step: float = 5e-3,
) -> Control:
    """Shorten u while keeping its endpoint at y.

    Coordinate-wise descent on J(V) = length + lam * |End(V) - y|^2 over the
    segment values V (breakpoints fixed, each segment split into ``pieces``),
    with lam ramped 1e2 -> 1e6 by x10 per stage.  Each coordinate takes a 1-D
    Newton step from central differences.  A minimum-norm Gauss-Newton
    projection then puts the endpoint back on y.  Returns u unchanged unless
    the result is shorter and within ``tol`` of y.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = u.refined(pieces)
    d = w.durations
    m, k = w.values.shape
    coarse = max(step, coarse_step)

    def end(V, st):
        return endpoint(g, Control(d, V.reshape(m, k)), x, st)

    def J(V, lam):
        try:
            e = end(V, coarse) - y
        except (DomainExit, DomainError):
            return math.inf
        return _length(d, V.reshape(m, k)) + lam * float(e @ e)

    V = w.values.ravel().copy()
    for lam in LAMBDAS:
        f0 = J(V, lam)
        for _ in range(sweeps):
            start = f0
            for i in range(V.size):
                h = 1e-5 * max(1.0, abs(V[i]))
                Vp, Vm = V.copy(), V.copy()
                Vp[i] += h
                Vm[i] -= h
                fp, fm = J(Vp, lam), J(Vm, lam)
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    continue
                grad = (fp - fm) / (2 * h)
                curv = (fp - 2 * f0 + fm) / (h * h)
                delta = -grad / curv if curv > 0 else -math.copysign(h, grad)
                while abs(delta) > 1e-14:
                    Vt = V.copy()
                    Vt[i] += delta
                    ft = J(Vt, lam)
                    if ft < f0:
                        V, f0 = Vt, ft
                        break
                    delta *= 0.5
            if start - f0 < 1e-12 * max(1.0, abs(start)):
                break

    V = _project(g, d, V, m, k, x, y, tol, step)
    if V is None:
        return u
    cand = Control(d, V.reshape(m, k))
    err = float(np.linalg.norm(endpoint(g, cand, x, step) - y))
    if err < tol and control_length(cand) < control_length(u):
        return cand
    return u


def _project(g, d, V, m, k, x, y, tol, step, iters=8):
    """Minimum-norm Gauss-Newton correction of the endpoint onto y."""
    def end(V):
        return endpoint(g, Control(d, V.reshape(m, k)), x, step)

    try:
        e = end(V) - y
        for _ in range(iters):
            if np.linalg.norm(e) < tol / 10:
                return V
            Jm = np.empty((y.size, V.size))
            for i in range(V.size):
                h = 1e-7 * max(1.0, abs(V[i]))
                Vp = V.copy()
                Vp[i] += h
                Jm[:, i] = (end(Vp) - y - e) / h
            V = V - np.linalg.lstsq(Jm, e, rcond=None)[0]
            e = end(V) - y
    except (DomainExit, DomainError, np.linalg.LinAlgError):
        return None
    return V if np.linalg.norm(e) < tol else None


def distance_upper(
    g: Geometry,
    x,
    y,
    refine: bool = False,
    tol: float = 1e-8,
    step: float = DEFAULT_STEP,
    max_depth: int = 4,
    symmetric: bool = True,
    **refine_opts,
):
    """Upper bound for d(x, y) and a control from x to y attaining it.

    The bound is the length of a steering control.  With ``symmetric`` the
    reversed steer from y to x is also tried and the shorter one kept.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (g.dim,) or y.shape != (g.dim,):
        raise InputError(f"points must have {g.dim} coordinates")
    if np.array_equal(x, y):
        return 0.0, Control.zero(g.k)
    plan = steer_plan(g, x, y, tol=tol, max_depth=max_depth, step=step)
    best = plan.control
    bad = frame_rank_deficit(g, plan.path.points[:: max(1, len(plan.path.points) // 50)])
    if bad:
        log.warning("generator frame drops rank near %s; length is the control cost", bad[0].tolist())
    if symmetric:
        try:
            back = reverse_control(steer_plan(g, y, x, tol=tol, max_depth=max_depth, step=step).control)
            err = float(np.linalg.norm(endpoint(g, back, x, step) - y))
            if err < tol and control_length(back) < control_length(best):
                best = back
        except NumericError:
            pass
    if refine:
        best = refine_control(g, best, x, y, tol=tol, step=step, **refine_opts)
    return control_length(best), best


# ------------------------------------------------------------ ball cloud


@dataclass
class BallCloud:
    center: np.ndarray
    eps: float
    points: np.ndarray
    lengths: np.ndarray
    seed: int
    segments: int
    resampled: int = 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        n = self.points.shape[1]
        buf.write(",".join([f"x{i + 1}" for i in range(n)] + ["length"]) + "\n")
        for p, ell in zip(self.points, self.lengths):
            buf.write(",".join(repr(float(v)) for v in (*p, ell)) + "\n")
        return buf.getvalue()


def _sample_values(seed, index, attempt, segments, k, eps):
    rng = np.random.default_rng([seed, index, attempt])
    dirs = rng.standard_normal((segments, k))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    scale = eps * (1.0 - rng.random())  # Uniform(0, 1]
    return dirs / norms * scale


def ball_sample(
    g: Geometry,
    x0,
    eps: float,
    n_samples: int,
    segments: int = 4,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    max_attempts: int = 50,
) -> BallCloud:
    """Endpoints of random controls of length at most eps.

    Sample i uses its own generator seeded by (seed, i, attempt), so any prefix
    of the cloud is independent of ``n_samples``.  Samples that leave the
    domain are redrawn with the next attempt number.
    """
    if not eps > 0:
        raise InputError("eps must be positive")
    if n_samples < 1 or segments < 1:
        raise InputError("n_samples and segments must be positive")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (g.dim,) or not g.in_domain(x0):
        raise InputError(f"center must be a point of the domain with {g.dim} coordinates")
    durations = np.full(segments, 1.0 / segments)
    attempt = np.zeros(n_samples, dtype=int)
    points = np.empty((n_samples, g.dim))
    values = np.empty((n_samples, segments, g.k))
    todo = np.arange(n_samples)
    resampled = 0
    while todo.size:
        batch = np.stack([_sample_values(seed, i, attempt[i], segments, g.k, eps) for i in todo])
        pts, ok = endpoint_batch(g, durations, batch, x0, step)
        points[todo[ok]] = pts[ok]
        values[todo[ok]] = batch[ok]
        todo = todo[~ok]
        resampled += todo.size
        attempt[todo] += 1
        if todo.size and attempt.max() >= max_attempts:
            raise NumericError(f"{todo.size} samples kept leaving the domain after {max_attempts} draws")
    if resampled:
        log.info("redrew %d samples that left the domain", resampled)
    lengths = (np.linalg.norm(values, axis=2) * durations).sum(axis=1)
    return BallCloud(x0, float(eps), points, lengths, seed, segments, resampled)


# ------------------------------------------------------------ Ball-Box fit


@dataclass
class BoxFit:
    slope: float
    log_h: np.ndarray
    log_d: np.ndarray
    dropped: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("log_h,log_d\n")
        for a, b in zip(self.log_h, self.log_d):
            buf.write(f"{float(a)!r},{float(b)!r}\n")
        buf.write(f"slope,{float(self.slope)!r}\n")
        return buf.getvalue()


def boxfit_exponent(
    g: Geometry, x0, direction: int, radii, refine: bool = False, **opts
) -> BoxFit:
    """Least-squares slope of log d(x0, x0 + h e_dir) against log h.

    ``direction`` is a 0-based coordinate index.  Radii whose distance bound
    fails are dropped and listed in the result.
    """
    x0 = np.asarray(x0, dtype=float)
    if not 0 <= direction < g.dim:
        raise InputError(f"direction must be a coordinate index in 0..{g.dim - 1}")
    radii = [float(h) for h in radii]
    if any(h <= 0 for h in radii):
        raise InputError("radii must be positive")
    hs, ds, dropped = [], [], []
    for h in radii:
        y = x0.copy()
        y[direction] += h
        try:
            dist, _ = distance_upper(g, x0, y, refine=refine, **opts)
        except NumericError as exc:
            log.warning("radius %g dropped: %s", h, exc)
            dropped.append((h, str(exc)))
            continue
        hs.append(math.log(h))
        ds.append(math.log(dist))
    if len(hs) < 2:
        raise NumericError(f"need at least two usable radii, got {len(hs)}")
    slope = float(np.polyfit(hs, ds, 1)[0])
    return BoxFit(slope, np.array(hs), np.array(ds), dropped)
