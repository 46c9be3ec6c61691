import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import square_control
from subriemann import expr as ex
from subriemann.errors import ConvergenceError, DomainError, DomainExit, InputError
from subriemann.fields import Geometry, VectorField, heisenberg
from subriemann.integrate import (
    Control,
    concat_controls,
    endpoint,
    flow,
    integrate_control,
    l1_distance,
    lipschitz_bound,
    load_control,
    picard_solve,
    reverse_control,
)


def rotation():
    c = ["x", "y"]
    X = VectorField([ex.parse_expr("-y", c), ex.parse_expr("x", c)])
    return Geometry(c, [X])


# -- flows


@pytest.mark.parametrize("t", [0.7, -0.3, 1.0])
def test_flow_x1_heisenberg(heis, t):
    np.testing.assert_allclose(flow(heis, 1, t, np.zeros(3)), (t, 0, 0), atol=1e-15)


def test_flow_zero_time_is_identity(heis):
    p = np.array([0.3, -0.2, 0.1])
    assert np.array_equal(flow(heis, 2, 0.0, p), p)


def test_flow_constant_field(plane):
    np.testing.assert_allclose(flow(plane, 1, 1.0, np.zeros(2)), (1, 0), atol=1e-15)


def test_flow_accepts_vector_field(heis):
    X = heis.generators[1]
    assert np.array_equal(flow(heis, X, 0.4, np.zeros(3)), flow(heis, 2, 0.4, np.zeros(3)))


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.sampled_from(["rotation", "heisenberg"]))
def test_flow_group_law(s, t, which):
    g = rotation() if which == "rotation" else heisenberg()
    x = np.full(g.dim, 0.3)
    lhs = flow(g, 1, t, flow(g, 1, s, x))
    rhs = flow(g, 1, s + t, x)
    assert np.linalg.norm(lhs - rhs) < 1e-11


def test_flow_convergence_order_rotation():
    g = rotation()
    exact = np.array([math.cos(1.0), math.sin(1.0)])
    errs = [np.linalg.norm(flow(g, 1, 1.0, (1.0, 0.0), h) - exact) for h in (0.1, 0.05, 0.025)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert all(3.5 <= o <= 4.5 for o in orders)


def test_flow_heisenberg_is_exact_at_any_step(heis):
    # polynomial Heisenberg flows are integrated exactly by RK4, so the order is not observable there
    for h in (0.5, 0.1, 1e-3):
        np.testing.assert_allclose(flow(heis, 2, 0.8, (0.4, 0, 0), h), (0.4, 0.8, 0.16), atol=1e-15)


def test_flow_domain_exit(heis):
    with pytest.raises(DomainExit):
        flow(heis, 1, 25.0, np.zeros(3))


def test_flow_domain_error():
    c = ["x"]
    g = Geometry(c, [VectorField([ex.parse_expr("sqrt(x)", c)])])
    with pytest.raises(DomainError):
        flow(g, 1, -1.0, (0.1,), 0.05)


def test_flow_bad_index(heis):
    with pytest.raises(InputError):
        flow(heis, 3, 0.1, np.zeros(3))


# -- controlled curves


def test_integrate_constant_control(heis):
    path = integrate_control(heis, Control.constant([1, 0]), np.zeros(3))
    np.testing.assert_allclose(path.endpoint, (1, 0, 0), atol=1e-15)
    assert path.length == 1.0


def test_integrate_zero_control(heis):
    x0 = np.array([0.1, 0.2, 0.3])
    path = integrate_control(heis, Control.zero(2), x0)
    assert np.all(path.points == x0)
    assert path.length == 0.0


@pytest.mark.parametrize("t", [0.2, 0.5, 1.0])
def test_commutator_square(heis, t):
    u = square_control(t)
    np.testing.assert_allclose(endpoint(heis, u, np.zeros(3)), (0, 0, t * t), atol=1e-12)
    assert integrate_control(heis, u, np.zeros(3)).length == pytest.approx(4 * t, rel=1e-15)


def test_path_samples_include_breakpoints(heis):
    u = Control([0.3, 0.2, 0.5], [[1, 0], [0, 1], [1, 1]])
    path = integrate_control(heis, u, np.zeros(3), 0.01)
    assert np.all(np.diff(path.times) >= 0)
    assert np.array_equal(path.points[0], np.zeros(3))
    np.testing.assert_allclose(path.times[path.offsets], u.breakpoints, atol=1e-15)
    assert all((b - a) % 2 == 0 for a, b in zip(path.offsets[:-1], path.offsets[1:]))
    assert path.to_csv().splitlines()[0] == "t,x1,x2,x3"


def test_endpoint_matches_path(heis):
    u = Control([0.5, 0.5], [[0.3, -1.0], [2.0, 0.5]])
    assert np.array_equal(endpoint(heis, u, np.zeros(3)), integrate_control(heis, u, np.zeros(3)).endpoint)


def test_control_channel_mismatch(heis):
    with pytest.raises(InputError):
        endpoint(heis, Control.constant([1, 0, 0]), np.zeros(3))


# -- control algebra


def random_control(rng, m=4, k=2, scale=1.0):
    d = rng.uniform(0.1, 1.0, m)
    d /= d.sum()
    d[-1] = 1.0 - math.fsum(d[:-1])
    return Control(d, rng.uniform(-scale, scale, (m, k)))


@pytest.mark.parametrize("seed", range(5))
def test_concat_norm_additive_dyadic(seed):
    rng = np.random.default_rng(seed)
    u = Control([0.25, 0.75], rng.integers(-8, 8, (2, 2)) / 4)
    v = Control([0.5, 0.5], rng.integers(-8, 8, (2, 2)) / 4)
    assert concat_controls(u, v, 0.5).l1_norm() == u.l1_norm() + v.l1_norm()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_concat_norm_additive(seed, s):
    rng = np.random.default_rng(seed)
    u, v = random_control(rng), random_control(rng, m=3)
    w = concat_controls(u, v, s)
    assert w.l1_norm() == pytest.approx(u.l1_norm() + v.l1_norm(), rel=4e-16 * 8)
    assert w.breakpoints[u.m] == pytest.approx(s, abs=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_concat_is_composition(heis, seed):
    rng = np.random.default_rng(seed)
    u, v = random_control(rng), random_control(rng)
    x0 = np.zeros(3)
    lhs = endpoint(heis, concat_controls(u, v, 0.5), x0)
    rhs = endpoint(heis, v, endpoint(heis, u, x0))
    assert np.linalg.norm(lhs - rhs) < 1e-6


@pytest.mark.parametrize("s", [0.9, 0.99, 0.999])
def test_concat_with_zero_tends_to_u(s):
    # for constant u the distance is exactly 2 (1 - s) ||u||
    u = Control.constant([0.6, -0.8])
    w = concat_controls(u, Control.zero(2), s)
    assert l1_distance(w, u) == pytest.approx(2 * (1 - s) * u.l1_norm(), rel=1e-12)


@pytest.mark.xfail(strict=True, reason="the distance is 2(1-s)||u|| = 0.02||u|| at s = 0.99")
def test_concat_with_zero_within_one_percent_at_099():
    u = Control.constant([0.6, -0.8])
    w = concat_controls(u, Control.zero(2), 0.99)
    assert l1_distance(w, u) < 0.01 * u.l1_norm()


def test_concat_rejects_bad_s():
    u = Control.zero(2)
    for s in (0.0, 1.0, -0.5):
        with pytest.raises(InputError):
            concat_controls(u, u, s)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_reverse_is_involution(seed):
    u = random_control(np.random.default_rng(seed))
    r = reverse_control(u)
    assert reverse_control(r) == u
    assert r.l1_norm() == pytest.approx(u.l1_norm(), rel=1e-15)


@pytest.mark.parametrize("seed", range(4))
def test_reverse_returns_to_start(heis, seed):
    u = random_control(np.random.default_rng(seed))
    x0 = np.array([0.1, -0.2, 0.3])
    back = endpoint(heis, reverse_control(u), endpoint(heis, u, x0))
    assert np.linalg.norm(back - x0) < 1e-6
    both = endpoint(heis, concat_controls(u, reverse_control(u)), x0)
    assert np.linalg.norm(both - x0) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_endpoint_invariant_under_refinement(seed, parts):
    g = heisenberg()
    u = random_control(np.random.default_rng(seed))
    assert l1_distance(u, u.refined(parts)) < 1e-15
    a = endpoint(g, u, np.zeros(3))
    b = endpoint(g, u.refined(parts), np.zeros(3))
    assert np.linalg.norm(a - b) < 1e-12


# -- control files and validation


def test_control_json_round_trip(tmp_path):
    u = Control([0.25, 0.5, 0.25], [[1, 0], [0, -2], [0.5, 0.5]])
    path = tmp_path / "u.json"
    path.write_text(json.dumps(u.to_json()))
    assert load_control(path) == u


@pytest.mark.parametrize(
    "bp, values",
    [([0, 0.5, 0.5, 1], [[1], [1], [1]]), ([0, 1], [[1], [2]]), ([0.1, 1], [[1]]), ([0, 0.9], [[1]]), ([0, 1], [[float("nan")]]), ([0], [])],
)
def test_control_validation(bp, values):
    with pytest.raises(InputError):
        Control.from_breakpoints(bp, values)


def test_control_is_immutable():
    u = Control.zero(2)
    with pytest.raises(AttributeError):
        u.values = None
    with pytest.raises(ValueError):
        u.values[0, 0] = 1.0


def test_from_segments_length():
    u = Control.from_segments([(1, 0.1), (2, -0.3), (1, 0.0)], 2)
    assert u.m == 2
    assert math.fsum(np.abs(u.values).max(axis=1) * u.durations) == pytest.approx(0.4, rel=1e-15)


# -- Picard oracle


def test_lipschitz_bound_heisenberg(heis):
    assert lipschitz_bound(heis) == pytest.approx(0.75)


def test_picard_zero_control(heis):
    x0 = np.array([0.2, 0.1, 0.0])
    path = picard_solve(heis, Control.zero(2), x0)
    assert np.all(path.points == x0)


def test_picard_constant_control(heis):
    path = picard_solve(heis, Control.constant([1, 0]), np.zeros(3))
    exact = np.stack([path.times, 0 * path.times, 0 * path.times], axis=1)
    assert np.max(np.abs(path.points - exact)) < 1e-5


def test_picard_square(heis):
    path = picard_solve(heis, square_control(0.2), np.zeros(3))
    np.testing.assert_allclose(path.endpoint, (0, 0, 0.04), atol=1e-4)


@pytest.mark.parametrize("seed", range(3))
def test_picard_agrees_with_rk4(heis, seed):
    u = random_control(np.random.default_rng(seed), m=3, scale=0.5)
    x0 = np.array([0.5, -0.5, 0.2])
    pic = picard_solve(heis, u, x0)
    ref = integrate_control(heis, u, x0)
    # compare on the RK4 samples by interpolating the Picard grid
    assert np.max(np.abs(pic.at(ref.times) - ref.points)) < 1e-4


def test_picard_divergence_names_piece():
    c = ["x"]
    g = Geometry(c, [VectorField([ex.parse_expr("x^2", c)])], domain=[(-1e6, 1e6)])
    with pytest.raises(ConvergenceError, match="piece 0"):
        picard_solve(g, Control.constant([5.0]), (1.0,), L=1e-3)
