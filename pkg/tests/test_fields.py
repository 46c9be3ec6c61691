import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_geometry
from subriemann import expr as ex
from subriemann.errors import InputError, ParseError
from subriemann.fields import (
    Geometry,
    Leaf,
    Node,
    VectorField,
    eval_bracket,
    growth_vector,
    lie_bracket,
    load_geometry,
    parse_bracket,
)


def test_heisenberg_bracket_is_dz(heis):
    X1, X2 = heis.generators
    B = lie_bracket(X1, X2)
    assert all(c.kind == "const" for c in B.components)
    assert [c.value for c in B.components] == [0.0, 0.0, 1.0]


def test_bracket_with_itself_vanishes(heis):
    rng = np.random.default_rng(1)
    for X in heis.generators:
        XX = lie_bracket(X, X)
        for p in rng.uniform(-2, 2, (10, 3)):
            assert np.all(XX(p) == 0)


def test_grushin_bracket_is_phi_prime(grus):
    B = lie_bracket(*grus.generators)
    for xv in (-1.0, -0.1, 0.0, 0.5, 1.3):
        phi_prime = 3 * max(xv, 0.0) ** 2
        np.testing.assert_allclose(B((xv, 0.7)), [0.0, phi_prime], atol=1e-15)


@pytest.mark.parametrize(
    "text, point, expected",
    [
        ("[1,[1,2]]", (0.3, -1.0, 2.0), (0, 0, 0)),
        ("[2,[1,2]]", (1.0, 1.0, 1.0), (0, 0, 0)),
        ("2", (1, 0, 0), (0, 1, 0.5)),
        ("[2,1]", (0.1, 0.2, 0.3), (0, 0, -1)),
    ],
)
def test_eval_bracket_heisenberg(heis, text, point, expected):
    np.testing.assert_array_equal(eval_bracket(heis, parse_bracket(text), point), expected)


def test_eval_bracket_grushin_left_half_plane(grus):
    np.testing.assert_array_equal(eval_bracket(grus, parse_bracket("[1,2]"), (-1, 0)), (0, 0))


def test_bracket_memoised(heis):
    B = parse_bracket("[1,[1,2]]")
    assert heis.bracket_field(B) is heis.bracket_field(parse_bracket("[1,[1,2]]"))


@pytest.mark.parametrize(
    "text, weight, segments, string",
    [("1", 1, 1, "1"), ("[1,2]", 2, 4, "[1,2]"), ("[1,[1,2]]", 3, 10, "[1,[1,2]]"), (" [ [1,2] , [2,1] ] ", 4, 16, "[[1,2],[2,1]]")],
)
def test_formal_bracket_counts(text, weight, segments, string):
    B = parse_bracket(text)
    assert B.weight == weight
    assert B.segments == segments
    assert str(B) == string
    internal = str(B).count("[")
    assert B.weight == internal + 1


def test_swapped_exchanges_outer_arguments():
    assert parse_bracket("[1,[1,2]]").swapped() == parse_bracket("[[1,2],1]")
    assert parse_bracket("2").swapped() == Leaf(2)


@pytest.mark.parametrize("text", ["", "[1,2", "[1 2]", "[0,1]", "[a,1]", "1]", "[1,2]x"])
def test_parse_bracket_errors(text):
    with pytest.raises(ParseError):
        parse_bracket(text)


def test_bracket_leaf_out_of_range(heis):
    with pytest.raises(InputError):
        eval_bracket(heis, parse_bracket("[1,3]"), (0, 0, 0))


# -- growth vector


def test_growth_heisenberg(heis):
    gv = growth_vector(heis, np.zeros(3), max_depth=2)
    assert gv.ranks == (2, 3)
    assert gv.bracket_generating
    assert [str(B) for B in gv.brackets] == ["1", "2", "[1,2]"]
    assert gv.weights == (1, 1, 2)


def test_growth_grushin_left(grus):
    gv = growth_vector(grus, np.array([-1.0, 0.0]), max_depth=4)
    assert gv.ranks == (1, 1, 1, 1)
    assert not gv.bracket_generating
    assert len(gv.basis) == 1


def test_growth_grushin_right(grus):
    gv = growth_vector(grus, np.array([0.5, 0.0]), max_depth=4)
    assert gv.ranks == (2,)


def test_growth_grushin_origin_uses_sgn_convention(grus):
    # phi''' jumps from 0 to 6 at x = 0; with sgn(0) = 0 the symbolic value there is 3/4
    gv = growth_vector(grus, np.array([0.0, 0.0]), max_depth=4)
    assert gv.ranks == (1, 1, 1, 2)
    np.testing.assert_allclose(eval_bracket(grus, parse_bracket("[1,[1,[1,2]]]"), (0, 0)), (0, 0.75))


def test_growth_plane(plane):
    gv = growth_vector(plane, np.zeros(2), max_depth=1)
    assert gv.ranks == (2,)
    assert gv.bracket_generating


@pytest.mark.parametrize("seed", range(5))
def test_growth_vector_invariants(seed):
    g = random_geometry(seed)
    p = np.random.default_rng(seed).uniform(-1, 1, 3)
    gv = growth_vector(g, p, max_depth=3)
    assert list(gv.ranks) == sorted(gv.ranks)
    assert len(gv.basis) == gv.ranks[-1]
    assert list(gv.weights) == sorted(gv.weights)
    assert gv.bracket_generating == (gv.ranks[-1] == 3)


@pytest.mark.parametrize("seed", range(5))
def test_growth_ranks_invariant_under_generator_permutation(seed):
    g = random_geometry(seed)
    h = Geometry(g.coords, list(reversed(g.generators)), g.domain)
    p = np.random.default_rng(seed + 100).uniform(-1, 1, 3)
    assert growth_vector(g, p, 3).ranks == growth_vector(h, p, 3).ranks


# -- algebraic identities on random polynomial fields


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_antisymmetry(seed):
    g = random_geometry(seed)
    X, Y = g.generators
    p = np.random.default_rng(seed).uniform(-1, 1, 3)
    a = lie_bracket(X, Y)(p)
    b = lie_bracket(Y, X)(p)
    np.testing.assert_allclose(a + b, 0, atol=1e-12 * (1 + np.abs(a).max()))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_jacobi(seed):
    g = random_geometry(seed, k=3)
    X, Y, Z = g.generators
    p = np.random.default_rng(seed).uniform(-1, 1, 3)
    terms = [lie_bracket(X, lie_bracket(Y, Z)), lie_bracket(Y, lie_bracket(Z, X)), lie_bracket(Z, lie_bracket(X, Y))]
    vals = [T(p) for T in terms]
    scale = 1 + max(np.abs(v).max() for v in vals)
    assert np.linalg.norm(sum(vals)) < 1e-9 * scale


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_leibniz(seed):
    g = random_geometry(seed)
    X, Y = g.generators
    rng = np.random.default_rng(seed)
    f = ex.parse_expr("x*y - z^2 + 0.5*sin(x)", g.coords)
    p = rng.uniform(-1, 1, 3)
    lhs = lie_bracket(X, Y.scale(f))(p)
    Xf = ex.eval_expr(X.apply(f), p)
    rhs = Xf * Y(p) + ex.eval_expr(f, p) * lie_bracket(X, Y)(p)
    scale = 1 + np.abs(rhs).max()
    np.testing.assert_allclose(lhs, rhs, atol=1e-9 * scale)


# -- files


def test_geometry_json_round_trip(tmp_path, heis):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(heis.to_json()))
    g = load_geometry(path)
    assert g.coords == heis.coords
    for a, b in zip(g.generators, heis.generators):
        assert a == b
    np.testing.assert_array_equal(g.domain, heis.domain)


@pytest.mark.parametrize(
    "doc, message",
    [
        ({"dim": 2, "coords": ["x", "y", "z"], "fields": []}, "coordinate names"),
        ({"dim": 2, "coords": ["x", "y"], "fields": [["1"]]}, "components"),
        ({"dim": 2, "coords": ["x", "y"], "fields": [["1", "q"]]}, "unknown identifier"),
        ({"coords": ["x"], "fields": [["1"]]}, "dim"),
        ({"dim": 1, "coords": ["x"], "fields": [["1"]], "domain": [[1, 0]]}, "domain"),
    ],
)
def test_geometry_json_errors(tmp_path, doc, message):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(InputError, match=message):
        load_geometry(path)


def test_vector_field_dimension_mismatch():
    with pytest.raises(InputError):
        lie_bracket(VectorField([ex.ONE]), VectorField([ex.ONE, ex.ZERO]))


def test_formal_bracket_nodes_are_values():
    assert Node(Leaf(1), Leaf(2)) == parse_bracket("[1,2]")
    assert hash(Node(Leaf(1), Leaf(2))) == hash(parse_bracket("[1,2]"))
