import numpy as np
import pytest

from subriemann import expr as ex
from subriemann.fields import Geometry, euclidean, grushin, heisenberg

COORDS = ["x", "y", "z"]


@pytest.fixture
def heis():
    return heisenberg()


@pytest.fixture
def grus():
    return grushin()


@pytest.fixture
def plane():
    return euclidean(2)


def random_poly(rng, coords=COORDS, terms=3, degree=2):
    """Sparse polynomial with dyadic coefficients, as expression text."""
    parts = []
    for _ in range(terms):
        c = rng.integers(-4, 5) / 4
        mono = [str(c)]
        for _ in range(rng.integers(0, degree + 1)):
            mono.append(coords[rng.integers(len(coords))])
        parts.append("*".join(mono))
    return " + ".join(parts)


def random_geometry(seed, k=2, n=3, box=2.0):
    """Polynomial generators on [-box, box]^n; the first k coordinates get a unit part."""
    rng = np.random.default_rng(seed)
    coords = COORDS[:n]
    gens = []
    for j in range(k):
        comps = []
        for i in range(n):
            text = random_poly(rng, coords)
            if i == j:
                text = "1 + " + text
            comps.append(ex.parse_expr(text, coords))
        gens.append(comps)
    return Geometry(coords, gens, domain=[(-box, box)] * n, name=f"poly{seed}")


def square_control(t):
    """Heisenberg commutator square of side t: endpoint (0, 0, t^2) from 0."""
    from subriemann.integrate import Control

    return Control([0.25] * 4, [[4 * t, 0], [0, 4 * t], [-4 * t, 0], [0, -4 * t]])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
