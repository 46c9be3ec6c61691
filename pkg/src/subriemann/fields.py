"""Vector fields, Lie brackets, formal bracket expressions and growth vectors."""

from __future__ import annotations

import itertools
import json
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .errors import DomainError, InputError, ParseError

DEFAULT_BOX = 10.0


class VectorField:
    """A vector field on R^n given by n component expressions."""

    __slots__ = ("components",)

    def __init__(self, components):
        object.__setattr__(self, "components", tuple(ex.as_expr(c) for c in components))

    def __setattr__(self, name, value):
        raise AttributeError("VectorField is immutable")

    @property
    def dim(self):
        return len(self.components)

    def __eq__(self, other):
        return isinstance(other, VectorField) and self.components == other.components

    def __hash__(self):
        return hash(self.components)

    def __repr__(self):
        return "VectorField(" + ", ".join(ex.to_text(c) for c in self.components) + ")"

    def text(self, coords=None):
        return [ex.to_text(c, coords) for c in self.components]

    def __call__(self, p):
        return evaluate_components(self.components, p)

    def apply(self, f: ex.Expr) -> ex.Expr:
        """Directional derivative X f = sum_i X^i df/dx_i."""
        out = ex.ZERO
        for i, c in enumerate(self.components):
            out = ex.add(out, ex.mul(c, ex.diff_expr(f, i)))
        return out

    def scale(self, f) -> "VectorField":
        f = ex.as_expr(f)
        return VectorField(ex.mul(f, c) for c in self.components)

    def __add__(self, other):
        _check_dims(self, other)
        return VectorField(ex.add(a, b) for a, b in zip(self.components, other.components))

    def __sub__(self, other):
        _check_dims(self, other)
        return VectorField(ex.sub(a, b) for a, b in zip(self.components, other.components))

    def __neg__(self):
        return VectorField(ex.neg(c) for c in self.components)


def _check_dims(X, Y):
    if X.dim != Y.dim:
        raise InputError(f"dimension mismatch: {X.dim} vs {Y.dim}")


def evaluate_components(components, p) -> np.ndarray:
    pt = [float(v) for v in p]
    fn = ex.compile_exprs(components, len(pt), "scalar")
    try:
        vals = fn(pt)
    except (ValueError, ZeroDivisionError, OverflowError) as exc:
        raise DomainError(f"field undefined at {pt}: {exc}") from None
    out = np.array(vals, dtype=float)
    if not np.all(np.isfinite(out)):
        raise DomainError(f"field not finite at {pt}")
    return out


def lie_bracket(X: VectorField, Y: VectorField) -> VectorField:
    """[X, Y] with components (DY) X - (DX) Y."""
    _check_dims(X, Y)
    return VectorField(ex.sub(X.apply(yj), Y.apply(xj)) for xj, yj in zip(X.components, Y.components))


# ------------------------------------------------------------ formal brackets


class FormalBracket:
    """Bracket expression over generator indices (1-based)."""

    @property
    def weight(self) -> int:
        raise NotImplementedError

    @property
    def segments(self) -> int:
        """Number of elementary flows when the bracket of flows is unrolled."""
        raise NotImplementedError

    def swapped(self) -> "FormalBracket":
        return self


@dataclass(frozen=True)
class Leaf(FormalBracket):
    index: int

    @property
    def weight(self):
        return 1

    @property
    def segments(self):
        return 1

    def leaves(self):
        return (self.index,)

    def __str__(self):
        return str(self.index)


@dataclass(frozen=True)
class Node(FormalBracket):
    left: FormalBracket
    right: FormalBracket

    @property
    def weight(self):
        return self.left.weight + self.right.weight

    @property
    def segments(self):
        return 2 * (self.left.segments + self.right.segments)

    def leaves(self):
        return self.left.leaves() + self.right.leaves()

    def swapped(self):
        return Node(self.right, self.left)

    def __str__(self):
        return f"[{self.left},{self.right}]"


def left_nested(seq: Sequence[int]) -> FormalBracket:
    """[j1,[j2,[...,jd]]] for the leaf sequence (j1, ..., jd)."""
    b: FormalBracket = Leaf(seq[-1])
    for j in reversed(seq[:-1]):
        b = Node(Leaf(j), b)
    return b


def parse_bracket(text: str) -> FormalBracket:
    """Parse "[1,[1,2]]" style text."""
    s = text.replace(" ", "")
    pos = 0

    def node():
        nonlocal pos
        if pos < len(s) and s[pos] == "[":
            pos += 1
            left = node()
            if pos >= len(s) or s[pos] != ",":
                raise ParseError("expected ','", pos, text)
            pos += 1
            right = node()
            if pos >= len(s) or s[pos] != "]":
                raise ParseError("expected ']'", pos, text)
            pos += 1
            return Node(left, right)
        start = pos
        while pos < len(s) and s[pos].isdigit():
            pos += 1
        if start == pos:
            raise ParseError("expected generator index or '['", start, text)
        j = int(s[start:pos])
        if j < 1:
            raise ParseError("generator indices start at 1", start, text)
        return Leaf(j)

    b = node()
    if pos != len(s):
        raise ParseError("trailing characters", pos, text)
    return b


# ------------------------------------------------------------------ geometry


class Geometry:
    """Generators X_1..X_k on a box in R^n, declared orthonormal."""

    def __init__(self, coords, generators, domain=None, name=None):
        self.coords = tuple(coords)
        n = len(self.coords)
        gens = tuple(g if isinstance(g, VectorField) else VectorField(g) for g in generators)
        if not gens:
            raise InputError("a geometry needs at least one generator")
        for j, g in enumerate(gens):
            if g.dim != n:
                raise InputError(f"generator {j + 1} has {g.dim} components, expected {n}")
            for c in g.components:
                if ex.max_coord(c) >= n:
                    raise InputError(f"generator {j + 1} uses an unknown coordinate")
        self.generators = gens
        if domain is None:
            domain = [(-DEFAULT_BOX, DEFAULT_BOX)] * n
        domain = np.array(domain, dtype=float)
        if domain.shape != (n, 2) or np.any(domain[:, 0] >= domain[:, 1]):
            raise InputError(f"domain must be {n} increasing [lo, hi] pairs")
        self.domain = domain
        self.name = name
        self._brackets: dict = {}
        self._lock = threading.Lock()

    @property
    def dim(self):
        return len(self.coords)

    @property
    def k(self):
        return len(self.generators)

    def __repr__(self):
        label = self.name or "Geometry"
        return f"<{label} n={self.dim} k={self.k}>"

    def in_domain(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.domain[:, 0]) and np.all(p <= self.domain[:, 1]))

    def bracket_field(self, B: FormalBracket) -> VectorField:
        """Symbolic vector field B(X_1, ..., X_k), memoised per sub-bracket."""
        hit = self._brackets.get(B)
        if hit is not None:
            return hit
        if isinstance(B, Leaf):
            if not 1 <= B.index <= self.k:
                raise InputError(f"bracket leaf {B.index} out of range 1..{self.k}")
            out = self.generators[B.index - 1]
        else:
            out = lie_bracket(self.bracket_field(B.left), self.bracket_field(B.right))
        with self._lock:
            self._brackets[B] = out
        return out

    def frame(self, p) -> np.ndarray:
        """n x k matrix of generator values at p."""
        comps = [c for g in self.generators for c in g.components]
        vals = evaluate_components(comps, p)
        return vals.reshape(self.k, self.dim).T

    def controlled_exprs(self):
        """Components of sum_i u_i X_i with u_i as extra coordinates n..n+k-1."""
        n = self.dim
        out = []
        for j in range(n):
            acc = ex.ZERO
            for i, g in enumerate(self.generators):
                acc = ex.add(acc, ex.mul(ex.coord(n + i), g.components[j]))
            out.append(acc)
        return tuple(out)

    # -- files
    def to_json(self):
        d = {
            "dim": self.dim,
            "coords": list(self.coords),
            "fields": [g.text(self.coords) for g in self.generators],
            "domain": self.domain.tolist(),
        }
        return d

    @classmethod
    def from_json(cls, data, name=None):
        try:
            dim = int(data["dim"])
            coords = list(data["coords"])
            fields_ = data["fields"]
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"geometry file missing or bad key: {exc}") from None
        if dim != len(coords):
            raise InputError(f"dim={dim} but {len(coords)} coordinate names")
        gens = []
        for j, comps in enumerate(fields_):
            if len(comps) != dim:
                raise InputError(f"field {j + 1} has {len(comps)} components, expected {dim}")
            gens.append(VectorField(ex.parse_expr(str(c), coords) for c in comps))
        return cls(coords, gens, domain=data.get("domain"), name=name)


def load_geometry(path) -> Geometry:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read geometry file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"geometry file is not valid JSON: {exc}") from None
    return Geometry.from_json(data, name=str(path))


def eval_bracket(g: Geometry, B: FormalBracket, p) -> np.ndarray:
    return g.bracket_field(B)(p)


# ------------------------------------------------------------- growth vector


@dataclass
class GrowthVector:
    point: np.ndarray
    ranks: tuple
    basis: list = field(default_factory=list)  # (FormalBracket, weight) pairs
    bracket_generating: bool = False

    @property
    def weights(self):
        return tuple(w for _, w in self.basis)

    @property
    def brackets(self):
        return [b for b, _ in self.basis]


def numerical_rank(vectors, rank_tol=1e-9) -> int:
    if len(vectors) == 0:
        return 0
    s = np.linalg.svd(np.atleast_2d(np.array(vectors, dtype=float)), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rank_tol * s[0]))


def growth_vector(g: Geometry, p, max_depth: int = 4, rank_tol: float = 1e-9) -> GrowthVector:
    """Ranks of H_1 ⊂ H_2 ⊂ ... at p from left-nested brackets.

    Candidates are scanned depth by depth, lexicographically in their leaf
    sequence; a candidate joins the basis when it raises the numerical rank.
    """
    if max_depth < 1:
        raise InputError("max_depth must be >= 1")
    p = np.asarray(p, dtype=float)
    n = g.dim
    basis = []
    vecs = []
    ranks = []
    for depth in range(1, max_depth + 1):
        for seq in itertools.product(range(1, g.k + 1), repeat=depth):
            if len(vecs) == n:
                break
            if depth >= 2 and seq[-1] == seq[-2]:
                continue  # innermost [X_j, X_j] vanishes identically
            B = left_nested(seq)
            v = eval_bracket(g, B, p)
            if numerical_rank(vecs + [v], rank_tol) > len(vecs):
                vecs.append(v)
                basis.append((B, depth))
        ranks.append(len(vecs))
        if len(vecs) == n:
            break
    return GrowthVector(p, tuple(ranks), basis, ranks[-1] == n)


# ------------------------------------------------------------------- presets


def heisenberg(domain=None) -> Geometry:
    coords = ["x", "y", "z"]
    X1 = [ex.parse_expr(s, coords) for s in ("1", "0", "-y/2")]
    X2 = [ex.parse_expr(s, coords) for s in ("0", "1", "x/2")]
    return Geometry(coords, [X1, X2], domain=domain, name="heisenberg")


GRUSHIN_PHI = "((x + abs(x))/2)^3"


def grushin(domain=None) -> Geometry:
    """X1 = d/dx, X2 = phi(x) d/dy with phi = max(x, 0)^3."""
    coords = ["x", "y"]
    X1 = [ex.ONE, ex.ZERO]
    X2 = [ex.ZERO, ex.parse_expr(GRUSHIN_PHI, coords)]
    return Geometry(coords, [X1, X2], domain=domain, name="grushin")


def euclidean(n: int = 2, domain=None) -> Geometry:
    coords = [f"x{i + 1}" for i in range(n)]
    gens = [[ex.ONE if i == j else ex.ZERO for i in range(n)] for j in range(n)]
    return Geometry(coords, gens, domain=domain, name=f"euclidean{n}")


PRESETS = {"heisenberg": heisenberg, "grushin": grushin, "euclidean": euclidean}
