"""Scalar reverse-mode automatic differentiation.

Values are plain Python floats or `Node` objects.  Arithmetic involving at
least one node records the local derivatives eagerly, so the backward pass
is a single accumulation sweep in reverse topological order.  An operation
whose result cannot depend on any node returns a bare float, which keeps
dead branches (the losing side of a max, a satisfied sub-constraint) off
the tape entirely.

Kink conventions, applied consistently here and in the analytic backprop
elsewhere:
  - max(a, b) routes the gradient to `a` on ties; min(a, b) likewise
  - d|x|/dx at 0 is 0
  - 0 ** 0 == 1, with zero partials at that corner
  - d sqrt(x)/dx at 0 is 0
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence


class DomainError(ArithmeticError):
    """An operation left its numeric domain (ln(x<=0), x/0, 0**negative, sqrt(x<0))."""


# Optional branch-distance recording.  When a list is installed via
# track_branch_margins(), every value-level branch decision (max/min/abs,
# piecewise ops in the logic layer) appends its distance to the branch
# boundary.  Gradient-check tests use this to reject sample points that sit
# too close to a kink for finite differences to be trustworthy.
_margins: list[float] | None = None


@contextmanager
def track_branch_margins():
    global _margins
    saved = _margins
    _margins = []
    try:
        yield _margins
    finally:
        _margins = saved


def report_margin(d: float) -> None:
    if _margins is not None:
        _margins.append(d)


class Node:
    """One tape entry: a value plus references to the nodes it came from.

    `partials` holds the local derivative with respect to each parent,
    evaluated at record time; `adjoint` is scratch space for grad().
    """

    __slots__ = ("value", "parents", "partials", "name", "adjoint")

    def __init__(self, value, parents=(), partials=(), name=None):
        self.value = value
        self.parents = parents
        self.partials = partials
        self.name = name
        self.adjoint = 0.0

    def __repr__(self):
        if self.name is not None:
            return f"Node({self.value!r}, name={self.name!r})"
        return f"Node({self.value!r})"

    # -- arithmetic ---------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Node):
            return Node(self.value + other.value, (self, other), (1.0, 1.0))
        return Node(self.value + other, (self,), (1.0,))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return Node(self.value - other.value, (self, other), (1.0, -1.0))
        return Node(self.value - other, (self,), (1.0,))

    def __rsub__(self, other):
        return Node(other - self.value, (self,), (-1.0,))

    def __mul__(self, other):
        if isinstance(other, Node):
            return Node(self.value * other.value, (self, other), (other.value, self.value))
        return Node(self.value * other, (self,), (other,))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            ov = other.value
            if ov == 0.0:
                raise DomainError("division by zero")
            return Node(self.value / ov, (self, other), (1.0 / ov, -self.value / (ov * ov)))
        if other == 0.0:
            raise DomainError("division by zero")
        return Node(self.value / other, (self,), (1.0 / other,))

    def __rtruediv__(self, other):
        v = self.value
        if v == 0.0:
            raise DomainError("division by zero")
        return Node(other / v, (self,), (-other / (v * v),))

    def __neg__(self):
        return Node(-self.value, (self,), (-1.0,))

    def __pow__(self, other):
        return vpow(self, other)

    def __rpow__(self, other):
        return vpow(other, self)


def var(value: float, name: str | None = None) -> Node:
    """A leaf node to differentiate with respect to."""
    return Node(float(value), name=name)


def val(x) -> float:
    """The float value of a node, or the float itself."""
    return x.value if isinstance(x, Node) else x


# -- piecewise and transcendental operations --------------------------
# Each accepts floats or nodes and returns a float when no node is involved
# (or when the winning branch is constant).


def vmax(a, b):
    an = isinstance(a, Node)
    bn = isinstance(b, Node)
    av = a.value if an else a
    bv = b.value if bn else b
    report_margin(abs(av - bv))
    if av >= bv:
        return a
    return b


def vmin(a, b):
    an = isinstance(a, Node)
    bn = isinstance(b, Node)
    av = a.value if an else a
    bv = b.value if bn else b
    report_margin(abs(av - bv))
    if av <= bv:
        return a
    return b


def vabs(a):
    if isinstance(a, Node):
        v = a.value
        report_margin(abs(v))
        if v > 0.0:
            return a
        if v < 0.0:
            return Node(-v, (a,), (-1.0,))
        return Node(0.0, (a,), (0.0,))
    report_margin(abs(a))
    return abs(a)


def vexp(a):
    if isinstance(a, Node):
        v = math.exp(a.value)
        return Node(v, (a,), (v,))
    return math.exp(a)


def vln(a):
    v = a.value if isinstance(a, Node) else a
    if v <= 0.0:
        raise DomainError(f"ln of non-positive value {v!r}")
    if isinstance(a, Node):
        return Node(math.log(v), (a,), (1.0 / v,))
    return math.log(v)


def vsqrt(a):
    v = a.value if isinstance(a, Node) else a
    if v < 0.0:
        raise DomainError(f"sqrt of negative value {v!r}")
    # unbounded derivative as v -> 0; record the distance like vpow does
    report_margin(v)
    s = math.sqrt(v)
    if isinstance(a, Node):
        d = 0.0 if v == 0.0 else 0.5 / s
        return Node(s, (a,), (d,))
    return s


def _sigmoid(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def vsigmoid(a):
    if isinstance(a, Node):
        v = _sigmoid(a.value)
        return Node(v, (a,), (v * (1.0 - v),))
    return _sigmoid(a)


def vpow(a, b):
    """a ** b for a >= 0, with 0 ** 0 == 1 and zero partials on the base-0 set."""
    an = isinstance(a, Node)
    bn = isinstance(b, Node)
    av = a.value if an else a
    bv = b.value if bn else b
    if av < 0.0:
        raise DomainError(f"pow with negative base {av!r}")
    if av == 0.0 and bv < 0.0:
        raise DomainError("pow of zero base with negative exponent")
    # The derivative in the base blows up as base -> 0 whenever exp < 1;
    # record the distance so gradient checks can steer clear.
    if bv < 1.0:
        report_margin(av)
    if av == 0.0:
        v = 1.0 if bv == 0.0 else 0.0
        da = 1.0 if bv == 1.0 else 0.0
        db = 0.0
    else:
        v = av ** bv
        da = bv * av ** (bv - 1.0)
        db = v * math.log(av)
    if an and bn:
        return Node(v, (a, b), (da, db))
    if an:
        return Node(v, (a,), (da,))
    if bn:
        return Node(v, (b,), (db,))
    return v


# -- gradients ---------------------------------------------------------


def grad(root, wrt: Sequence[Node]) -> dict[Node, float]:
    """Partials of `root` with respect to each node in `wrt`.

    One reverse sweep over the subgraph reachable from the root.  Nodes in
    `wrt` that the root does not depend on get partial 0.
    """
    wanted = list(wrt)
    if not isinstance(root, Node):
        return {n: 0.0 for n in wanted}

    # Iterative topological order; also resets adjoints from earlier sweeps.
    topo: list[Node] = []
    visited: set[Node] = set()
    stack: list[tuple[Node, int]] = [(root, 0)]
    visited.add(root)
    root.adjoint = 0.0
    while stack:
        node, i = stack[-1]
        parents = node.parents
        if i < len(parents):
            stack[-1] = (node, i + 1)
            p = parents[i]
            if p not in visited:
                visited.add(p)
                p.adjoint = 0.0
                stack.append((p, 0))
        else:
            stack.pop()
            topo.append(node)

    root.adjoint = 1.0
    for node in reversed(topo):
        a = node.adjoint
        if a != 0.0:
            for p, d in zip(node.parents, node.partials):
                p.adjoint += a * d

    return {n: (n.adjoint if n in visited else 0.0) for n in wanted}


def grad_by_name(root, wrt: Sequence[Node]) -> dict[str, float]:
    """Like grad(), but keyed by the variables' names."""
    g = grad(root, wrt)
    return {n.name: p for n, p in g.items() if n.name is not None}


def finite_diff(f: Callable[[Sequence[float]], float], point: Sequence[float], h: float = 1e-5) -> list[float]:
    """Central-difference gradient of f at `point`, index-aligned with it."""
    point = [float(x) for x in point]
    out = []
    for i in range(len(point)):
        hi = list(point)
        lo = list(point)
        hi[i] += h
        lo[i] -= h
        out.append((f(hi) - f(lo)) / (2.0 * h))
    return out
