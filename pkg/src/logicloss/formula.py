"""Constraint formulas: AST, a small text DSL, crisp evaluation, negation pushing.

Grammar (keywords lowercase, indexing zero-based):

    formula := "forall" IDENT "in" IDENT ":" formula
             | orz ("->" orz)?
    orz     := andz ("or" andz)*
    andz    := notz ("and" notz)*
    notz    := "not" notz | "(" formula ")" | cmp
    cmp     := expr ("<=" | "<" | ">=" | ">" | "==" | "!=") expr
    expr    := term (("+" | "-") term)*
    term    := factor ("*" factor)*
    factor  := NUMBER | "-" NUMBER | "out" "[" idx "]" | "in" "[" idx "]"
             | "sum" "(" sumbody ")" | "norm2" "(" vecref "-" vecref ")"
             | IDENT | "(" expr ")"
    sumbody := "out" "[" IDENT "]" | expr ("," expr)*
    vecref  := "out" | "out'" | "in" | "in'"
    idx     := INT | IDENT

A bare IDENT factor must name a constant from the parse context; an IDENT
index must be bound by an enclosing forall.  "forall v in S" draws its
bindings from the context's binding sets and stores them on the node, so a
parsed formula is self-contained afterwards.
"""

from __future__ import annotations

import math
import operator
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence, Union

CMP_OPS = ("<=", "<", ">=", ">", "==", "!=")
VECTOR_REFS = ("out", "out'", "in", "in'")

Binding = Union[int, tuple]


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True, slots=True)
class Const:
    value: float


@dataclass(frozen=True, slots=True)
class Input:
    index: int | str  # str: variable bound by an enclosing forall

    def __post_init__(self):
        if isinstance(self.index, int) and self.index < 0:
            raise ValueError("input index must be non-negative")


@dataclass(frozen=True, slots=True)
class Output:
    index: int | str

    def __post_init__(self):
        if isinstance(self.index, int) and self.index < 0:
            raise ValueError("output index must be non-negative")


@dataclass(frozen=True, slots=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Sub:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Mul:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Sum:
    items: tuple

    def __post_init__(self):
        if not self.items:
            raise ValueError("empty sum")


@dataclass(frozen=True, slots=True)
class GroupSum:
    """Sum of outputs over an index set bound by an enclosing forall."""

    var: str


@dataclass(frozen=True, slots=True)
class Norm2Diff:
    """Euclidean norm of the elementwise difference of two bound vectors."""

    left: str
    right: str

    def __post_init__(self):
        for ref in (self.left, self.right):
            if ref not in VECTOR_REFS:
                raise ValueError(f"unknown vector reference {ref!r}")


Expr = Union[Const, Input, Output, Add, Sub, Mul, Sum, GroupSum, Norm2Diff]


@dataclass(frozen=True, slots=True)
class Cmp:
    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op not in CMP_OPS:
            raise ValueError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True, slots=True)
class And:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True, slots=True)
class Or:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True, slots=True)
class Not:
    body: "Formula"


@dataclass(frozen=True, slots=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True, slots=True)
class BigAnd:
    """Finite conjunction over a named binding set, resolved at parse time."""

    var: str
    set_name: str
    bindings: tuple
    body: "Formula"

    def __post_init__(self):
        if not self.bindings:
            raise ValueError("empty binding set")


Formula = Union[Cmp, And, Or, Not, Implies, BigAnd]


# ---------------------------------------------------------------------------
# Environments and errors


class UnboundReference(LookupError):
    """A formula referenced a value the environment does not provide."""


@dataclass
class Env:
    """Value bindings for one sample (or one sample pair)."""

    outputs: Sequence = ()
    inputs: Sequence = ()
    outputs2: Sequence = ()
    inputs2: Sequence = ()

    def vector(self, ref: str) -> Sequence:
        if ref == "out":
            return self.outputs
        if ref == "out'":
            return self.outputs2
        if ref == "in":
            return self.inputs
        return self.inputs2


class ParseError(ValueError):
    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.message = message
        self.pos = pos


class UnknownIdentifier(ParseError):
    pass


class IndexOutOfRange(ParseError):
    pass


@dataclass
class ParseContext:
    """Names a formula text may refer to.

    binding_sets feed "forall v in NAME"; index_groups let "sum(out[NAME])"
    expand to a concrete sum; consts resolve bare identifiers to numbers.
    """

    n_classes: int
    binding_sets: Mapping[str, Sequence[Binding]] = field(default_factory=dict)
    index_groups: Mapping[str, Sequence[int]] = field(default_factory=dict)
    consts: Mapping[str, float] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""(?P<ws>\s+)
      | (?P<num>\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
      | (?P<ident>[A-Za-z_][A-Za-z_0-9]*'?)
      | (?P<op><=|>=|==|!=|->|[<>+\-*()\[\],:])
    """,
    re.X,
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "ws":
            toks.append((m.lastgroup, m.group(), pos))
        pos = m.end()
    toks.append(("end", "", len(text)))
    return toks


# ---------------------------------------------------------------------------
# Parser


class _Fail(Exception):
    pass


class _Parser:
    def __init__(self, toks, ctx: ParseContext):
        self.toks = toks
        self.ctx = ctx
        self.i = 0
        self.scope: dict[str, str] = {}  # bound var -> 'scalar' | 'group'
        self.best: tuple = (-1, "syntax error", ParseError)

    # -- machinery

    def peek(self):
        return self.toks[self.i]

    def next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, message: str, pos: int | None = None, cls=None) -> None:
        if pos is None:
            pos = self.toks[self.i][2]
        if pos > self.best[0]:
            self.best = (pos, message, cls or ParseError)
        raise _Fail()

    def accept(self, kind: str, text: str | None = None):
        k, t, _ = self.toks[self.i]
        if k == kind and (text is None or t == text):
            self.i += 1
            return t
        return None

    def expect(self, kind: str, text: str | None = None, what: str | None = None):
        got = self.accept(kind, text)
        if got is None:
            self.fail(f"expected {what or text or kind}")
        return got

    # -- grammar

    def formula(self):
        if self.peek()[:2] == ("ident", "forall"):
            return self.quant()
        return self.implz()

    def quant(self):
        self.expect("ident", "forall")
        var = self.expect("ident", what="binder variable")
        if var in ("forall", "in", "out", "sum", "not", "and", "or", "norm2"):
            self.fail(f"{var!r} cannot be used as a binder variable", self.toks[self.i - 1][2])
        self.expect("ident", "in")
        set_pos = self.peek()[2]
        set_name = self.expect("ident", what="binding-set name")
        bindings = self.ctx.binding_sets.get(set_name)
        if bindings is None:
            self.fail(f"unknown binding set {set_name!r}", set_pos, UnknownIdentifier)
        norm = self._normalize_bindings(bindings, set_pos)
        self.expect("op", ":")
        kind = "group" if isinstance(norm[0], tuple) else "scalar"
        saved = self.scope.get(var)
        self.scope[var] = kind
        try:
            body = self.formula()
        finally:
            if saved is None:
                del self.scope[var]
            else:
                self.scope[var] = saved
        return BigAnd(var, set_name, norm, body)

    def _normalize_bindings(self, bindings, pos):
        if not bindings:
            self.fail("binding set is empty", pos)
        out = []
        for b in bindings:
            if isinstance(b, int):
                self._check_class_index(b, pos)
                out.append(b)
            else:
                members = tuple(int(i) for i in b)
                for i in members:
                    self._check_class_index(i, pos)
                out.append(members)
        kinds = {isinstance(b, tuple) for b in out}
        if len(kinds) != 1:
            self.fail("binding set mixes single indices and index groups", pos)
        return tuple(out)

    def _check_class_index(self, i, pos):
        if not 0 <= i < self.ctx.n_classes:
            self.fail(
                f"class index {i} out of range for {self.ctx.n_classes} classes",
                pos,
                IndexOutOfRange,
            )

    def implz(self):
        a = self.orz()
        if self.accept("op", "->"):
            return Implies(a, self.orz())
        return a

    def orz(self):
        f = self.andz()
        while self.accept("ident", "or"):
            f = Or(f, self.andz())
        return f

    def andz(self):
        f = self.notz()
        while self.accept("ident", "and"):
            f = And(f, self.notz())
        return f

    def notz(self):
        if self.accept("ident", "not"):
            return Not(self.notz())
        if self.peek()[:2] == ("op", "("):
            mark = self.i
            try:
                self.next()
                f = self.formula()
                self.expect("op", ")")
                return f
            except _Fail:
                self.i = mark
        return self.cmp()

    def cmp(self):
        left = self.expr()
        k, t, _ = self.peek()
        if k == "op" and t in CMP_OPS:
            self.next()
            return Cmp(t, left, self.expr())
        self.fail("expected a comparison operator")

    def expr(self):
        e = self.term()
        while True:
            if self.accept("op", "+"):
                e = Add(e, self.term())
            elif self.accept("op", "-"):
                e = Sub(e, self.term())
            else:
                return e

    def term(self):
        e = self.factor()
        while self.accept("op", "*"):
            e = Mul(e, self.factor())
        return e

    def factor(self):
        k, t, pos = self.peek()
        if k == "num":
            self.next()
            return Const(float(t))
        if k == "op" and t == "-":
            self.next()
            n = self.expect("num", what="a number after unary '-'")
            return Const(-float(n))
        if k == "op" and t == "(":
            self.next()
            e = self.expr()
            self.expect("op", ")")
            return e
        if k == "ident":
            if t == "out":
                self.next()
                return Output(self._index(for_output=True))
            if t == "in":
                self.next()
                return Input(self._index(for_output=False))
            if t == "sum":
                self.next()
                self.expect("op", "(")
                e = self._sumbody()
                self.expect("op", ")")
                return e
            if t == "norm2":
                self.next()
                self.expect("op", "(")
                left = self._vecref()
                self.expect("op", "-")
                right = self._vecref()
                self.expect("op", ")")
                return Norm2Diff(left, right)
            if t in self.ctx.consts:
                self.next()
                return Const(float(self.ctx.consts[t]))
            self.fail(f"unknown identifier {t!r}", pos, UnknownIdentifier)
        self.fail("expected a number, out[...], in[...], sum(...), or '('")

    def _index(self, for_output: bool):
        self.expect("op", "[")
        k, t, pos = self.peek()
        if k == "num":
            self.next()
            if "." in t or "e" in t or "E" in t:
                self.fail("index must be an integer", pos)
            idx = int(t)
            if for_output:
                self._check_class_index(idx, pos)
        elif k == "ident":
            self.next()
            kind = self.scope.get(t)
            if kind is None:
                self.fail(f"unknown identifier {t!r}", pos, UnknownIdentifier)
            if kind != "scalar":
                self.fail(f"{t!r} is bound to an index group, not a single index", pos)
            idx = t
        else:
            self.fail("expected an index")
        self.expect("op", "]")
        return idx

    def _sumbody(self):
        # "out [ IDENT ]" where IDENT names a group: special-cased before
        # falling back to a plain expression list.
        if self.peek()[:2] == ("ident", "out"):
            mark = self.i
            self.next()
            if self.accept("op", "["):
                k, t, pos = self.peek()
                if k == "ident":
                    kind = self.scope.get(t)
                    if kind == "group":
                        self.next()
                        self.expect("op", "]")
                        return GroupSum(t)
                    if kind is None and t in self.ctx.index_groups:
                        self.next()
                        self.expect("op", "]")
                        members = self.ctx.index_groups[t]
                        for i in members:
                            self._check_class_index(int(i), pos)
                        return Sum(tuple(Output(int(i)) for i in members))
            self.i = mark
        items = [self.expr()]
        while self.accept("op", ","):
            items.append(self.expr())
        return Sum(tuple(items))

    def _vecref(self):
        k, t, pos = self.peek()
        if k == "ident" and t in VECTOR_REFS:
            self.next()
            return t
        self.fail("expected one of out, out', in, in'")


def parse(text: str, ctx: ParseContext) -> Formula:
    """Parse a formula; raises ParseError with a position on bad input."""
    toks = _tokenize(text)
    p = _Parser(toks, ctx)
    try:
        f = p.formula()
        if p.peek()[0] != "end":
            p.fail("unexpected trailing input")
        return f
    except _Fail:
        pos, message, cls = p.best
        raise cls(message, pos) from None


# ---------------------------------------------------------------------------
# Printer (inverse of parse; every composite is parenthesized)


def expr_text(e: Expr) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Output):
        return f"out[{e.index}]"
    if isinstance(e, Input):
        return f"in[{e.index}]"
    if isinstance(e, Add):
        return f"({expr_text(e.left)} + {expr_text(e.right)})"
    if isinstance(e, Sub):
        return f"({expr_text(e.left)} - {expr_text(e.right)})"
    if isinstance(e, Mul):
        return f"({expr_text(e.left)} * {expr_text(e.right)})"
    if isinstance(e, Sum):
        return f"sum({', '.join(expr_text(x) for x in e.items)})"
    if isinstance(e, GroupSum):
        return f"sum(out[{e.var}])"
    if isinstance(e, Norm2Diff):
        return f"norm2({e.left} - {e.right})"
    raise TypeError(f"not an expression: {e!r}")


def to_text(f: Formula) -> str:
    if isinstance(f, Cmp):
        return f"{expr_text(f.left)} {f.op} {expr_text(f.right)}"
    if isinstance(f, And):
        return f"({to_text(f.left)} and {to_text(f.right)})"
    if isinstance(f, Or):
        return f"({to_text(f.left)} or {to_text(f.right)})"
    if isinstance(f, Implies):
        return f"({to_text(f.left)} -> {to_text(f.right)})"
    if isinstance(f, Not):
        return f"(not {to_text(f.body)})"
    if isinstance(f, BigAnd):
        return f"(forall {f.var} in {f.set_name}: {to_text(f.body)})"
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Substitution and quantifier expansion


def substitute(f: Formula, var: str, binding: Binding) -> Formula:
    """Replace occurrences of a bound variable with a concrete binding."""

    def sub_expr(e):
        if isinstance(e, Output) and e.index == var:
            if isinstance(binding, tuple):
                raise ValueError(f"{var!r} is bound to a group but used as a single index")
            return Output(binding)
        if isinstance(e, Input) and e.index == var:
            if isinstance(binding, tuple):
                raise ValueError(f"{var!r} is bound to a group but used as a single index")
            return Input(binding)
        if isinstance(e, GroupSum) and e.var == var:
            if not isinstance(binding, tuple):
                raise ValueError(f"{var!r} is bound to a single index but used as a group")
            return Sum(tuple(Output(i) for i in binding))
        if isinstance(e, Add):
            return Add(sub_expr(e.left), sub_expr(e.right))
        if isinstance(e, Sub):
            return Sub(sub_expr(e.left), sub_expr(e.right))
        if isinstance(e, Mul):
            return Mul(sub_expr(e.left), sub_expr(e.right))
        if isinstance(e, Sum):
            return Sum(tuple(sub_expr(x) for x in e.items))
        return e

    def sub(g):
        if isinstance(g, Cmp):
            return Cmp(g.op, sub_expr(g.left), sub_expr(g.right))
        if isinstance(g, And):
            return And(sub(g.left), sub(g.right))
        if isinstance(g, Or):
            return Or(sub(g.left), sub(g.right))
        if isinstance(g, Implies):
            return Implies(sub(g.left), sub(g.right))
        if isinstance(g, Not):
            return Not(sub(g.body))
        if isinstance(g, BigAnd):
            if g.var == var:  # inner binder shadows
                return g
            return BigAnd(g.var, g.set_name, g.bindings, sub(g.body))
        raise TypeError(f"not a formula: {g!r}")

    return sub(f)


def bigand_instances(f: BigAnd) -> tuple:
    """The conjuncts a BigAnd expands to, one per binding."""
    return tuple(substitute(f.body, f.var, b) for b in f.bindings)


# ---------------------------------------------------------------------------
# Negation pushing

# A negated comparison is replaced by its complement, written with < / <=
# only:  not (x <= y)  becomes  y < x,  and so on.
_NEG_CMP: dict[str, Callable[[Expr, Expr], Cmp]] = {
    "<=": lambda l, r: Cmp("<", r, l),
    "<": lambda l, r: Cmp("<=", r, l),
    ">=": lambda l, r: Cmp("<", l, r),
    ">": lambda l, r: Cmp("<=", l, r),
    "==": lambda l, r: Cmp("!=", l, r),
    "!=": lambda l, r: Cmp("==", l, r),
}


def push_negations(f: Formula, rewrite_implication: bool = False) -> Formula:
    """Push negations down to comparisons (negation normal form).

    With rewrite_implication=True, "a -> b" additionally becomes
    "(not a) or b", for loss semantics without a native implication.
    """

    def pos(g):
        if isinstance(g, Cmp):
            return g
        if isinstance(g, And):
            return And(pos(g.left), pos(g.right))
        if isinstance(g, Or):
            return Or(pos(g.left), pos(g.right))
        if isinstance(g, Implies):
            if rewrite_implication:
                return Or(neg(g.left), pos(g.right))
            return Implies(pos(g.left), pos(g.right))
        if isinstance(g, Not):
            return neg(g.body)
        if isinstance(g, BigAnd):
            return BigAnd(g.var, g.set_name, g.bindings, pos(g.body))
        raise TypeError(f"not a formula: {g!r}")

    def neg(g):
        if isinstance(g, Cmp):
            return _NEG_CMP[g.op](g.left, g.right)
        if isinstance(g, And):
            return Or(neg(g.left), neg(g.right))
        if isinstance(g, Or):
            return And(neg(g.left), neg(g.right))
        if isinstance(g, Implies):
            return And(pos(g.left), neg(g.right))
        if isinstance(g, Not):
            return pos(g.body)
        if isinstance(g, BigAnd):
            raise ValueError(
                "cannot negate a forall: the negation is an existential, which has no loss form here"
            )
        raise TypeError(f"not a formula: {g!r}")

    return pos(f)


# ---------------------------------------------------------------------------
# Crisp evaluation

_CMP_FN = {
    "<=": operator.le,
    "<": operator.lt,
    ">=": operator.ge,
    ">": operator.gt,
    "==": operator.eq,
    "!=": operator.ne,
}


def _pick(seq: Sequence, i: int, what: str):
    if i < len(seq):
        return seq[i]
    raise UnboundReference(f"{what}[{i}] is not bound by the environment")


def _crisp_expr(e: Expr) -> Callable[[Env], float]:
    if isinstance(e, Const):
        c = e.value
        return lambda env: c
    if isinstance(e, Output):
        i = e.index
        if isinstance(i, str):
            raise UnboundReference(f"out[{i}]: quantifier variable was never bound")
        return lambda env: _pick(env.outputs, i, "out")
    if isinstance(e, Input):
        i = e.index
        if isinstance(i, str):
            raise UnboundReference(f"in[{i}]: quantifier variable was never bound")
        return lambda env: _pick(env.inputs, i, "in")
    if isinstance(e, Add):
        fl, fr = _crisp_expr(e.left), _crisp_expr(e.right)
        return lambda env: fl(env) + fr(env)
    if isinstance(e, Sub):
        fl, fr = _crisp_expr(e.left), _crisp_expr(e.right)
        return lambda env: fl(env) - fr(env)
    if isinstance(e, Mul):
        fl, fr = _crisp_expr(e.left), _crisp_expr(e.right)
        return lambda env: fl(env) * fr(env)
    if isinstance(e, Sum):
        fns = [_crisp_expr(x) for x in e.items]
        def run(env, fns=tuple(fns)):
            total = 0.0
            for fn in fns:
                total += fn(env)
            return total
        return run
    if isinstance(e, GroupSum):
        raise UnboundReference(f"sum(out[{e.var}]): quantifier variable was never bound")
    if isinstance(e, Norm2Diff):
        lref, rref = e.left, e.right
        def run(env):
            a = env.vector(lref)
            b = env.vector(rref)
            if len(a) == 0 or len(b) == 0:
                raise UnboundReference(f"norm2({lref} - {rref}): a vector is not bound")
            if len(a) != len(b):
                raise UnboundReference(f"norm2({lref} - {rref}): vector lengths differ")
            return math.sqrt(sum((float(x) - float(y)) ** 2 for x, y in zip(a, b)))
        return run
    raise TypeError(f"not an expression: {e!r}")


def crisp_fn(f: Formula) -> Callable[[Env], bool]:
    """Compile a formula to a classical (two-valued) evaluator."""
    if isinstance(f, Cmp):
        fl, fr = _crisp_expr(f.left), _crisp_expr(f.right)
        op = _CMP_FN[f.op]
        return lambda env: op(fl(env), fr(env))
    if isinstance(f, And):
        fl, fr = crisp_fn(f.left), crisp_fn(f.right)
        return lambda env: fl(env) and fr(env)
    if isinstance(f, Or):
        fl, fr = crisp_fn(f.left), crisp_fn(f.right)
        return lambda env: fl(env) or fr(env)
    if isinstance(f, Implies):
        fl, fr = crisp_fn(f.left), crisp_fn(f.right)
        return lambda env: (not fl(env)) or fr(env)
    if isinstance(f, Not):
        fb = crisp_fn(f.body)
        return lambda env: not fb(env)
    if isinstance(f, BigAnd):
        fns = tuple(crisp_fn(g) for g in bigand_instances(f))
        def run(env):
            for fn in fns:
                if not fn(env):
                    return False
            return True
        return run
    raise TypeError(f"not a formula: {f!r}")


def eval_crisp(f: Formula, env: Env) -> bool:
    """Classical truth of a formula under the given bindings."""
    return crisp_fn(f)(env)


def uses_paired_samples(f: Formula) -> bool:
    """Whether the formula reads the primed (second-sample) vectors."""

    def in_expr(e) -> bool:
        if isinstance(e, Norm2Diff):
            return e.left in ("out'", "in'") or e.right in ("out'", "in'")
        if isinstance(e, (Add, Sub, Mul)):
            return in_expr(e.left) or in_expr(e.right)
        if isinstance(e, Sum):
            return any(in_expr(x) for x in e.items)
        return False

    if isinstance(f, Cmp):
        return in_expr(f.left) or in_expr(f.right)
    if isinstance(f, (And, Or, Implies)):
        return uses_paired_samples(f.left) or uses_paired_samples(f.right)
    if isinstance(f, Not):
        return uses_paired_samples(f.body)
    if isinstance(f, BigAnd):
        return uses_paired_samples(f.body)
    raise TypeError(f"not a formula: {f!r}")
