"""Core boolean IR: types, expressions, and the exact enumeration oracle.

The core language is deliberately tiny: booleans, pairs, let, if, and
weighted coin flips whose weight is either a constant in [0, 1] or a named
tunable weight.  Everything richer (ADTs, naturals, frequency choice) is
lowered onto this IR by the surface layer.

Values are plain Python data: ``True``/``False`` for booleans and 2-tuples
for pairs.  Distributions are dicts from value to probability.

``enumerate_semantics`` is the reference interpreter used as the inference
oracle in tests.  It is exponential in the number of flips and guarded by a
flip budget; production inference goes through the BDD compiler instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping, Optional, Union

__all__ = [
    "Bool",
    "Product",
    "CoreType",
    "Const",
    "Sym",
    "NumericTerm",
    "Var",
    "Lit",
    "Pair",
    "Fst",
    "Snd",
    "Let",
    "If",
    "Flip",
    "CoreExpr",
    "CoreTypeError",
    "FlipBudgetError",
    "typecheck",
    "enumerate_semantics",
    "collect_weights",
    "iter_nodes",
    "count_flips",
]

DEFAULT_FLIP_BUDGET = 20


class CoreTypeError(TypeError):
    """Raised when an expression is ill-typed; carries the offending node."""

    def __init__(self, message: str, expr: "CoreExpr") -> None:
        super().__init__(f"{message} (in {type(expr).__name__})")
        self.expr = expr


class FlipBudgetError(RuntimeError):
    """The enumeration oracle refuses programs with too many flips."""


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True, slots=True)
class Bool:
    def __repr__(self) -> str:
        return "Bool"


@dataclass(frozen=True, slots=True)
class Product:
    left: "CoreType"
    right: "CoreType"

    def __repr__(self) -> str:
        return f"({self.left!r} * {self.right!r})"


CoreType = Union[Bool, Product]

BOOL = Bool()


# ---------------------------------------------------------------------------
# Numeric terms (flip weights)


@dataclass(frozen=True, slots=True)
class Const:
    value: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"flip constant {self.value} outside [0, 1]")


@dataclass(frozen=True, slots=True)
class Sym:
    name: str


NumericTerm = Union[Const, Sym]


# ---------------------------------------------------------------------------
# Expressions

CoreValue = Union[bool, tuple]


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Lit:
    value: CoreValue


@dataclass(frozen=True, slots=True)
class Pair:
    left: "CoreExpr"
    right: "CoreExpr"


@dataclass(frozen=True, slots=True)
class Fst:
    inner: "CoreExpr"


@dataclass(frozen=True, slots=True)
class Snd:
    inner: "CoreExpr"


@dataclass(frozen=True, slots=True)
class Let:
    name: str
    bound: "CoreExpr"
    body: "CoreExpr"


@dataclass(frozen=True, slots=True)
class If:
    guard: "CoreExpr"
    then: "CoreExpr"
    orelse: "CoreExpr"


@dataclass(frozen=True, slots=True)
class Flip:
    weight: NumericTerm


CoreExpr = Union[Var, Lit, Pair, Fst, Snd, Let, If, Flip]


def value_type(value: CoreValue) -> CoreType:
    if isinstance(value, bool):
        return BOOL
    if isinstance(value, tuple) and len(value) == 2:
        return Product(value_type(value[0]), value_type(value[1]))
    raise ValueError(f"not a core value: {value!r}")


def iter_nodes(expr: CoreExpr) -> Iterator[CoreExpr]:
    """Pre-order traversal in textual order, iterative to survive deep lets."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, Pair):
            stack.append(node.right)
            stack.append(node.left)
        elif isinstance(node, (Fst, Snd)):
            stack.append(node.inner)
        elif isinstance(node, Let):
            stack.append(node.body)
            stack.append(node.bound)
        elif isinstance(node, If):
            stack.append(node.orelse)
            stack.append(node.then)
            stack.append(node.guard)


def count_flips(expr: CoreExpr) -> int:
    return sum(1 for node in iter_nodes(expr) if isinstance(node, Flip))


def collect_weights(expr: CoreExpr) -> list[str]:
    """Distinct tunable-weight names in first-occurrence order."""
    seen: dict[str, None] = {}
    for node in iter_nodes(expr):
        if isinstance(node, Flip) and isinstance(node.weight, Sym):
            seen.setdefault(node.weight.name, None)
    return list(seen)


# ---------------------------------------------------------------------------
# Typechecking


def typecheck(expr: CoreExpr, env: Optional[Mapping[str, CoreType]] = None) -> CoreType:
    """Type of ``expr`` under ``env``; raises CoreTypeError on mismatch.

    Let chains are handled with an explicit loop so deeply nested lowered
    programs do not hit the interpreter recursion limit.
    """
    scope: dict[str, CoreType] = dict(env) if env else {}

    def check(e: CoreExpr) -> CoreType:
        restores: list[tuple[str, Optional[CoreType]]] = []
        try:
            while isinstance(e, Let):
                bound_ty = check(e.bound)
                restores.append((e.name, scope.get(e.name)))
                scope[e.name] = bound_ty
                e = e.body
            if isinstance(e, Var):
                if e.name not in scope:
                    raise CoreTypeError(f"unbound variable {e.name!r}", e)
                return scope[e.name]
            if isinstance(e, Lit):
                return value_type(e.value)
            if isinstance(e, Flip):
                return BOOL
            if isinstance(e, Pair):
                return Product(check(e.left), check(e.right))
            if isinstance(e, Fst):
                inner = check(e.inner)
                if not isinstance(inner, Product):
                    raise CoreTypeError(f"fst of non-product {inner!r}", e)
                return inner.left
            if isinstance(e, Snd):
                inner = check(e.inner)
                if not isinstance(inner, Product):
                    raise CoreTypeError(f"snd of non-product {inner!r}", e)
                return inner.right
            if isinstance(e, If):
                guard_ty = check(e.guard)
                if guard_ty != BOOL:
                    raise CoreTypeError(f"if guard has type {guard_ty!r}, expected Bool", e)
                then_ty = check(e.then)
                else_ty = check(e.orelse)
                if then_ty != else_ty:
                    raise CoreTypeError(
                        f"if branches disagree: {then_ty!r} vs {else_ty!r}", e
                    )
                return then_ty
            raise CoreTypeError(f"unknown core node {e!r}", e)
        finally:
            for name, old in reversed(restores):
                if old is None:
                    scope.pop(name, None)
                else:
                    scope[name] = old

    return check(expr)


# ---------------------------------------------------------------------------
# Enumeration semantics (the oracle)

Distribution = dict


def _resolve(term: NumericTerm, weights: Mapping[str, float]) -> float:
    if isinstance(term, Const):
        return term.value
    if term.name not in weights:
        raise KeyError(f"unbound symbolic weight {term.name!r}")
    value = float(weights[term.name])
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"weight {term.name!r}={value} outside [0, 1]")
    return value


def enumerate_semantics(
    expr: CoreExpr,
    weights: Optional[Mapping[str, float]] = None,
    *,
    flip_budget: int = DEFAULT_FLIP_BUDGET,
    typed: bool = True,
) -> Distribution:
    """Exact output distribution of a closed core expression.

    Structural recursion over the denotational semantics: a literal is a
    point mass, ``if`` dispatches on the guard distribution, ``let``
    marginalizes over the bound expression's support, and ``flip q`` yields
    ``{True: q, False: 1-q}`` with symbolic weights substituted from
    ``weights``.  Exponential in flip count, hence the budget.
    """
    weights = weights or {}
    nflips = count_flips(expr)
    if nflips > flip_budget:
        raise FlipBudgetError(
            f"program has {nflips} flips, oracle budget is {flip_budget}"
        )
    if typed:
        typecheck(expr)

    def ev(e: CoreExpr, env: dict) -> Distribution:
        while isinstance(e, Let):
            bound_dist = ev(e.bound, env)
            if len(bound_dist) == 1:
                ((bv, bp),) = bound_dist.items()
                if bp == 1.0:
                    env = {**env, e.name: bv}
                    e = e.body
                    continue
            out: Distribution = {}
            for bv, bp in bound_dist.items():
                if bp == 0.0:
                    continue
                sub = ev(e.body, {**env, e.name: bv})
                for v, p in sub.items():
                    out[v] = out.get(v, 0.0) + bp * p
            return out
        if isinstance(e, Var):
            return {env[e.name]: 1.0}
        if isinstance(e, Lit):
            return {e.value: 1.0}
        if isinstance(e, Flip):
            q = _resolve(e.weight, weights)
            out = {}
            if q > 0.0:
                out[True] = q
            if q < 1.0:
                out[False] = 1.0 - q
            return out
        if isinstance(e, Pair):
            left = ev(e.left, env)
            right = ev(e.right, env)
            out = {}
            for lv, lp in left.items():
                for rv, rp in right.items():
                    key = (lv, rv)
                    out[key] = out.get(key, 0.0) + lp * rp
            return out
        if isinstance(e, Fst):
            out = {}
            for v, p in ev(e.inner, env).items():
                out[v[0]] = out.get(v[0], 0.0) + p
            return out
        if isinstance(e, Snd):
            out = {}
            for v, p in ev(e.inner, env).items():
                out[v[1]] = out.get(v[1], 0.0) + p
            return out
        if isinstance(e, If):
            guard = ev(e.guard, env)
            out = {}
            for gv, gp in guard.items():
                if gp == 0.0:
                    continue
                sub = ev(e.then if gv else e.orelse, env)
                for v, p in sub.items():
                    out[v] = out.get(v, 0.0) + gp * p
            return out
        raise CoreTypeError(f"cannot evaluate {e!r}", e)

    return ev(expr, {})
