"""Lowering of surface programs to the core IR by partial evaluation.

The lowerer symbolically executes a surface program.  Static data (size
arguments, call-stack lists, statically known constructors) is evaluated at
lowering time; random or data-dependent bits become let-bound boolean core
expressions.  Recursion is unwound by inlining, bounded by a depth guard;
matches on values whose shape rules out a constructor prune that arm, which
is what terminates structural recursion over bounded data.

Choice combinators lower to coin flips:

* ``freq`` with constant weights becomes the ratio chain
  ``if flip(q1/(q1+...+qk)) e1 else if flip(q2/(q2+...)) ...``
* ``freq`` with any tunable weight becomes a stick-breaking chain of fresh
  named flips, one parameter per decision point, keyed by the choice site
  (and the dependency value for ``freqdep``) so that every inlined copy of
  a site shares parameters.
* ``backtrack`` evaluates every branch once and selects with a weighted
  without-replacement decision tree over the branch results; a branch that
  produced the failure constructor falls through to a renormalized pick
  among the remaining branches.

Tunable weights are registered in encounter order; stick parameters are
initialized to ``1/(k-i)`` so an untrained k-way choice is uniform.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Optional, Union

from .. import core as C
from ..shapes import (
    AdtShape,
    BoolShape,
    BOOL_SHAPE,
    NatShape,
    Shape,
    ShapeContext,
    ShapeError,
    TupleShape,
    join,
)
from ..values import VCtor, VList, Value, render
from . import ast as A

__all__ = [
    "LoweringError",
    "WeightRegistry",
    "LoweredProgram",
    "Lowerer",
    "lower_program",
    "stick_name",
    "backtrack_stick_name",
    "flip_site_name",
    "freqdep_stick_name",
    "failure_ctor_of",
    "assemble_bits",
    "core_value_bits",
]

DEFAULT_RECURSION_LIMIT = 6000
DEFAULT_DEP_DOMAIN_LIMIT = 512
DEFAULT_BACKTRACK_LIMIT = 4

Bit = Union[bool, str]  # constant or name of a let-bound boolean


class LoweringError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Tunable-weight naming.  Shared with the concrete interpreter so that both
# resolve the same parameters for the same choice sites.


def stick_name(site: str, index: int) -> str:
    return f"freq@{site}/{index}"


def freqdep_stick_name(site: str, dep_key: str, index: int) -> str:
    return f"dep@{site}|{dep_key}/{index}"


def backtrack_stick_name(site: str, remaining: tuple, index: int) -> str:
    return f"bt@{site}|{'.'.join(map(str, remaining))}/{index}"


def flip_site_name(site: str) -> str:
    return f"flip@{site}"


class WeightRegistry:
    """Ordered registry of tunable weights with their initial values."""

    def __init__(self) -> None:
        self.names: list = []
        self.inits: list = []
        self.index: dict = {}

    def ensure(self, name: str, init: float) -> int:
        idx = self.index.get(name)
        if idx is not None:
            return idx
        idx = len(self.names)
        self.index[name] = idx
        self.names.append(name)
        self.inits.append(init)
        return idx

    def __len__(self) -> int:
        return len(self.names)

    def init_assignment(self) -> dict:
        return dict(zip(self.names, self.inits))

    def vector_to_assignment(self, vector) -> dict:
        if len(vector) != len(self.names):
            raise ValueError("weight vector length mismatch")
        return dict(zip(self.names, map(float, vector)))


# ---------------------------------------------------------------------------
# Partially evaluated values


@dataclass(frozen=True, slots=True)
class PBool:
    bit: Bit


@dataclass(frozen=True, slots=True)
class PNat:
    bits: tuple  # little-endian Bits

    @property
    def width(self) -> int:
        return len(self.bits)


@dataclass(frozen=True, slots=True)
class PTuple:
    items: tuple


@dataclass(frozen=True, slots=True)
class PCtorV:
    type_name: str
    ctor: str
    fields: tuple


@dataclass(frozen=True, slots=True)
class PAdt:
    shape: AdtShape
    tag_bits: tuple
    fields: dict  # ctor name -> tuple of PEValue, for ctors with slots


@dataclass(frozen=True, slots=True)
class PList:
    items: tuple  # static values only


PEValue = Union[PBool, PNat, PTuple, PCtorV, PAdt, PList]


def static_value(v: PEValue) -> Optional[Value]:
    """The concrete value of ``v`` if it is fully static, else None."""
    if isinstance(v, PBool):
        return v.bit if isinstance(v.bit, bool) else None
    if isinstance(v, PNat):
        if all(isinstance(b, bool) for b in v.bits):
            return sum(1 << i for i, b in enumerate(v.bits) if b)
        return None
    if isinstance(v, PTuple):
        items = [static_value(x) for x in v.items]
        return tuple(items) if all(i is not None for i in items) else None
    if isinstance(v, PCtorV):
        fields = [static_value(x) for x in v.fields]
        if all(f is not None for f in fields):
            return VCtor(v.ctor, tuple(fields))
        return None
    if isinstance(v, PList):
        return VList(v.items)
    return None


def failure_ctor_of(shape: AdtShape) -> Optional[str]:
    """The nullary constructor whose name marks a backtracking failure."""
    for layout in shape.ctors:
        if layout.name.startswith("None") and layout.fields == ():
            return layout.name
    return None


# ---------------------------------------------------------------------------


@dataclass
class LoweredProgram:
    expr: "C.CoreExpr"
    shape: Shape
    weights: WeightRegistry
    program: A.Program
    wrappers: tuple
    n_flips: int = 0

    def decode_core_value(self, core_value) -> Value:
        from ..shapes import decode

        return decode(core_value_bits(core_value, self.shape), self.shape)


class Lowerer:
    def __init__(
        self,
        program: A.Program,
        *,
        recursion_limit: int = DEFAULT_RECURSION_LIMIT,
        dep_domain_limit: int = DEFAULT_DEP_DOMAIN_LIMIT,
        backtrack_limit: int = DEFAULT_BACKTRACK_LIMIT,
    ) -> None:
        self.program = program
        self.ctx = ShapeContext(program.adts)
        self.weights = WeightRegistry()
        self.lets: list = []  # (name, core expr), in emission order
        self._counter = 0
        self.call_depth = 0
        self.recursion_limit = recursion_limit
        self.dep_domain_limit = dep_domain_limit
        self.backtrack_limit = backtrack_limit
        self.n_flips = 0

    # -- emission helpers ------------------------------------------------------

    def emit(self, expr: "C.CoreExpr") -> Bit:
        if isinstance(expr, C.Lit):
            return bool(expr.value)
        if isinstance(expr, C.Var):
            return expr.name
        self._counter += 1
        name = f"_b{self._counter}"
        self.lets.append((name, expr))
        return name

    def emit_flip(self, term) -> Bit:
        self.n_flips += 1
        return self.emit(C.Flip(term))

    @staticmethod
    def bit_core(bit: Bit) -> "C.CoreExpr":
        return C.Lit(bit) if isinstance(bit, bool) else C.Var(bit)

    def b_mux(self, g: Bit, a: Bit, b: Bit) -> Bit:
        if g is True or a == b:
            return a
        if g is False:
            return b
        if a is True and b is False:
            return g
        if a is False and b is True:
            return self.b_not(g)
        return self.emit(C.If(self.bit_core(g), self.bit_core(a), self.bit_core(b)))

    def b_not(self, a: Bit) -> Bit:
        if isinstance(a, bool):
            return not a
        return self.emit(C.If(self.bit_core(a), C.Lit(False), C.Lit(True)))

    def b_and(self, a: Bit, b: Bit) -> Bit:
        if a is False or b is False:
            return False
        if a is True:
            return b
        if b is True or a == b:
            return a
        return self.emit(C.If(self.bit_core(a), self.bit_core(b), C.Lit(False)))

    def b_or(self, a: Bit, b: Bit) -> Bit:
        if a is True or b is True:
            return True
        if a is False:
            return b
        if b is False or a == b:
            return a
        return self.emit(C.If(self.bit_core(a), C.Lit(True), self.bit_core(b)))

    def b_xor(self, a: Bit, b: Bit) -> Bit:
        if a is False:
            return b
        if b is False:
            return a
        if a is True:
            return self.b_not(b)
        if b is True:
            return self.b_not(a)
        if a == b:
            return False
        return self.emit(
            C.If(
                self.bit_core(a),
                C.If(self.bit_core(b), C.Lit(False), C.Lit(True)),
                self.bit_core(b),
            )
        )

    def b_xnor(self, a: Bit, b: Bit) -> Bit:
        return self.b_not(self.b_xor(a, b))

    # -- shapes of values -------------------------------------------------------

    def shape_of(self, v: PEValue) -> Shape:
        if isinstance(v, PBool):
            return BOOL_SHAPE
        if isinstance(v, PNat):
            return NatShape(max(1, v.width))
        if isinstance(v, PTuple):
            return TupleShape(tuple(self.shape_of(x) for x in v.items))
        if isinstance(v, PAdt):
            return v.shape
        if isinstance(v, PCtorV):
            depth = 0
            for f in v.fields:
                fs = self.shape_of(f)
                if isinstance(fs, AdtShape):
                    depth = max(depth, fs.depth + 1)
            return self.ctx.shape(v.type_name, depth)
        raise LoweringError(f"value {v!r} has no bit-level shape")

    # -- encoding / coercion ----------------------------------------------------

    def encode_val(self, v: PEValue, shape: Shape) -> list:
        if isinstance(shape, BoolShape):
            if not isinstance(v, PBool):
                raise LoweringError(f"expected bool value, got {type(v).__name__}")
            return [v.bit]
        if isinstance(shape, NatShape):
            if not isinstance(v, PNat):
                raise LoweringError(f"expected nat value, got {type(v).__name__}")
            bits = list(v.bits)
            if len(bits) > shape.bits:
                for b in bits[shape.bits :]:
                    if b is not False:
                        raise LoweringError(
                            f"nat value may exceed its {shape.bits}-bit field"
                        )
                bits = bits[: shape.bits]
            bits.extend([False] * (shape.bits - len(bits)))
            return bits
        if isinstance(shape, TupleShape):
            if not isinstance(v, PTuple) or len(v.items) != len(shape.fields):
                raise LoweringError("tuple shape mismatch")
            out = []
            for item, fs in zip(v.items, shape.fields):
                out.extend(self.encode_val(item, fs))
            return out
        if isinstance(shape, AdtShape):
            if isinstance(v, PCtorV):
                if v.type_name != shape.type_name:
                    raise LoweringError(
                        f"cannot encode {v.type_name} value as {shape.type_name}"
                    )
                chosen = shape.layout(v.ctor)
                if chosen.fields is None:
                    raise LoweringError(
                        f"constructor {v.ctor} needs more depth than {shape!r}"
                    )
                out = [bool((chosen.tag >> i) & 1) for i in range(shape.tag_width)]
                for layout in shape.ctors:
                    if layout.fields is None:
                        continue
                    if layout.name == v.ctor:
                        for fv, fs in zip(v.fields, layout.fields):
                            out.extend(self.encode_val(fv, fs))
                    else:
                        out.extend([False] * sum(f.width for f in layout.fields))
                return out
            if isinstance(v, PAdt):
                if v.shape.type_name != shape.type_name:
                    raise LoweringError(
                        f"cannot encode {v.shape.type_name} value as {shape.type_name}"
                    )
                out = list(v.tag_bits)
                for layout in shape.ctors:
                    if layout.fields is None:
                        continue
                    src = v.fields.get(layout.name)
                    if src is None:
                        out.extend([False] * sum(f.width for f in layout.fields))
                    else:
                        for fv, fs in zip(src, layout.fields):
                            out.extend(self.encode_val(fv, fs))
                return out
            raise LoweringError(f"expected {shape.type_name} value, got {type(v).__name__}")
        raise LoweringError(f"bad shape {shape!r}")

    def bits_to_val(self, bits: list, shape: Shape, at: int = 0):
        v, end = self._bits_to_val(bits, shape, at)
        return v

    def _bits_to_val(self, bits: list, shape: Shape, at: int):
        if isinstance(shape, BoolShape):
            return PBool(bits[at]), at + 1
        if isinstance(shape, NatShape):
            return PNat(tuple(bits[at : at + shape.bits])), at + shape.bits
        if isinstance(shape, TupleShape):
            items = []
            for fs in shape.fields:
                v, at = self._bits_to_val(bits, fs, at)
                items.append(v)
            return PTuple(tuple(items)), at
        if isinstance(shape, AdtShape):
            tag = tuple(bits[at : at + shape.tag_width])
            at += shape.tag_width
            fields = {}
            for layout in shape.ctors:
                if layout.fields is None:
                    continue
                fv = []
                for fs in layout.fields:
                    v, at = self._bits_to_val(bits, fs, at)
                    fv.append(v)
                fields[layout.name] = tuple(fv)
            return PAdt(shape, tag, fields), at
        raise LoweringError(f"bad shape {shape!r}")

    def coerce(self, v: PEValue, shape: Shape) -> PEValue:
        if self.shape_of(v) == shape:
            return v
        return self.bits_to_val(self.encode_val(v, shape), shape)

    # -- multiplexing -----------------------------------------------------------

    def mux(self, g: Bit, a: PEValue, b: PEValue) -> PEValue:
        if g is True:
            return a
        if g is False:
            return b
        if isinstance(a, PBool) and isinstance(b, PBool):
            return PBool(self.b_mux(g, a.bit, b.bit))
        if isinstance(a, PNat) and isinstance(b, PNat):
            w = max(a.width, b.width)
            ab = a.bits + (False,) * (w - a.width)
            bb = b.bits + (False,) * (w - b.width)
            return PNat(tuple(self.b_mux(g, x, y) for x, y in zip(ab, bb)))
        if isinstance(a, PTuple) and isinstance(b, PTuple):
            if len(a.items) != len(b.items):
                raise LoweringError("cannot merge tuples of different arity")
            return PTuple(
                tuple(self.mux(g, x, y) for x, y in zip(a.items, b.items))
            )
        if isinstance(a, PList) and isinstance(b, PList):
            if a.items == b.items:
                return a
            raise LoweringError("context lists must be statically known")
        if (
            isinstance(a, PCtorV)
            and isinstance(b, PCtorV)
            and a.ctor == b.ctor
            and len(a.fields) == len(b.fields)
        ):
            return PCtorV(
                a.type_name,
                a.ctor,
                tuple(self.mux(g, x, y) for x, y in zip(a.fields, b.fields)),
            )
        if isinstance(a, (PCtorV, PAdt)) and isinstance(b, (PCtorV, PAdt)):
            js = join(self.shape_of(a), self.shape_of(b), self.ctx)
            ba = self.encode_val(a, js)
            bb = self.encode_val(b, js)
            return self.bits_to_val(
                [self.b_mux(g, x, y) for x, y in zip(ba, bb)], js
            )
        raise LoweringError(
            f"cannot merge values of kinds {type(a).__name__} and {type(b).__name__}"
        )

    def cascade(self, guarded: list, last: PEValue) -> PEValue:
        out = last
        for g, v in reversed(guarded):
            out = self.mux(g, v, out)
        return out

    # -- nat circuits -------------------------------------------------------------

    def nat_eq_const(self, v: PNat, n: int) -> Bit:
        if n >= (1 << v.width):
            return False
        acc: Bit = True
        for i, b in enumerate(v.bits):
            want = bool((n >> i) & 1)
            acc = self.b_and(acc, b if want else self.b_not(b))
        return acc

    def nat_nonzero(self, v: PNat) -> Bit:
        acc: Bit = False
        for b in v.bits:
            acc = self.b_or(acc, b)
        return acc

    def nat_add(self, a: PNat, b: PNat) -> PNat:
        w = max(a.width, b.width) + 1
        ab = a.bits + (False,) * (w - a.width)
        bb = b.bits + (False,) * (w - b.width)
        out = []
        carry: Bit = False
        for x, y in zip(ab, bb):
            s = self.b_xor(self.b_xor(x, y), carry)
            carry = self.b_or(self.b_and(x, y), self.b_and(self.b_xor(x, y), carry))
            out.append(s)
        return PNat(tuple(out))

    def _sub_bits(self, a: PNat, b: PNat):
        w = max(a.width, b.width)
        ab = a.bits + (False,) * (w - a.width)
        bb = b.bits + (False,) * (w - b.width)
        out = []
        borrow: Bit = False
        for x, y in zip(ab, bb):
            diff = self.b_xor(self.b_xor(x, y), borrow)
            borrow = self.b_or(
                self.b_and(self.b_not(x), y),
                self.b_and(self.b_not(self.b_xor(x, y)), borrow),
            )
            out.append(diff)
        return out, borrow

    def nat_sub_sat(self, a: PNat, b: PNat) -> PNat:
        diff, borrow = self._sub_bits(a, b)
        keep = self.b_not(borrow)
        return PNat(tuple(self.b_and(keep, d) for d in diff))

    def nat_lt(self, a: PNat, b: PNat) -> Bit:
        _, borrow = self._sub_bits(a, b)
        return borrow

    # -- structural equality --------------------------------------------------------

    def eq_val(self, a: PEValue, b: PEValue) -> Bit:
        if isinstance(a, PBool) and isinstance(b, PBool):
            return self.b_xnor(a.bit, b.bit)
        if isinstance(a, PNat) and isinstance(b, PNat):
            w = max(a.width, b.width)
            ab = a.bits + (False,) * (w - a.width)
            bb = b.bits + (False,) * (w - b.width)
            acc: Bit = True
            for x, y in zip(ab, bb):
                acc = self.b_and(acc, self.b_xnor(x, y))
            return acc
        if isinstance(a, PTuple) and isinstance(b, PTuple):
            if len(a.items) != len(b.items):
                return False
            acc = True
            for x, y in zip(a.items, b.items):
                acc = self.b_and(acc, self.eq_val(x, y))
            return acc
        if isinstance(a, PList) and isinstance(b, PList):
            return a.items == b.items
        if isinstance(a, PCtorV) and isinstance(b, PCtorV):
            if a.ctor != b.ctor:
                return False
            acc = True
            for x, y in zip(a.fields, b.fields):
                acc = self.b_and(acc, self.eq_val(x, y))
            return acc
        if isinstance(a, PCtorV) and isinstance(b, PAdt):
            return self.eq_val(b, a)
        if isinstance(a, PAdt) and isinstance(b, PCtorV):
            if b.ctor not in a.fields:
                return False
            acc = self.adt_tag_eq(a, b.ctor)
            for x, y in zip(a.fields[b.ctor], b.fields):
                acc = self.b_and(acc, self.eq_val(x, y))
            return acc
        if isinstance(a, PAdt) and isinstance(b, PAdt):
            if a.shape.type_name != b.shape.type_name:
                raise LoweringError(
                    f"cannot compare {a.shape.type_name} with {b.shape.type_name}"
                )
            acc: Bit = False
            for name in a.fields:
                if name not in b.fields:
                    continue
                term = self.b_and(self.adt_tag_eq(a, name), self.adt_tag_eq(b, name))
                for x, y in zip(a.fields[name], b.fields[name]):
                    term = self.b_and(term, self.eq_val(x, y))
                acc = self.b_or(acc, term)
            return acc
        raise LoweringError(
            f"cannot compare {type(a).__name__} with {type(b).__name__}"
        )

    def adt_tag_eq(self, v: PAdt, ctor: str) -> Bit:
        tag = v.shape.layout(ctor).tag
        acc: Bit = True
        for i, b in enumerate(v.tag_bits):
            want = bool((tag >> i) & 1)
            acc = self.b_and(acc, b if want else self.b_not(b))
        return acc

    # -- weights ----------------------------------------------------------------------

    def _stick_flip(self, name: str, k_remaining: int) -> Bit:
        self.weights.ensure(name, 1.0 / k_remaining)
        return self.emit_flip(C.Sym(name))

    def _chain_choice(self, values: list, guards: list) -> PEValue:
        """values: k lowered branches; guards: k-1 pick bits (in order)."""
        return self.cascade(list(zip(guards, values[:-1])), values[-1])

    # -- expression dispatch ------------------------------------------------------------

    def lower(self, e: A.SurfaceExpr, env: dict) -> PEValue:
        if isinstance(e, A.SVar):
            if e.name not in env:
                raise LoweringError(f"unbound variable {e.name!r} at {e.site}")
            return env[e.name]
        if isinstance(e, A.SNatLit):
            width = max(1, e.value.bit_length())
            return PNat(tuple(bool((e.value >> i) & 1) for i in range(width)))
        if isinstance(e, A.SBoolLit):
            return PBool(e.value)
        if isinstance(e, A.STuple):
            return PTuple(tuple(self.lower(x, env) for x in e.items))
        if isinstance(e, A.SGet):
            v = self.lower(e.tup, env)
            if not isinstance(v, PTuple):
                raise LoweringError(f"(get ...) on a non-tuple at {e.site}")
            if not 0 <= e.index < len(v.items):
                raise LoweringError(f"tuple index {e.index} out of range at {e.site}")
            return v.items[e.index]
        if isinstance(e, A.SCtor):
            type_name = self.program.ctor_types[e.ctor]
            decl = self.program.adts[type_name]
            for cname, cfields in decl.ctors:
                if cname == e.ctor:
                    if len(cfields) != len(e.args):
                        raise LoweringError(
                            f"{e.ctor} expects {len(cfields)} fields, got {len(e.args)} at {e.site}"
                        )
                    break
            return PCtorV(
                type_name, e.ctor, tuple(self.lower(a, env) for a in e.args)
            )
        if isinstance(e, A.SCall):
            return self.lower_call(e, env)
        if isinstance(e, A.SLet):
            scope = dict(env)
            for name, rhs in e.bindings:
                scope[name] = self.lower(rhs, scope)
            return self.lower(e.body, scope)
        if isinstance(e, A.SIf):
            g = self.lower(e.guard, env)
            if not isinstance(g, PBool):
                raise LoweringError(f"if guard must be boolean at {e.site}")
            if g.bit is True:
                return self.lower(e.then, env)
            if g.bit is False:
                return self.lower(e.orelse, env)
            return self.mux(g.bit, self.lower(e.then, env), self.lower(e.orelse, env))
        if isinstance(e, A.SMatch):
            return self.lower_match(e, env)
        if isinstance(e, A.SFlip):
            return PBool(self.lower_flip_weight(e))
        if isinstance(e, A.SFreq):
            return self.lower_freq(e, env)
        if isinstance(e, A.SBacktrack):
            return self.lower_backtrack(e, env)
        if isinstance(e, A.SFreqDep):
            return self.lower_freqdep(e, env)
        if isinstance(e, A.SLogic):
            vals = [self.lower(a, env) for a in e.args]
            bits = []
            for v in vals:
                if not isinstance(v, PBool):
                    raise LoweringError(f"({e.op} ...) takes booleans at {e.site}")
                bits.append(v.bit)
            op = {"and": self.b_and, "or": self.b_or, "xor": self.b_xor}[e.op]
            acc = bits[0]
            for b in bits[1:]:
                acc = op(acc, b)
            return PBool(acc)
        if isinstance(e, A.SNot):
            v = self.lower(e.inner, env)
            if not isinstance(v, PBool):
                raise LoweringError(f"(not ...) takes a boolean at {e.site}")
            return PBool(self.b_not(v.bit))
        if isinstance(e, A.SEq):
            return PBool(self.eq_val(self.lower(e.left, env), self.lower(e.right, env)))
        if isinstance(e, A.SNatOp):
            return self.lower_natop(e, env)
        if isinstance(e, A.SNatBits):
            bits = []
            for b in e.bits:
                v = self.lower(b, env)
                if not isinstance(v, PBool):
                    raise LoweringError(f"(natbits ...) takes booleans at {e.site}")
                bits.append(v.bit)
            return PNat(tuple(bits))
        if isinstance(e, A.SNil):
            return PList(())
        if isinstance(e, A.SCons):
            h = self.lower(e.head, env)
            t = self.lower(e.tail, env)
            hs = static_value(h)
            if hs is None or not isinstance(t, PList):
                raise LoweringError(f"(cons ...) requires static data at {e.site}")
            return PList((hs,) + t.items)
        if isinstance(e, A.SFirstN):
            n = self.static_nat(self.lower(e.count, env), e)
            t = self.lower(e.lst, env)
            if not isinstance(t, PList):
                raise LoweringError(f"(firstn ...) requires a static list at {e.site}")
            return PList(t.items[:n])
        raise LoweringError(f"cannot lower {type(e).__name__}")

    def static_nat(self, v: PEValue, e) -> int:
        sv = static_value(v)
        if not isinstance(sv, int) or isinstance(sv, bool):
            raise LoweringError(f"expected a static nat at {e.site}")
        return sv

    def lower_natop(self, e: A.SNatOp, env: dict) -> PEValue:
        a = self.lower(e.left, env)
        b = self.lower(e.right, env)
        if not isinstance(a, PNat) or not isinstance(b, PNat):
            raise LoweringError(f"({e.op} ...) takes nats at {e.site}")
        sa, sb = static_value(a), static_value(b)
        if sa is not None and sb is not None:
            if e.op == "+":
                r = sa + sb
            elif e.op == "-":
                r = max(0, sa - sb)
            elif e.op == "max":
                r = max(sa, sb)
            elif e.op == "min":
                r = min(sa, sb)
            elif e.op == "<":
                return PBool(sa < sb)
            else:
                return PBool(sa <= sb)
            width = max(1, r.bit_length())
            return PNat(tuple(bool((r >> i) & 1) for i in range(width)))
        if e.op == "+":
            return self.nat_add(a, b)
        if e.op == "-":
            return self.nat_sub_sat(a, b)
        if e.op == "<":
            return PBool(self.nat_lt(a, b))
        if e.op == "<=":
            return PBool(self.b_not(self.nat_lt(b, a)))
        g = self.nat_lt(a, b)
        w = max(a.width, b.width)
        aa = PNat(a.bits + (False,) * (w - a.width))
        bb = PNat(b.bits + (False,) * (w - b.width))
        if e.op == "max":
            return self.mux(g, bb, aa)
        return self.mux(g, aa, bb)

    def lower_call(self, e: A.SCall, env: dict) -> PEValue:
        fn = self.program.funcs.get(e.func)
        if fn is None:
            raise LoweringError(f"unknown function {e.func!r} at {e.site}")
        if len(fn.params) != len(e.args):
            raise LoweringError(
                f"{e.func} expects {len(fn.params)} arguments, got {len(e.args)} at {e.site}"
            )
        args = [self.lower(a, env) for a in e.args]
        if self.call_depth >= self.recursion_limit:
            raise LoweringError(
                f"recursion limit exceeded inlining {e.func!r}; "
                "recursion must decrease a static size argument or a bounded value"
            )
        self.call_depth += 1
        try:
            return self.lower(fn.body, dict(zip(fn.params, args)))
        finally:
            self.call_depth -= 1

    def call_value(self, func: str, args: list) -> PEValue:
        fn = self.program.funcs.get(func)
        if fn is None:
            raise LoweringError(f"unknown function {func!r}")
        if len(fn.params) != len(args):
            raise LoweringError(f"{func} expects {len(fn.params)} arguments")
        return self.lower(fn.body, dict(zip(fn.params, args)))

    # -- match ------------------------------------------------------------------------

    def lower_match(self, e: A.SMatch, env: dict) -> PEValue:
        v = self.lower(e.scrutinee, env)
        narrow = e.scrutinee.name if isinstance(e.scrutinee, A.SVar) else None

        if isinstance(v, PCtorV):
            for pat, body in e.arms:
                if isinstance(pat, A.PWild):
                    return self.lower(body, env)
                if isinstance(pat, A.PCtor) and pat.ctor == v.ctor:
                    if len(pat.binders) != len(v.fields):
                        raise LoweringError(
                            f"pattern ({pat.ctor} ...) arity mismatch at {e.site}"
                        )
                    scope = dict(env)
                    for name, fv in zip(pat.binders, v.fields):
                        if name != "_":
                            scope[name] = fv
                    return self.lower(body, scope)
                if isinstance(pat, (A.PNatLit, A.PSucc)):
                    raise LoweringError(f"nat pattern on ADT value at {e.site}")
            raise LoweringError(
                f"non-exhaustive match: no arm for {v.ctor} at {e.site}"
            )

        if isinstance(v, PNat):
            return self._match_nat(e, v, env)
        if isinstance(v, PAdt):
            return self._match_adt(e, v, env, narrow)
        if isinstance(v, PBool):
            raise LoweringError(f"cannot match on a boolean at {e.site}; use (if ...)")
        raise LoweringError(f"cannot match on {type(v).__name__} at {e.site}")

    def _match_nat(self, e: A.SMatch, v: PNat, env: dict) -> PEValue:
        sv = static_value(v)
        if sv is not None:
            for pat, body in e.arms:
                if isinstance(pat, A.PWild):
                    return self.lower(body, env)
                if isinstance(pat, A.PNatLit) and pat.value == sv:
                    return self.lower(body, env)
                if isinstance(pat, A.PSucc) and sv >= 1:
                    r = sv - 1
                    width = max(1, r.bit_length())
                    scope = dict(env)
                    if pat.binder != "_":
                        scope[pat.binder] = PNat(
                            tuple(bool((r >> i) & 1) for i in range(width))
                        )
                    return self.lower(body, scope)
                if isinstance(pat, A.PCtor):
                    raise LoweringError(f"ADT pattern on nat value at {e.site}")
            raise LoweringError(f"non-exhaustive match on nat {sv} at {e.site}")

        guarded = []
        covered: set = set()
        succ_covered = False
        domain = 1 << v.width
        for pat, body in e.arms:
            if isinstance(pat, A.PWild):
                return self.cascade(guarded, self.lower(body, env))
            if isinstance(pat, A.PNatLit):
                if pat.value in covered or pat.value >= domain:
                    continue
                guard = self.nat_eq_const(v, pat.value)
                guarded.append((guard, self.lower(body, env)))
                covered.add(pat.value)
            elif isinstance(pat, A.PSucc):
                scope = dict(env)
                if pat.binder != "_":
                    scope[pat.binder] = self.nat_sub_sat(
                        v, PNat((True,))
                    )
                arm_val = self.lower(body, scope)
                succ_covered = True
                if 0 in covered:
                    return self.cascade(guarded, arm_val)
                guarded.append((self.nat_nonzero(v), arm_val))
            else:
                raise LoweringError(f"ADT pattern on nat value at {e.site}")
            if covered == set(range(domain)) or (succ_covered and 0 in covered):
                last_guard, last_val = guarded.pop()
                return self.cascade(guarded, last_val)
        raise LoweringError(f"non-exhaustive match on a nat at {e.site}")

    def _match_adt(self, e: A.SMatch, v: PAdt, env: dict, narrow) -> PEValue:
        representable = {
            layout.name for layout in v.shape.ctors if layout.fields is not None
        }
        remaining = set(representable)
        guarded = []
        for pat, body in e.arms:
            if not remaining:
                break
            if isinstance(pat, A.PWild):
                arm_val = self.lower(body, env)
                remaining.clear()
                return self.cascade(guarded, arm_val)
            if not isinstance(pat, A.PCtor):
                raise LoweringError(f"nat pattern on ADT value at {e.site}")
            cname = pat.ctor
            ctype = self.program.ctor_types.get(cname)
            if ctype != v.shape.type_name:
                raise LoweringError(
                    f"pattern constructor {cname} is not of type {v.shape.type_name} at {e.site}"
                )
            if cname not in representable or cname not in remaining:
                continue  # pruned (impossible at this depth) or already covered
            fields = v.fields[cname]
            if len(pat.binders) != len(fields):
                raise LoweringError(
                    f"pattern ({cname} ...) arity mismatch at {e.site}"
                )
            scope = dict(env)
            for name, fv in zip(pat.binders, fields):
                if name != "_":
                    scope[name] = fv
            if narrow is not None:
                scope[narrow] = PCtorV(v.shape.type_name, cname, fields)
            arm_val = self.lower(body, scope)
            remaining.discard(cname)
            if remaining:
                guarded.append((self.adt_tag_eq(v, cname), arm_val))
            else:
                return self.cascade(guarded, arm_val)
        if remaining:
            raise LoweringError(
                f"non-exhaustive match: missing {sorted(remaining)} at {e.site}"
            )
        last_guard, last_val = guarded.pop()
        return self.cascade(guarded, last_val)

    # -- flips and choice combinators ----------------------------------------------------

    def lower_flip_weight(self, e: A.SFlip) -> Bit:
        w = e.weight
        if isinstance(w, A.WConst):
            if not 0.0 <= w.value <= 1.0:
                raise LoweringError(f"flip constant outside [0, 1] at {e.site}")
            return self.emit_flip(C.Const(w.value))
        if isinstance(w, A.WNamed):
            self.weights.ensure(w.name, 0.5)
            return self.emit_flip(C.Sym(w.name))
        self.weights.ensure(flip_site_name(e.site), 0.5)
        return self.emit_flip(C.Sym(flip_site_name(e.site)))

    def lower_freq(self, e: A.SFreq, env: dict) -> PEValue:
        return self._freq_like(
            e.site,
            [w for w, _ in e.branches],
            [b for _, b in e.branches],
            env,
            dep_key=None,
        )

    def _freq_like(
        self,
        site: str,
        weights: list,
        branches: list,
        env: dict,
        dep_key: Optional[str],
        envs: Optional[list] = None,
    ) -> PEValue:
        k = len(branches)
        if k == 0:
            raise LoweringError("freq needs at least one branch")
        envs = envs or [env] * k
        if k == 1:
            return self.lower(branches[0], envs[0])
        symbolic = any(not isinstance(w, A.WConst) for w in weights)
        if symbolic or dep_key is not None:
            guards = []
            values = []
            for i in range(k):
                if i < k - 1:
                    if dep_key is None:
                        name = stick_name(site, i)
                    else:
                        name = freqdep_stick_name(site, dep_key, i)
                    guards.append(self._stick_flip(name, k - i))
                values.append(self.lower(branches[i], envs[i]))
            return self._chain_choice(values, guards)
        ws = [w.value for w in weights]
        total = sum(ws)
        if total <= 0:
            raise LoweringError("freq weights must not all be zero")
        keep = [(w, b, en) for w, b, en in zip(ws, branches, envs) if w > 0]
        if len(keep) == 1:
            return self.lower(keep[0][1], keep[0][2])
        guards = []
        values = []
        rest = sum(w for w, _, _ in keep)
        for i, (w, b, en) in enumerate(keep):
            if i < len(keep) - 1:
                guards.append(self.emit_flip(C.Const(w / rest)))
                rest -= w
            values.append(self.lower(b, en))
        return self._chain_choice(values, guards)

    def lower_freqdep(self, e: A.SFreqDep, env: dict) -> PEValue:
        v = self.lower(e.dep, env)
        sv = static_value(v)
        uniform = [A.WTunable()] * len(e.options)
        if sv is not None:
            return self._freq_like(
                e.site, uniform, list(e.options), env, dep_key=render(sv)
            )
        candidates = self.enumerate_pevalue(v)
        if len(candidates) > self.dep_domain_limit:
            raise LoweringError(
                f"freqdep dependency domain has {len(candidates)} values "
                f"(limit {self.dep_domain_limit}) at {e.site}"
            )
        if len(candidates) == 1:
            cval, _ = candidates[0]
            return self._freq_like(
                e.site, uniform, list(e.options), env, dep_key=render(cval)
            )
        narrow = e.dep.name if isinstance(e.dep, A.SVar) else None
        guarded = []
        for idx, (cval, guard) in enumerate(candidates):
            arm_env = env
            if narrow is not None:
                arm_env = dict(env)
                arm_env[narrow] = self.static_to_pevalue(cval)
            arm = self._freq_like(
                e.site, uniform, list(e.options), arm_env, dep_key=render(cval)
            )
            if idx < len(candidates) - 1:
                guarded.append((guard, arm))
            else:
                return self.cascade(guarded, arm)
        raise AssertionError("unreachable")

    def static_to_pevalue(self, value: Value) -> PEValue:
        if isinstance(value, bool):
            return PBool(value)
        if isinstance(value, int):
            width = max(1, value.bit_length())
            return PNat(tuple(bool((value >> i) & 1) for i in range(width)))
        if isinstance(value, tuple):
            return PTuple(tuple(self.static_to_pevalue(x) for x in value))
        if isinstance(value, VCtor):
            type_name = self.program.ctor_types[value.ctor]
            return PCtorV(
                type_name,
                value.ctor,
                tuple(self.static_to_pevalue(f) for f in value.fields),
            )
        if isinstance(value, VList):
            return PList(value.items)
        raise LoweringError(f"cannot lift value {value!r}")

    def enumerate_pevalue(self, v: PEValue) -> list:
        """Possible concrete values of ``v`` with a guard bit for each."""
        if isinstance(v, PBool):
            if isinstance(v.bit, bool):
                return [(v.bit, True)]
            return [(False, self.b_not(v.bit)), (True, v.bit)]
        if isinstance(v, PNat):
            sv = static_value(v)
            if sv is not None:
                return [(sv, True)]
            return [
                (n, self.nat_eq_const(v, n)) for n in range(1 << v.width)
            ]
        if isinstance(v, PList):
            return [(VList(v.items), True)]
        if isinstance(v, PTuple):
            parts = [self.enumerate_pevalue(x) for x in v.items]
            out = [((), True)]
            for part in parts:
                nxt = []
                for acc, g in out:
                    for val, pg in part:
                        nxt.append((acc + (val,), self.b_and(g, pg)))
                out = nxt
                if len(out) > self.dep_domain_limit:
                    raise LoweringError("freqdep dependency domain too large")
            return [(tuple(acc), g) for acc, g in out]
        if isinstance(v, PCtorV):
            parts = [self.enumerate_pevalue(x) for x in v.fields]
            out = [((), True)]
            for part in parts:
                nxt = []
                for acc, g in out:
                    for val, pg in part:
                        nxt.append((acc + (val,), self.b_and(g, pg)))
                out = nxt
            return [(VCtor(v.ctor, acc), g) for acc, g in out]
        if isinstance(v, PAdt):
            out = []
            for layout in v.shape.ctors:
                if layout.fields is None:
                    continue
                tag_g = self.adt_tag_eq(v, layout.name)
                parts = [self.enumerate_pevalue(x) for x in v.fields[layout.name]]
                accs = [((), tag_g)]
                for part in parts:
                    nxt = []
                    for acc, g in accs:
                        for val, pg in part:
                            nxt.append((acc + (val,), self.b_and(g, pg)))
                    accs = nxt
                out.extend((VCtor(layout.name, acc), g) for acc, g in accs)
                if len(out) > self.dep_domain_limit:
                    raise LoweringError("freqdep dependency domain too large")
            return out
        raise LoweringError(f"cannot enumerate {type(v).__name__}")

    # -- backtrack ---------------------------------------------------------------------

    def lower_backtrack(self, e: A.SBacktrack, env: dict) -> PEValue:
        k = len(e.branches)
        if k > self.backtrack_limit:
            raise LoweringError(
                f"backtrack with {k} branches exceeds the expansion bound "
                f"{self.backtrack_limit} at {e.site}"
            )
        values = [self.lower(b, env) for _, b in e.branches]
        if k == 1:
            return values[0]

        shapes = [self.shape_of(v) for v in values]
        js = shapes[0]
        for s in shapes[1:]:
            js = join(js, s, self.ctx)
        if not isinstance(js, AdtShape):
            raise LoweringError(f"backtrack branches must produce an ADT at {e.site}")
        fail = failure_ctor_of(js)
        if fail is None:
            raise LoweringError(
                f"backtrack result type {js.type_name} has no nullary 'None*' "
                f"constructor at {e.site}"
            )
        values = [self.coerce(v, js) for v in values]

        def is_fail(v: PEValue) -> Bit:
            if isinstance(v, PCtorV):
                return v.ctor == fail
            assert isinstance(v, PAdt)
            if fail not in v.fields:
                return False
            return self.adt_tag_eq(v, fail)

        fail_bits = [is_fail(v) for v in values]
        weights = [w for w, _ in e.branches]
        symbolic = any(not isinstance(w, A.WConst) for w in weights)
        memo: dict = {}

        def tree(remaining: tuple) -> PEValue:
            if remaining in memo:
                return memo[remaining]
            if len(remaining) == 1:
                memo[remaining] = values[remaining[0]]
                return memo[remaining]
            arm_vals = []
            for i in remaining:
                rest = tuple(j for j in remaining if j != i)
                arm_vals.append(self.mux(fail_bits[i], tree(rest), values[i]))
            if symbolic:
                guards = [
                    self._stick_flip(
                        backtrack_stick_name(e.site, remaining, i),
                        len(remaining) - i,
                    )
                    for i in range(len(remaining) - 1)
                ]
            else:
                ws = [weights[i].value for i in remaining]
                total = sum(ws)
                if total <= 0:
                    raise LoweringError("backtrack weights must not all be zero")
                guards = []
                rest_w = total
                for i in range(len(remaining) - 1):
                    guards.append(self.emit_flip(C.Const(ws[i] / rest_w)))
                    rest_w -= ws[i]
            out = self._chain_choice(arm_vals, guards)
            memo[remaining] = out
            return out

        return tree(tuple(range(k)))


# ---------------------------------------------------------------------------
# Assembly of the final core expression


def _chain(parts: list) -> "C.CoreExpr":
    if not parts:
        raise LoweringError("cannot assemble a zero-width value")
    expr = parts[-1]
    for p in reversed(parts[:-1]):
        expr = C.Pair(p, expr)
    return expr


def _shape_elements(shape: Shape) -> list:
    """Sub-shapes whose assemblies are chained, skipping zero-width parts."""
    if isinstance(shape, (BoolShape, NatShape)):
        return []
    if isinstance(shape, TupleShape):
        return [f for f in shape.fields if f.width > 0]
    if isinstance(shape, AdtShape):
        elems: list = [BOOL_SHAPE] * shape.tag_width
        for layout in shape.ctors:
            if layout.fields is None:
                continue
            elems.extend(f for f in layout.fields if f.width > 0)
        return elems
    raise LoweringError(f"bad shape {shape!r}")


def assemble_bits(shape: Shape, bits: list, to_core) -> "C.CoreExpr":
    it = iter(bits)

    def build(s: Shape) -> "C.CoreExpr":
        if isinstance(s, BoolShape):
            return to_core(next(it))
        if isinstance(s, NatShape):
            return _chain([to_core(next(it)) for _ in range(s.bits)])
        return _chain([build(sub) for sub in _shape_elements(s)])

    out = build(shape)
    leftovers = list(it)
    if leftovers:
        raise LoweringError("bit count does not match shape width")
    return out


def core_value_bits(value, shape: Shape) -> list:
    """Flatten a nested-pair core value back to the shape's bit order."""
    out: list = []

    def split(v, k: int) -> list:
        parts = []
        for _ in range(k - 1):
            parts.append(v[0])
            v = v[1]
        parts.append(v)
        return parts

    def walk(v, s: Shape) -> None:
        if isinstance(s, BoolShape):
            out.append(bool(v))
            return
        if isinstance(s, NatShape):
            for b in split(v, s.bits) if s.bits > 1 else [v]:
                out.append(bool(b))
            return
        elems = _shape_elements(s)
        parts = split(v, len(elems)) if len(elems) > 1 else [v]
        for p, sub in zip(parts, elems):
            walk(p, sub)

    walk(value, shape)
    return out


def _prune_dead_lets(lets: list, final_expr: "C.CoreExpr") -> list:
    used: set = set()
    for node in C.iter_nodes(final_expr):
        if isinstance(node, C.Var):
            used.add(node.name)
    keep = []
    for name, bound in reversed(lets):
        if name in used:
            keep.append((name, bound))
            for node in C.iter_nodes(bound):
                if isinstance(node, C.Var):
                    used.add(node.name)
    keep.reverse()
    return keep


def lower_program(
    program: A.Program,
    *,
    wrappers: tuple = (),
    recursion_limit: int = DEFAULT_RECURSION_LIMIT,
    dep_domain_limit: int = DEFAULT_DEP_DOMAIN_LIMIT,
    backtrack_limit: int = DEFAULT_BACKTRACK_LIMIT,
) -> LoweredProgram:
    """Lower ``(main ...)``, optionally post-composed with named functions.

    ``wrappers=("height",)`` lowers the program computing ``height(main)``
    over the same coin flips, which is how feature and validity functions
    are compiled together with the generator they observe.
    """
    if sys.getrecursionlimit() < 100_000:
        sys.setrecursionlimit(100_000)
    lo = Lowerer(
        program,
        recursion_limit=recursion_limit,
        dep_domain_limit=dep_domain_limit,
        backtrack_limit=backtrack_limit,
    )
    value = lo.lower(program.require_main(), {})
    for fn in wrappers:
        flips_before = lo.n_flips
        value = lo.call_value(fn, [value])
        if lo.n_flips != flips_before:
            raise LoweringError(
                f"feature/validity function {fn!r} must be deterministic "
                "(it introduced coin flips)"
            )
    shape = lo.shape_of(value)
    if shape.width == 0:
        raise LoweringError("program output carries no information (zero width)")
    bits = lo.encode_val(value, shape)
    body = assemble_bits(shape, bits, Lowerer.bit_core)
    lets = _prune_dead_lets(lo.lets, body)
    expr = body
    for name, bound in reversed(lets):
        expr = C.Let(name, bound, expr)
    return LoweredProgram(
        expr=expr,
        shape=shape,
        weights=lo.weights,
        program=program,
        wrappers=tuple(wrappers),
        n_flips=sum(1 for _, b in lets if isinstance(b, C.Flip)),
    )
