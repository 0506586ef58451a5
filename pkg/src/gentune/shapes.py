"""Bit-level layouts for bounded surface types.

Every value of a bounded type is encoded as a fixed-width vector of
booleans.  Naturals are binary-encoded little-endian.  An ADT at recursion
depth ``d`` is laid out as a constructor tag followed by the concatenated
field slots of every constructor representable at that depth; the slots of
the constructors that were not chosen are zero-filled placeholders.

Tags are numbered from 1 in declaration order and 0 is reserved for
placeholder fill, so a zeroed region is never mistaken for a real value.
Constructors whose fields cannot fit in the remaining depth (recursive
constructors at depth 0) get no slots at all, which is what bounds the
encoding of recursive types.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional, Union

from .values import VCtor, Value

__all__ = [
    "BoolShape",
    "NatShape",
    "TupleShape",
    "CtorLayout",
    "AdtShape",
    "Shape",
    "BOOL_SHAPE",
    "ShapeError",
    "SupportBudgetError",
    "FieldType",
    "AdtDecl",
    "ShapeContext",
    "encode",
    "decode",
    "layout_render",
    "enumerate_support",
    "count_support",
    "join",
]


class ShapeError(ValueError):
    pass


class SupportBudgetError(RuntimeError):
    """Raised when a support enumeration would exceed its value budget."""


@dataclass(frozen=True, slots=True)
class BoolShape:
    @property
    def width(self) -> int:
        return 1

    def __repr__(self) -> str:
        return "bool"


@dataclass(frozen=True, slots=True)
class NatShape:
    bits: int

    @property
    def width(self) -> int:
        return self.bits

    def __repr__(self) -> str:
        return f"nat{self.bits}"


@dataclass(frozen=True, slots=True)
class TupleShape:
    fields: tuple

    @property
    def width(self) -> int:
        return sum(f.width for f in self.fields)

    def __repr__(self) -> str:
        return "(" + " ".join(repr(f) for f in self.fields) + ")"


@dataclass(frozen=True, slots=True)
class CtorLayout:
    name: str
    tag: int  # 1-based declaration index; 0 is the placeholder fill
    fields: Optional[tuple]  # None when not representable at this depth


@dataclass(frozen=True, slots=True)
class AdtShape:
    type_name: str
    depth: int
    tag_width: int
    ctors: tuple  # CtorLayout per declared constructor, declaration order

    @property
    def width(self) -> int:
        total = self.tag_width
        for c in self.ctors:
            if c.fields is not None:
                total += sum(f.width for f in c.fields)
        return total

    def layout(self, ctor_name: str) -> CtorLayout:
        for c in self.ctors:
            if c.name == ctor_name:
                return c
        raise ShapeError(f"{self.type_name} has no constructor {ctor_name!r}")

    def __repr__(self) -> str:
        return f"{self.type_name}@{self.depth}"


Shape = Union[BoolShape, NatShape, TupleShape, AdtShape]

BOOL_SHAPE = BoolShape()


# ---------------------------------------------------------------------------
# Type declarations and shape construction

FieldType = Union[str, tuple]  # "bool" | ("nat", width) | ADT type name


@dataclass(frozen=True, slots=True)
class AdtDecl:
    name: str
    ctors: tuple  # of (ctor_name, tuple of FieldType)


def _is_adt_field(field: FieldType) -> bool:
    return isinstance(field, str) and field != "bool"


class ShapeContext:
    """Resolves declared types to canonical depth-indexed shapes."""

    def __init__(self, decls: dict):
        self.decls = dict(decls)
        self._shape_cache: dict = {}
        self._min_depth = self._compute_min_depths()
        for name, decl in self.decls.items():
            seen = set()
            for cname, _ in decl.ctors:
                if cname in seen:
                    raise ShapeError(f"duplicate constructor {cname!r} in type {name}")
                seen.add(cname)

    def _compute_min_depths(self) -> dict:
        INF = float("inf")
        depth = {name: INF for name in self.decls}

        def ctor_depth(fields) -> float:
            need = 0.0
            for f in fields:
                if _is_adt_field(f):
                    if f not in depth:
                        raise ShapeError(f"unknown type {f!r} in a constructor field")
                    if depth[f] is INF or depth[f] == INF:
                        return INF
                    need = max(need, depth[f] + 1)
            return need

        changed = True
        while changed:
            changed = False
            for name, decl in self.decls.items():
                best = min((ctor_depth(fields) for _, fields in decl.ctors), default=INF)
                if best < depth[name]:
                    depth[name] = best
                    changed = True
        for name, d in depth.items():
            if d == INF:
                raise ShapeError(f"type {name} has no terminating constructor")
        return {name: int(d) for name, d in depth.items()}

    def min_depth(self, type_name: str) -> int:
        return self._min_depth[type_name]

    def field_shape(self, field: FieldType, depth: int) -> Shape:
        if field == "bool":
            return BOOL_SHAPE
        if isinstance(field, tuple) and field[0] == "nat":
            return NatShape(field[1])
        return self.shape(field, depth)

    def shape(self, type_name: str, depth: int) -> AdtShape:
        """Canonical shape of ``type_name`` at recursion depth ``depth``.

        Depths beyond the point where the layout stops changing collapse to
        the same object, so non-recursive types have a single shape.
        """
        if type_name not in self.decls:
            raise ShapeError(f"unknown type {type_name!r}")
        depth = max(depth, self._min_depth[type_name])
        key = (type_name, depth)
        if key in self._shape_cache:
            return self._shape_cache[key]
        decl = self.decls[type_name]
        tag_width = max(1, len(decl.ctors).bit_length())
        layouts = []
        for idx, (cname, fields) in enumerate(decl.ctors):
            ok = all(
                not _is_adt_field(f) or self._min_depth[f] <= depth - 1 for f in fields
            )
            if ok:
                fshapes = tuple(self.field_shape(f, depth - 1) for f in fields)
                layouts.append(CtorLayout(cname, idx + 1, fshapes))
            else:
                layouts.append(CtorLayout(cname, idx + 1, None))
        built = AdtShape(type_name, depth, tag_width, tuple(layouts))
        if depth > self._min_depth[type_name]:
            prev = self.shape(type_name, depth - 1)
            if prev.ctors == built.ctors:
                self._shape_cache[key] = prev
                return prev
        self._shape_cache[key] = built
        return built


# ---------------------------------------------------------------------------
# Join (least shape embedding both operands)


def join(a: Shape, b: Shape, ctx: Optional[ShapeContext] = None) -> Shape:
    if a is b:
        return a
    if isinstance(a, BoolShape) and isinstance(b, BoolShape):
        return a
    if isinstance(a, NatShape) and isinstance(b, NatShape):
        return a if a.bits >= b.bits else b
    if isinstance(a, TupleShape) and isinstance(b, TupleShape):
        if len(a.fields) != len(b.fields):
            raise ShapeError(f"tuple arity mismatch: {a!r} vs {b!r}")
        return TupleShape(tuple(join(x, y, ctx) for x, y in zip(a.fields, b.fields)))
    if isinstance(a, AdtShape) and isinstance(b, AdtShape):
        if a.type_name != b.type_name:
            raise ShapeError(f"cannot join values of types {a.type_name} and {b.type_name}")
        if ctx is None:
            raise ShapeError("ADT join requires a shape context")
        return ctx.shape(a.type_name, max(a.depth, b.depth))
    raise ShapeError(f"incompatible shapes: {a!r} vs {b!r}")


# ---------------------------------------------------------------------------
# Encoding and decoding


def _nat_bits(value: int, width: int) -> list:
    return [bool((value >> i) & 1) for i in range(width)]


def _bits_nat(bits) -> int:
    return sum(1 << i for i, b in enumerate(bits) if b)


def encode(value: Value, shape: Shape) -> list:
    """Bit vector (little-endian nats, zero placeholders) for ``value``."""
    if isinstance(shape, BoolShape):
        if not isinstance(value, bool):
            raise ShapeError(f"expected bool, got {value!r}")
        return [value]
    if isinstance(shape, NatShape):
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ShapeError(f"expected nat, got {value!r}")
        if value >= (1 << shape.bits):
            raise ShapeError(f"nat {value} does not fit in {shape.bits} bits")
        return _nat_bits(value, shape.bits)
    if isinstance(shape, TupleShape):
        if not isinstance(value, tuple) or len(value) != len(shape.fields):
            raise ShapeError(f"expected {len(shape.fields)}-tuple, got {value!r}")
        out = []
        for v, f in zip(value, shape.fields):
            out.extend(encode(v, f))
        return out
    if isinstance(shape, AdtShape):
        if not isinstance(value, VCtor):
            raise ShapeError(f"expected {shape.type_name} value, got {value!r}")
        chosen = shape.layout(value.ctor)
        if chosen.fields is None:
            raise ShapeError(
                f"constructor {value.ctor} not representable at depth {shape.depth}"
            )
        if len(value.fields) != len(chosen.fields):
            raise ShapeError(f"arity mismatch encoding {value!r}")
        out = _nat_bits(chosen.tag, shape.tag_width)
        for layout in shape.ctors:
            if layout.fields is None:
                continue
            if layout.name == value.ctor:
                for v, f in zip(value.fields, layout.fields):
                    out.extend(encode(v, f))
            else:
                out.extend([False] * sum(f.width for f in layout.fields))
        return out
    raise ShapeError(f"bad shape {shape!r}")


def decode(bits, shape: Shape, offset: int = 0) -> Value:
    value, end = _decode(bits, shape, offset)
    if offset == 0 and end != len(bits) and end - offset != shape.width:
        raise ShapeError("bit vector length does not match shape width")
    return value


def _decode(bits, shape: Shape, at: int):
    if isinstance(shape, BoolShape):
        return bool(bits[at]), at + 1
    if isinstance(shape, NatShape):
        return _bits_nat(bits[at : at + shape.bits]), at + shape.bits
    if isinstance(shape, TupleShape):
        items = []
        for f in shape.fields:
            v, at = _decode(bits, f, at)
            items.append(v)
        return tuple(items), at
    if isinstance(shape, AdtShape):
        tag = _bits_nat(bits[at : at + shape.tag_width])
        at += shape.tag_width
        chosen = None
        for layout in shape.ctors:
            if layout.tag == tag:
                chosen = layout
        if chosen is None or chosen.fields is None:
            raise ShapeError(f"invalid tag {tag} for {shape!r}")
        fields = []
        for layout in shape.ctors:
            if layout.fields is None:
                continue
            if layout is chosen:
                for f in layout.fields:
                    v, at = _decode(bits, f, at)
                    fields.append(v)
            else:
                at += sum(f.width for f in layout.fields)
        return VCtor(chosen.name, tuple(fields)), at
    raise ShapeError(f"bad shape {shape!r}")


def layout_render(value: Value, shape: Shape):
    """Nested-tuple view of the encoded layout, placeholders included.

    A list value of max length two renders as ``(2, 10, (2, 20, (1,)))``
    style nested tuples: tag first, then every representable constructor's
    field slots with zeros where a slot is unused.
    """
    if isinstance(shape, BoolShape):
        return int(value)
    if isinstance(shape, NatShape):
        return int(value)
    if isinstance(shape, TupleShape):
        return tuple(layout_render(v, f) for v, f in zip(value, shape.fields))

    def zeros(s: Shape):
        if isinstance(s, (BoolShape, NatShape)):
            return 0
        if isinstance(s, TupleShape):
            return tuple(zeros(f) for f in s.fields)
        parts = [0]
        for layout in s.ctors:
            if layout.fields is not None:
                parts.extend(zeros(f) for f in layout.fields)
        return tuple(parts)

    if isinstance(shape, AdtShape):
        chosen = shape.layout(value.ctor)
        parts = [chosen.tag]
        for layout in shape.ctors:
            if layout.fields is None:
                continue
            if layout.name == value.ctor:
                parts.extend(
                    layout_render(v, f) for v, f in zip(value.fields, layout.fields)
                )
            else:
                parts.extend(zeros(f) for f in layout.fields)
        return tuple(parts)
    raise ShapeError(f"bad shape {shape!r}")


# ---------------------------------------------------------------------------
# Support enumeration


def count_support(shape: Shape) -> int:
    if isinstance(shape, BoolShape):
        return 2
    if isinstance(shape, NatShape):
        return 1 << shape.bits
    if isinstance(shape, TupleShape):
        total = 1
        for f in shape.fields:
            total *= count_support(f)
        return total
    if isinstance(shape, AdtShape):
        total = 0
        for layout in shape.ctors:
            if layout.fields is None:
                continue
            sub = 1
            for f in layout.fields:
                sub *= count_support(f)
            total += sub
        return total
    raise ShapeError(f"bad shape {shape!r}")


def enumerate_support(shape: Shape, budget: Optional[int] = None) -> Iterator[Value]:
    """All values of the bounded type, in a deterministic order."""
    if budget is not None and count_support(shape) > budget:
        raise SupportBudgetError(
            f"support of {shape!r} has {count_support(shape)} values, budget {budget}"
        )
    yield from _enum(shape)


def _enum(shape: Shape) -> Iterator[Value]:
    if isinstance(shape, BoolShape):
        yield False
        yield True
    elif isinstance(shape, NatShape):
        yield from range(1 << shape.bits)
    elif isinstance(shape, TupleShape):
        yield from _enum_product(shape.fields, tuple)
    elif isinstance(shape, AdtShape):
        for layout in shape.ctors:
            if layout.fields is None:
                continue
            name = layout.name
            yield from _enum_product(layout.fields, lambda fs, n=name: VCtor(n, fs))
    else:
        raise ShapeError(f"bad shape {shape!r}")


def _enum_product(fields, build) -> Iterator[Value]:
    if not fields:
        yield build(())
        return

    def rec(i: int, acc: list) -> Iterator[Value]:
        if i == len(fields):
            yield build(tuple(acc))
            return
        for v in _enum(fields[i]):
            acc.append(v)
            yield from rec(i + 1, acc)
            acc.pop()

    yield from rec(0, [])
