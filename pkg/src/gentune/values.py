"""Runtime values of the surface language and their canonical rendering.

A surface value is one of:

* ``bool``  — booleans
* ``int``   — bounded naturals
* ``tuple`` — n-ary tuples of values (the empty tuple is unit)
* ``VCtor`` — an ADT constructor applied to field values
* ``VList`` — a compile-time list (used for call-stack contexts); never
  bit-encoded

``render`` produces the canonical s-expression text used for value output,
uniqueness hashing, and dependency-splitting keys, so all subsystems agree
on value identity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

__all__ = ["VCtor", "VList", "Value", "render"]


@dataclass(frozen=True, slots=True)
class VCtor:
    ctor: str
    fields: tuple = ()

    def __repr__(self) -> str:
        return render(self)


@dataclass(frozen=True, slots=True)
class VList:
    items: tuple = ()

    def __repr__(self) -> str:
        return render(self)


Value = Union[bool, int, tuple, VCtor, VList]


def render(value: Value) -> str:
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, tuple):
        if not value:
            return "(tuple)"
        return "(tuple " + " ".join(render(v) for v in value) + ")"
    if isinstance(value, VCtor):
        if not value.fields:
            return f"({value.ctor})"
        return f"({value.ctor} " + " ".join(render(v) for v in value.fields) + ")"
    if isinstance(value, VList):
        return "[" + " ".join(render(v) for v in value.items) + "]"
    raise TypeError(f"not a surface value: {value!r}")
