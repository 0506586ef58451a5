"""AST of the surface generator language.

Nodes carry a source position and a stable node id assigned at parse time.
The node id identifies a *choice site*: tunable weights introduced by
``freq``/``backtrack``/``freqdep``/``flip ?`` are keyed by site (plus the
dependency value, where applicable), so every inlined copy of a recursive
function shares the same parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

from ..shapes import AdtDecl

__all__ = [
    "WeightSpec",
    "WConst",
    "WTunable",
    "WNamed",
    "Pattern",
    "PCtor",
    "PNatLit",
    "PSucc",
    "PWild",
    "SVar",
    "SNatLit",
    "SBoolLit",
    "STuple",
    "SGet",
    "SCtor",
    "SCall",
    "SLet",
    "SMatch",
    "SIf",
    "SFlip",
    "SFreq",
    "SBacktrack",
    "SFreqDep",
    "SLogic",
    "SNot",
    "SEq",
    "SNatOp",
    "SNatBits",
    "SNil",
    "SCons",
    "SFirstN",
    "SurfaceExpr",
    "FuncDef",
    "Program",
]


# --- flip / freq weights ---------------------------------------------------


@dataclass(frozen=True, slots=True)
class WConst:
    value: float


@dataclass(frozen=True, slots=True)
class WTunable:
    pass


@dataclass(frozen=True, slots=True)
class WNamed:
    name: str


WeightSpec = Union[WConst, WTunable, WNamed]


# --- patterns ----------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class PCtor:
    ctor: str
    binders: tuple  # variable names or "_"


@dataclass(frozen=True, slots=True)
class PNatLit:
    value: int


@dataclass(frozen=True, slots=True)
class PSucc:
    binder: str


@dataclass(frozen=True, slots=True)
class PWild:
    pass


Pattern = Union[PCtor, PNatLit, PSucc, PWild]


# --- expressions -------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Node:
    nid: int = field(repr=False)
    pos: tuple = field(repr=False)  # (line, col)

    @property
    def site(self) -> str:
        return f"{self.pos[0]}:{self.pos[1]}"


@dataclass(frozen=True, slots=True)
class SVar(Node):
    name: str


@dataclass(frozen=True, slots=True)
class SNatLit(Node):
    value: int


@dataclass(frozen=True, slots=True)
class SBoolLit(Node):
    value: bool


@dataclass(frozen=True, slots=True)
class STuple(Node):
    items: tuple


@dataclass(frozen=True, slots=True)
class SGet(Node):
    tup: "SurfaceExpr"
    index: int


@dataclass(frozen=True, slots=True)
class SCtor(Node):
    ctor: str
    args: tuple


@dataclass(frozen=True, slots=True)
class SCall(Node):
    func: str
    args: tuple


@dataclass(frozen=True, slots=True)
class SLet(Node):
    bindings: tuple  # of (name, expr)
    body: "SurfaceExpr"


@dataclass(frozen=True, slots=True)
class SMatch(Node):
    scrutinee: "SurfaceExpr"
    arms: tuple  # of (Pattern, expr)


@dataclass(frozen=True, slots=True)
class SIf(Node):
    guard: "SurfaceExpr"
    then: "SurfaceExpr"
    orelse: "SurfaceExpr"


@dataclass(frozen=True, slots=True)
class SFlip(Node):
    weight: WeightSpec


@dataclass(frozen=True, slots=True)
class SFreq(Node):
    branches: tuple  # of (WeightSpec, expr)


@dataclass(frozen=True, slots=True)
class SBacktrack(Node):
    branches: tuple  # of (WeightSpec, expr)


@dataclass(frozen=True, slots=True)
class SFreqDep(Node):
    dep: "SurfaceExpr"
    options: tuple


@dataclass(frozen=True, slots=True)
class SLogic(Node):
    op: str  # "and" | "or" | "xor"
    args: tuple


@dataclass(frozen=True, slots=True)
class SNot(Node):
    inner: "SurfaceExpr"


@dataclass(frozen=True, slots=True)
class SEq(Node):
    left: "SurfaceExpr"
    right: "SurfaceExpr"


@dataclass(frozen=True, slots=True)
class SNatOp(Node):
    op: str  # "+" | "-" | "max" | "min" | "<" | "<="
    left: "SurfaceExpr"
    right: "SurfaceExpr"


@dataclass(frozen=True, slots=True)
class SNatBits(Node):
    bits: tuple  # little-endian boolean expressions


@dataclass(frozen=True, slots=True)
class SNil(Node):
    pass


@dataclass(frozen=True, slots=True)
class SCons(Node):
    head: "SurfaceExpr"
    tail: "SurfaceExpr"


@dataclass(frozen=True, slots=True)
class SFirstN(Node):
    count: "SurfaceExpr"
    lst: "SurfaceExpr"


SurfaceExpr = Union[
    SVar, SNatLit, SBoolLit, STuple, SGet, SCtor, SCall, SLet, SMatch, SIf,
    SFlip, SFreq, SBacktrack, SFreqDep, SLogic, SNot, SEq, SNatOp, SNatBits,
    SNil, SCons, SFirstN,
]


@dataclass(frozen=True, slots=True)
class FuncDef:
    name: str
    params: tuple
    body: SurfaceExpr


@dataclass
class Program:
    adts: dict  # name -> AdtDecl, declaration order
    funcs: dict  # name -> FuncDef
    main: Optional[SurfaceExpr]
    ctor_types: dict  # ctor name -> type name
    source_name: str = "<program>"

    def adt_decls(self) -> dict:
        return self.adts

    def require_main(self) -> SurfaceExpr:
        if self.main is None:
            raise ValueError(f"{self.source_name} has no (main ...) entry")
        return self.main


def ctor_index(decl: AdtDecl, ctor: str) -> int:
    for i, (name, _) in enumerate(decl.ctors):
        if name == ctor:
            return i
    raise KeyError(ctor)
