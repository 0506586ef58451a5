"""S-expression parser for generator files.

A program is a sequence of top-level forms::

    (type Name (Ctor field ...) ...)     field: bool | nat | (nat W) | TypeName
    (define (fname arg ...) body)
    (main expr)

Comments run from ``;`` to end of line.  Constructor and type names start
with an uppercase letter, function and variable names with a lowercase
letter; application is resolved to a constructor or a call accordingly.
Unknown forms are rejected with the offending line and column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from ..shapes import AdtDecl
from . import ast as A

__all__ = ["ParseError", "parse_program", "parse_value", "DEFAULT_NAT_WIDTH"]

DEFAULT_NAT_WIDTH = 4

FORMS = {
    "type", "define", "main", "match", "if", "let", "flip", "freq",
    "backtrack", "freqdep", "tuple", "get", "and", "or", "not", "xor",
    "=", "+", "-", "max", "min", "<", "<=", "natbits", "nil", "cons",
    "firstn", "true", "false", "nat", "bool", "S", "_",
}


class ParseError(SyntaxError):
    def __init__(self, message: str, pos: tuple, source_name: str = "<program>"):
        line, col = pos
        super().__init__(f"{source_name}:{line}:{col}: {message}")
        self.pos = pos


@dataclass(frozen=True, slots=True)
class _Atom:
    text: str
    pos: tuple


@dataclass(frozen=True, slots=True)
class _List:
    items: tuple
    pos: tuple


_SExpr = Union[_Atom, _List]


def _tokenize(text: str, source_name: str):
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
        elif ch in " \t\r":
            col += 1
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            yield (ch, (line, col))
            col += 1
            i += 1
        else:
            start = i
            start_pos = (line, col)
            while i < n and text[i] not in " \t\r\n();":
                i += 1
                col += 1
            yield (text[start:i], start_pos)
    yield (None, (line, col))


def _read_all(text: str, source_name: str) -> list:
    stack: list = []
    top: list = []
    positions: list = []
    for tok, pos in _tokenize(text, source_name):
        if tok is None:
            if stack:
                raise ParseError("unclosed '('", positions[-1], source_name)
            return top
        if tok == "(":
            stack.append(top)
            positions.append(pos)
            top = []
        elif tok == ")":
            if not stack:
                raise ParseError("unmatched ')'", pos, source_name)
            lst = _List(tuple(top), positions.pop())
            top = stack.pop()
            top.append(lst)
        else:
            top.append(_Atom(tok, pos))
    return top


def _is_int(s: str) -> bool:
    return s.isdigit() or (s.startswith("-") and s[1:].isdigit())


def _is_number(s: str) -> bool:
    if _is_int(s):
        return True
    try:
        float(s)
        return True
    except ValueError:
        return False


class _Parser:
    def __init__(self, text: str, source_name: str):
        self.source_name = source_name
        self.forms = _read_all(text, source_name)
        self.adts: dict = {}
        self.funcs: dict = {}
        self.func_names: set = set()
        self.ctor_types: dict = {}
        self.main: Optional[A.SurfaceExpr] = None
        self._next_id = 0

    def err(self, msg: str, pos: tuple):
        raise ParseError(msg, pos, self.source_name)

    def nid(self) -> int:
        self._next_id += 1
        return self._next_id

    # -- declarations --------------------------------------------------------

    def run(self) -> A.Program:
        for form in self.forms:
            if not isinstance(form, _List) or not form.items:
                self.err("expected a top-level form", form.pos)
            head = form.items[0]
            if not isinstance(head, _Atom):
                self.err("expected a form name", form.pos)
            if head.text == "type":
                self._decl_type(form)
            elif head.text == "define":
                self._decl_func_name(form)
            elif head.text == "main":
                pass
            else:
                self.err(f"unknown top-level form {head.text!r}", head.pos)
        for form in self.forms:
            head = form.items[0]
            if head.text == "define":
                self._parse_define(form)
            elif head.text == "main":
                if len(form.items) != 2:
                    self.err("(main expr) takes one expression", form.pos)
                if self.main is not None:
                    self.err("duplicate (main ...) entry", form.pos)
                self.main = self.expr(form.items[1], ())
        return A.Program(
            adts=self.adts,
            funcs=self.funcs,
            main=self.main,
            ctor_types=self.ctor_types,
            source_name=self.source_name,
        )

    def _decl_type(self, form: _List):
        if len(form.items) < 3:
            self.err("(type Name ctor ...) needs at least one constructor", form.pos)
        name_atom = form.items[1]
        if not isinstance(name_atom, _Atom) or not name_atom.text[0].isupper():
            self.err("type names must start uppercase", form.pos)
        name = name_atom.text
        if name in self.adts:
            self.err(f"duplicate type {name}", name_atom.pos)
        ctors = []
        for citem in form.items[2:]:
            if not isinstance(citem, _List) or not citem.items:
                self.err("constructor must be a list: (Ctor field ...)", form.pos)
            chead = citem.items[0]
            if not isinstance(chead, _Atom) or not chead.text[0].isupper():
                self.err("constructor names must start uppercase", citem.pos)
            cname = chead.text
            if cname in self.ctor_types:
                self.err(f"constructor {cname} already declared", chead.pos)
            fields = tuple(self._field(f) for f in citem.items[1:])
            self.ctor_types[cname] = name
            ctors.append((cname, fields))
        self.adts[name] = AdtDecl(name, tuple(ctors))

    def _field(self, item: _SExpr):
        if isinstance(item, _Atom):
            if item.text == "bool":
                return "bool"
            if item.text == "nat":
                return ("nat", DEFAULT_NAT_WIDTH)
            if item.text[0].isupper():
                return item.text
            self.err(f"bad field type {item.text!r}", item.pos)
        if (
            len(item.items) == 2
            and isinstance(item.items[0], _Atom)
            and item.items[0].text == "nat"
            and isinstance(item.items[1], _Atom)
            and _is_int(item.items[1].text)
        ):
            width = int(item.items[1].text)
            if not 1 <= width <= 62:
                self.err("nat width must be in 1..62", item.pos)
            return ("nat", width)
        self.err("bad field type", item.pos)

    def _decl_func_name(self, form: _List):
        if len(form.items) != 3 or not isinstance(form.items[1], _List):
            self.err("(define (f args ...) body)", form.pos)
        sig = form.items[1]
        if not sig.items or not isinstance(sig.items[0], _Atom):
            self.err("function signature needs a name", sig.pos)
        fname = sig.items[0].text
        if not fname[0].islower():
            self.err("function names must start lowercase", sig.pos)
        if fname in FORMS:
            self.err(f"{fname!r} is a reserved form name", sig.pos)
        if fname in self.func_names:
            self.err(f"duplicate function {fname}", sig.pos)
        self.func_names.add(fname)

    def _parse_define(self, form: _List):
        sig = form.items[1]
        fname = sig.items[0].text
        params = []
        for p in sig.items[1:]:
            if not isinstance(p, _Atom) or not p.text[0].islower():
                self.err("parameters must be lowercase names", sig.pos)
            params.append(p.text)
        body = self.expr(form.items[2], tuple(params))
        self.funcs[fname] = A.FuncDef(fname, tuple(params), body)

    # -- expressions -----------------------------------------------------------

    def weight(self, item: _SExpr) -> A.WeightSpec:
        if isinstance(item, _Atom):
            if item.text == "?":
                return A.WTunable()
            if _is_number(item.text):
                v = float(item.text)
                if v < 0:
                    self.err("weights must be non-negative", item.pos)
                return A.WConst(v)
            if item.text[0].islower():
                return A.WNamed(item.text)
        self.err("weight must be a number, '?', or a lowercase name", _pos(item))

    def pattern(self, item: _SExpr):
        if isinstance(item, _Atom):
            if item.text == "_":
                return A.PWild()
            if _is_int(item.text):
                return A.PNatLit(int(item.text))
            self.err(f"bad pattern {item.text!r}", item.pos)
        items = item.items
        if not items or not isinstance(items[0], _Atom):
            self.err("bad pattern", item.pos)
        head = items[0].text
        if head == "S":
            if len(items) != 2 or not isinstance(items[1], _Atom):
                self.err("(S var) pattern takes one binder", item.pos)
            return A.PSucc(items[1].text)
        if _is_int(head):
            if len(items) != 1:
                self.err("literal pattern takes no arguments", item.pos)
            return A.PNatLit(int(head))
        if head[0].isupper():
            if head not in self.ctor_types:
                self.err(f"unknown constructor {head!r} in pattern", items[0].pos)
            binders = []
            for b in items[1:]:
                if not isinstance(b, _Atom) or not (b.text == "_" or b.text[0].islower()):
                    self.err("pattern binders must be lowercase names or _", item.pos)
                binders.append(b.text)
            return A.PCtor(head, tuple(binders))
        self.err(f"bad pattern head {head!r}", item.pos)

    def expr(self, item: _SExpr, scope: tuple) -> A.SurfaceExpr:
        if isinstance(item, _Atom):
            t = item.text
            if _is_int(t):
                v = int(t)
                if v < 0:
                    self.err("nat literals are non-negative", item.pos)
                return A.SNatLit(self.nid(), item.pos, v)
            if t == "true":
                return A.SBoolLit(self.nid(), item.pos, True)
            if t == "false":
                return A.SBoolLit(self.nid(), item.pos, False)
            if t[0].isupper():
                self.err(
                    f"constructor {t!r} must be applied in parentheses: ({t} ...)",
                    item.pos,
                )
            return A.SVar(self.nid(), item.pos, t)

        items = item.items
        if not items:
            self.err("empty form", item.pos)
        head = items[0]
        if not isinstance(head, _Atom):
            self.err("form head must be a symbol", item.pos)
        h, pos = head.text, item.pos
        args = items[1:]

        def sub(x):
            return self.expr(x, scope)

        if h == "tuple":
            return A.STuple(self.nid(), pos, tuple(sub(a) for a in args))
        if h == "get":
            if len(args) != 2 or not isinstance(args[1], _Atom) or not _is_int(args[1].text):
                self.err("(get tuple index) takes a literal index", pos)
            return A.SGet(self.nid(), pos, sub(args[0]), int(args[1].text))
        if h == "let":
            if len(args) != 2 or not isinstance(args[0], _List):
                self.err("(let ((x e) ...) body)", pos)
            bindings = []
            for b in args[0].items:
                if (
                    not isinstance(b, _List)
                    or len(b.items) != 2
                    or not isinstance(b.items[0], _Atom)
                    or not b.items[0].text[0].islower()
                ):
                    self.err("let binding must be (name expr)", args[0].pos)
                bindings.append((b.items[0].text, sub(b.items[1])))
            return A.SLet(self.nid(), pos, tuple(bindings), sub(args[1]))
        if h == "match":
            if len(args) < 2:
                self.err("(match e (pattern body) ...)", pos)
            arms = []
            for arm in args[1:]:
                if not isinstance(arm, _List) or len(arm.items) != 2:
                    self.err("match arm must be (pattern body)", _pos(arm))
                arms.append((self.pattern(arm.items[0]), sub(arm.items[1])))
            return A.SMatch(self.nid(), pos, sub(args[0]), tuple(arms))
        if h == "if":
            if len(args) != 3:
                self.err("(if guard then else)", pos)
            return A.SIf(self.nid(), pos, sub(args[0]), sub(args[1]), sub(args[2]))
        if h == "flip":
            if len(args) != 1:
                self.err("(flip weight)", pos)
            w = self.weight(args[0])
            if isinstance(w, A.WConst) and not 0.0 <= w.value <= 1.0:
                self.err("flip constants must lie in [0, 1]", pos)
            return A.SFlip(self.nid(), pos, w)
        if h in ("freq", "backtrack"):
            branches = []
            for b in args:
                if not isinstance(b, _List) or len(b.items) != 2:
                    self.err(f"{h} branch must be (weight expr)", _pos(b) if args else pos)
                branches.append((self.weight(b.items[0]), sub(b.items[1])))
            if not branches:
                self.err(f"{h} needs at least one branch", pos)
            cls = A.SFreq if h == "freq" else A.SBacktrack
            return cls(self.nid(), pos, tuple(branches))
        if h == "freqdep":
            if len(args) < 2:
                self.err("(freqdep dep option ...)", pos)
            return A.SFreqDep(
                self.nid(), pos, sub(args[0]), tuple(sub(a) for a in args[1:])
            )
        if h in ("and", "or"):
            if len(args) < 2:
                self.err(f"({h} ...) takes at least two arguments", pos)
            return A.SLogic(self.nid(), pos, h, tuple(sub(a) for a in args))
        if h == "xor":
            if len(args) != 2:
                self.err("(xor a b)", pos)
            return A.SLogic(self.nid(), pos, "xor", tuple(sub(a) for a in args))
        if h == "not":
            if len(args) != 1:
                self.err("(not e)", pos)
            return A.SNot(self.nid(), pos, sub(args[0]))
        if h == "=":
            if len(args) != 2:
                self.err("(= a b)", pos)
            return A.SEq(self.nid(), pos, sub(args[0]), sub(args[1]))
        if h in ("+", "-", "max", "min", "<", "<="):
            if len(args) != 2:
                self.err(f"({h} a b)", pos)
            return A.SNatOp(self.nid(), pos, h, sub(args[0]), sub(args[1]))
        if h == "natbits":
            if not args:
                self.err("(natbits bit ...) needs at least one bit", pos)
            return A.SNatBits(self.nid(), pos, tuple(sub(a) for a in args))
        if h == "nil":
            if args:
                self.err("(nil) takes no arguments", pos)
            return A.SNil(self.nid(), pos)
        if h == "cons":
            if len(args) != 2:
                self.err("(cons head tail)", pos)
            return A.SCons(self.nid(), pos, sub(args[0]), sub(args[1]))
        if h == "firstn":
            if len(args) != 2:
                self.err("(firstn count list)", pos)
            return A.SFirstN(self.nid(), pos, sub(args[0]), sub(args[1]))
        if h[0].isupper():
            if h not in self.ctor_types:
                self.err(f"unknown constructor {h!r}", head.pos)
            return A.SCtor(self.nid(), pos, h, tuple(sub(a) for a in args))
        if h in self.func_names:
            return A.SCall(self.nid(), pos, h, tuple(sub(a) for a in args))
        self.err(f"unknown form or function {h!r}", head.pos)


def _pos(item: _SExpr) -> tuple:
    return item.pos


def parse_program(text: str, source_name: str = "<program>") -> A.Program:
    return _Parser(text, source_name).run()


def parse_value(text: str):
    """Parse a single value in the canonical rendering of values.render."""
    from ..values import VCtor

    forms = _read_all(text, "<value>")
    if len(forms) != 1:
        raise ParseError("expected a single value", (1, 1), "<value>")

    def conv(item: _SExpr):
        if isinstance(item, _Atom):
            if item.text == "true":
                return True
            if item.text == "false":
                return False
            if _is_int(item.text):
                return int(item.text)
            raise ParseError(f"bad value atom {item.text!r}", item.pos, "<value>")
        if not item.items or not isinstance(item.items[0], _Atom):
            raise ParseError("bad value", item.pos, "<value>")
        head = item.items[0].text
        if head == "tuple":
            return tuple(conv(x) for x in item.items[1:])
        if head[0].isupper():
            return VCtor(head, tuple(conv(x) for x in item.items[1:]))
        raise ParseError(f"bad value head {head!r}", item.pos, "<value>")

    return conv(forms[0])
