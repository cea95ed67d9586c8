"""Concrete syntax: AST, lexer, recursive-descent parser, pretty-printer.

Grammar sketch (programs live in `.rgo` files):

    program  ::= (classdecl | fndecl)* expr
    classdecl::= "class" C "{" (f ":" type ("," f ":" type)*)? "}"
    fndecl   ::= "fn" g "(" (x ":" type ("," x ":" type)*)? ")" ":" type "{" expr "}"
    type     ::= captype ("|" captype)*            (right-associated)
    captype  ::= cap (C | "Cell" "[" type "]")
    cap      ::= "iso" | "var" | "mut" | "tmp" | "paused" | "imm"
    expr     ::= "let" x "=" binding "in" expr
               | "if" "typetest" "(" use "," type ")" "{" x "=>" expr "}"
                 "else" "{" x "=>" expr "}"
               | use
    binding  ::= "*" lval | lval ":=" use | "var" use
               | "new" cap C "(" (use ("," use)*)? ")"
               | "freeze" use | "merge" use
               | ("enter" | "explore") lval "[" (y "=" use ("," y "=" use)*)? "]"
                 "{" z "=>" expr "}"
               | g "(" (use ("," use)*)? ")"
               | "(" expr ")" | use
    use      ::= x | "drop" x
    lval     ::= x | x "." f
"""
from __future__ import annotations

import string
from dataclasses import dataclass, field

from .model import (Cap, CapType, CellHead, ClassName, FunSig, Type,
                    UnionType, ClassTable, FunctionTable)

Pos = tuple[int, int]  # (line, col), 1-based


class ParseError(Exception):
    def __init__(self, msg: str, pos: Pos) -> None:
        super().__init__(msg)
        self.msg = msg
        self.pos = pos


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Use:
    """A variable occurrence, optionally consuming (drop x)."""

    name: str
    drop: bool = False
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return f"drop {self.name}" if self.drop else self.name


@dataclass(frozen=True)
class LVal:
    """x or x.f."""

    name: str
    fld: str | None = None
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return self.name if self.fld is None else f"{self.name}.{self.fld}"


@dataclass(frozen=True)
class Deref:
    """*x or *x.f."""

    target: LVal
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return f"*{self.target}"


@dataclass(frozen=True)
class Assign:
    """x := use or x.f := use (swap: evaluates to the old content)."""

    target: LVal
    use: Use
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return f"{self.target} := {self.use}"


@dataclass(frozen=True)
class VarAlloc:
    """var use — allocate a fresh var cell holding the used value."""

    use: Use
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return f"var {self.use}"


@dataclass(frozen=True)
class New:
    """new k C(ū)."""

    cap: Cap
    cls: str
    args: tuple[Use, ...]
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        args = ", ".join(str(a) for a in self.args)
        return f"new {self.cap} {self.cls}({args})"


@dataclass(frozen=True)
class Freeze:
    use: Use
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return f"freeze {self.use}"


@dataclass(frozen=True)
class Merge:
    use: Use
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return f"merge {self.use}"


@dataclass(frozen=True)
class Enter:
    """enter lval [y=u, ...] { z => body }; `explore` is the same shape."""

    target: LVal
    captures: tuple[tuple[str, Use], ...]
    binder: str
    body: "Expr"
    explore: bool = False
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        kw = "explore" if self.explore else "enter"
        caps = ", ".join(f"{y} = {u}" for y, u in self.captures)
        return f"{kw} {self.target} [{caps}] {{ {self.binder} => {self.body} }}"


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple[Use, ...]
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        args = ", ".join(str(a) for a in self.args)
        return f"{self.fn}({args})"


@dataclass(frozen=True)
class Let:
    """let x = binding in body."""

    name: str
    binding: "Expr"
    body: "Expr"
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return f"let {self.name} = {self.binding} in {self.body}"


@dataclass(frozen=True)
class TypeTest:
    """if typetest(u, t) { y => e1 } else { y => e2 }."""

    use: Use
    ty: Type
    binder: str
    then: "Expr"
    els: "Expr"
    pos: Pos = (0, 0)

    def __str__(self) -> str:
        return (f"if typetest({self.use}, {self.ty}) "
                f"{{ {self.binder} => {self.then} }} "
                f"else {{ {self.binder} => {self.els} }}")


Expr = (Use | Deref | Assign | VarAlloc | New | Freeze | Merge | Enter
        | Call | Let | TypeTest)


@dataclass
class Program:
    classes: ClassTable
    functions: FunctionTable
    main: Expr
    class_order: list[str] = field(default_factory=list)
    fn_order: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------

KEYWORDS = {"class", "fn", "let", "in", "if", "else", "typetest", "drop",
            "var", "new", "freeze", "merge", "enter", "explore",
            "iso", "mut", "tmp", "paused", "imm", "Cell"}

_PUNCT = ("=>", ":=", "{", "}", "(", ")", "[", "]", ",", ":", "=", "|",
          "*", ".")

_IDENT_START = set(string.ascii_letters + "_")
_IDENT_CONT = set(string.ascii_letters + string.digits + "_$")


@dataclass(frozen=True)
class Token:
    kind: str  # "ident", "kw", or the punctuation itself
    text: str
    pos: Pos


def tokenize(src: str) -> list[Token]:
    toks: list[Token] = []
    line, col, i = 1, 1, 0
    n = len(src)
    while i < n:
        c = src[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if c == "/" and src.startswith("//", i):
            while i < n and src[i] != "\n":
                i += 1
            continue
        if c in _IDENT_START:
            j = i + 1
            while j < n and src[j] in _IDENT_CONT:
                j += 1
            text = src[i:j]
            kind = "kw" if text in KEYWORDS else "ident"
            toks.append(Token(kind, text, (line, col)))
            col += j - i
            i = j
            continue
        for p in _PUNCT:
            if src.startswith(p, i):
                toks.append(Token(p, p, (line, col)))
                i += len(p)
                col += len(p)
                break
        else:
            raise ParseError(f"unexpected character {c!r}", (line, col))
    toks.append(Token("eof", "", (line, col)))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_CAP_WORDS = {k.value: k for k in Cap}


class Parser:
    def __init__(self, src: str) -> None:
        self.toks = tokenize(src)
        self.i = 0

    # -- token helpers ------------------------------------------------------

    def peek(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.peek()
        return tok.kind == kind and (text is None or tok.text == text)

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.peek()
        if not self.at(kind, text):
            want = text or kind
            raise ParseError(f"expected {want!r}, found {tok.text!r}", tok.pos)
        return self.next()

    def ident(self) -> Token:
        return self.expect("ident")

    # -- program ------------------------------------------------------------

    def program(self) -> Program:
        classes = ClassTable()
        functions = FunctionTable()
        prog = Program(classes, functions, Use("_"))
        while True:
            if self.at("kw", "class"):
                self.parse_class(prog)
            elif self.at("kw", "fn"):
                self.parse_fn(prog)
            else:
                break
        prog.main = self.expr()
        self.expect("eof")
        return prog

    def parse_class(self, prog: Program) -> None:
        self.expect("kw", "class")
        name = self.ident()
        self.expect("{")
        fields: list[tuple[str, Type]] = []
        if not self.at("}"):
            while True:
                f = self.ident()
                self.expect(":")
                fields.append((f.text, self.type()))
                if self.at(","):
                    self.next()
                else:
                    break
        self.expect("}")
        try:
            prog.classes.declare(name.text, fields)
        except KeyError as exc:
            raise ParseError(str(exc.args[0]), name.pos) from None
        prog.class_order.append(name.text)

    def parse_fn(self, prog: Program) -> None:
        self.expect("kw", "fn")
        name = self.ident()
        self.expect("(")
        params: list[tuple[str, Type]] = []
        if not self.at(")"):
            while True:
                x = self.ident()
                self.expect(":")
                params.append((x.text, self.type()))
                if self.at(","):
                    self.next()
                else:
                    break
        self.expect(")")
        self.expect(":")
        result = self.type()
        self.expect("{")
        body = self.expr()
        self.expect("}")
        try:
            prog.functions.declare(name.text,
                                   FunSig(tuple(params), result, body))
        except KeyError as exc:
            raise ParseError(str(exc.args[0]), name.pos) from None
        prog.fn_order.append(name.text)

    # -- types ---------------------------------------------------------------

    def type(self) -> Type:
        t = self.captype()
        if self.at("|"):
            self.next()
            return UnionType(t, self.type())
        return t

    def captype(self) -> CapType:
        tok = self.peek()
        if tok.kind == "kw" and tok.text in _CAP_WORDS:
            self.next()
            k = _CAP_WORDS[tok.text]
        else:
            raise ParseError(f"expected capability, found {tok.text!r}",
                             tok.pos)
        if self.at("kw", "Cell"):
            self.next()
            self.expect("[")
            param = self.type()
            self.expect("]")
            return CapType(k, CellHead(param))
        cname = self.ident()
        return CapType(k, ClassName(cname.text))

    # -- expressions ----------------------------------------------------------

    def expr(self) -> Expr:
        if self.at("kw", "let"):
            pos = self.next().pos
            x = self.ident()
            self.expect("=")
            binding = self.binding()
            self.expect("kw", "in")
            body = self.expr()
            return Let(x.text, binding, body, pos)
        if self.at("kw", "if"):
            pos = self.next().pos
            self.expect("kw", "typetest")
            self.expect("(")
            u = self.use()
            self.expect(",")
            t = self.type()
            self.expect(")")
            self.expect("{")
            y = self.ident()
            self.expect("=>")
            then = self.expr()
            self.expect("}")
            self.expect("kw", "else")
            self.expect("{")
            y2 = self.ident()
            if y2.text != y.text:
                raise ParseError("typetest branches must bind the same name",
                                 y2.pos)
            self.expect("=>")
            els = self.expr()
            self.expect("}")
            return TypeTest(u, t, y.text, then, els, pos)
        return self.use()

    def use(self) -> Use:
        if self.at("kw", "drop"):
            pos = self.next().pos
            x = self.ident()
            return Use(x.text, True, pos)
        x = self.ident()
        return Use(x.text, False, x.pos)

    def lval(self) -> LVal:
        x = self.ident()
        if self.at("."):
            self.next()
            f = self.ident()
            return LVal(x.text, f.text, x.pos)
        return LVal(x.text, None, x.pos)

    def binding(self) -> Expr:
        tok = self.peek()
        if tok.kind == "*":
            self.next()
            return Deref(self.lval(), tok.pos)
        if tok.kind == "(":
            self.next()
            if self.at("kw", "let") or self.at("kw", "if"):
                e: Expr = self.expr()
            else:
                e = self.binding()
            self.expect(")")
            return e
        if self.at("kw", "var"):
            self.next()
            return VarAlloc(self.use(), tok.pos)
        if self.at("kw", "new"):
            self.next()
            cap_tok = self.peek()
            if cap_tok.kind != "kw" or cap_tok.text not in _CAP_WORDS:
                raise ParseError(
                    f"expected capability, found {cap_tok.text!r}",
                    cap_tok.pos)
            self.next()
            cls = self.ident()
            self.expect("(")
            args = self.uses_until(")")
            return New(_CAP_WORDS[cap_tok.text], cls.text, args, tok.pos)
        if self.at("kw", "freeze"):
            self.next()
            return Freeze(self.use(), tok.pos)
        if self.at("kw", "merge"):
            self.next()
            return Merge(self.use(), tok.pos)
        if self.at("kw", "enter") or self.at("kw", "explore"):
            explore = tok.text == "explore"
            self.next()
            target = self.lval()
            self.expect("[")
            captures: list[tuple[str, Use]] = []
            if not self.at("]"):
                while True:
                    y = self.ident()
                    self.expect("=")
                    captures.append((y.text, self.use()))
                    if self.at(","):
                        self.next()
                    else:
                        break
            self.expect("]")
            self.expect("{")
            z = self.ident()
            self.expect("=>")
            body = self.expr()
            self.expect("}")
            return Enter(target, tuple(captures), z.text, body, explore,
                         tok.pos)
        if self.at("kw", "drop"):
            return self.use()
        # ident: call, assignment, or bare use
        x = self.ident()
        if self.at("("):
            self.next()
            args = self.uses_until(")")
            return Call(x.text, args, x.pos)
        if self.at("."):
            self.next()
            f = self.ident()
            self.expect(":=")
            return Assign(LVal(x.text, f.text, x.pos), self.use(), x.pos)
        if self.at(":="):
            self.next()
            return Assign(LVal(x.text, None, x.pos), self.use(), x.pos)
        return Use(x.text, False, x.pos)

    def uses_until(self, closer: str) -> tuple[Use, ...]:
        args: list[Use] = []
        if not self.at(closer):
            while True:
                args.append(self.use())
                if self.at(","):
                    self.next()
                else:
                    break
        self.expect(closer)
        return tuple(args)


def parse_program(src: str) -> Program:
    return Parser(src).program()


def parse_expr(src: str) -> Expr:
    p = Parser(src)
    e = p.expr()
    p.expect("eof")
    return e


def parse_type(src: str) -> Type:
    p = Parser(src)
    t = p.type()
    p.expect("eof")
    return t


# ---------------------------------------------------------------------------
# Pretty-printing (round-trips through the parser)
# ---------------------------------------------------------------------------

def pretty_type(t: Type) -> str:
    return str(t)


def pretty_expr(e: Expr) -> str:
    if isinstance(e, Let) and not isinstance(e.binding, (Use, Deref, Assign,
                                                         VarAlloc, New,
                                                         Freeze, Merge,
                                                         Enter, Call)):
        # A nested let/typetest binding needs its parenthesized form.
        return (f"let {e.name} = ({pretty_expr(e.binding)}) "
                f"in {pretty_expr(e.body)}")
    if isinstance(e, Let):
        return (f"let {e.name} = {pretty_expr(e.binding)} "
                f"in {pretty_expr(e.body)}")
    if isinstance(e, Enter):
        kw = "explore" if e.explore else "enter"
        caps = ", ".join(f"{y} = {u}" for y, u in e.captures)
        return (f"{kw} {e.target} [{caps}] "
                f"{{ {e.binder} => {pretty_expr(e.body)} }}")
    if isinstance(e, TypeTest):
        return (f"if typetest({e.use}, {pretty_type(e.ty)}) "
                f"{{ {e.binder} => {pretty_expr(e.then)} }} "
                f"else {{ {e.binder} => {pretty_expr(e.els)} }}")
    return str(e)


def pretty_program(prog: Program) -> str:
    parts: list[str] = []
    for cname in prog.class_order:
        fields = ", ".join(f"{f}: {pretty_type(t)}"
                           for f, t in prog.classes.ftypes(ClassName(cname)))
        parts.append(f"class {cname} {{ {fields} }}" if fields
                     else f"class {cname} {{}}")
    for fname in prog.fn_order:
        sig = prog.functions.lookup(fname)
        params = ", ".join(f"{x}: {pretty_type(t)}" for x, t in sig.params)
        parts.append(f"fn {fname}({params}): {pretty_type(sig.result)} "
                     f"{{ {pretty_expr(sig.body)} }}")
    parts.append(pretty_expr(prog.main))
    return "\n".join(parts) + "\n"
