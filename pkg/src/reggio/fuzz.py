"""Typed-program generation and the soundness harness.

The generator works forward: it grows a typing context statement by
statement, only emitting forms whose premises hold in the current context,
so every output program passes the checker (verified before returning).
Programs are then executed under full each-step invariant checking; any
Stuck verdict or invariant violation aborts the campaign with a shrunk,
still-well-typed reproducer.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .command import TandemRunner, Verdict
from .model import (Cap, CapType, CellHead, ClassName, ClassTable, FunSig,
                    FunctionTable, Type, UnionType, cap_in, cap_not_in,
                    fresult, leaves, make_cell, make_imm, make_iso, make_mut,
                    subtype, vpa_type)
from .syntax import (Assign, Call, Deref, Enter, Expr, Freeze, Let, LVal,
                     Merge, New, Program, TypeTest, Use, VarAlloc,
                     pretty_program)
from .typecheck import Checker, TypeCheckError, check_program

# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

_DEFAULT_WEIGHTS = {
    "new": 3.0,
    "freeze": 2.0,
    "merge": 1.0,
    "var": 1.5,
    "deref": 1.5,
    "swap": 2.0,
    "swap_var": 1.0,
    "enter": 3.0,
    "enter_var": 2.0,
    "typetest": 1.0,
    "call": 0.05,
}


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    max_depth: int = 8        # statements per block scale
    max_classes: int = 6      # how much of the class menu to use
    max_fields: int = 2       # widest class in the menu
    max_functions: int = 1
    enter_nesting: int = 3
    weights: tuple[tuple[str, float], ...] = tuple(
        sorted(_DEFAULT_WEIGHTS.items()))

    def __post_init__(self) -> None:
        if min(self.max_depth, self.max_classes, self.max_fields,
               self.max_functions + 1, self.enter_nesting) < 1:
            raise ValueError("all bounds must be >= 1")
        if any(w <= 0 for _, w in self.weights):
            raise ValueError("weights must be positive")


# The fixed class menu.  A is the zero-field base; D nests a region (its
# field is iso); E has a mutable field; HA/HD are holders whose iso field
# can be entered.
_MENU: list[tuple[str, list[tuple[str, str]]]] = [
    ("A", []),
    ("B", [("bi", "imm A")]),
    ("D", [("di", "iso A")]),
    ("E", [("em", "mut A | imm A"), ("ei", "imm A")]),
    ("HA", [("h", "iso A")]),
    ("HD", [("h", "iso D")]),
]


def _menu_classes(cfg: GenConfig) -> ClassTable:
    from .syntax import parse_type
    table = ClassTable()
    for name, fields in _MENU[:max(2, cfg.max_classes)]:
        table.declare(name, [(f, parse_type(src)) for f, src in fields])
    return table


_SPIN = "spin"


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

@dataclass
class _Scope:
    stmts: list[tuple[str, Expr]] = field(default_factory=list)
    env: dict[str, Type] = field(default_factory=dict)
    adjacent: set[str] = field(default_factory=set)
    locked: set[str] = field(default_factory=set)
    depth: int = 0  # remaining enter nesting


def _leaf(t: Type) -> Optional[CapType]:
    ls = list(leaves(t))
    return ls[0] if len(ls) == 1 else None


class _GiveUp(Exception):
    """A branch of generation is unsatisfiable; backtrack."""


class _Gen:
    def __init__(self, cfg: GenConfig, seed: int) -> None:
        self.cfg = cfg
        self.rng = random.Random(seed)
        self.classes = _menu_classes(cfg)
        self.class_names = [n for n, _ in _MENU[:max(2, cfg.max_classes)]]
        self.holders = [n for n in self.class_names if n.startswith("H")]
        self.functions = FunctionTable()
        self.fn_order: list[str] = []
        self.counter = 0
        if cfg.max_functions >= 1 and self.rng.random() < 0.3:
            body = Let("sr", Call(_SPIN, ()), Use("sr", True))
            self.functions.declare(
                _SPIN, FunSig((), CapType(Cap.ISO, ClassName("A")), body))
            self.fn_order.append(_SPIN)

    def fresh(self, base: str = "x") -> str:
        self.counter += 1
        return f"{base}{self.counter}"

    # -- helpers --------------------------------------------------------------

    def _emit(self, scope: _Scope, binding: Expr, t: Type,
              base: str = "x") -> str:
        name = self.fresh(base)
        scope.stmts.append((name, binding))
        scope.env[name] = t
        return name

    def _droppable_isos(self, scope: _Scope) -> list[str]:
        return [n for n, t in scope.env.items()
                if cap_in({Cap.ISO}, t)
                and n not in scope.locked and n not in scope.adjacent]

    def _ftype_arg_leaf(self, ftype: Type, ctor: Cap) -> CapType:
        want = ({Cap.ISO, Cap.IMM} if ctor is Cap.ISO
                else {Cap.MUT, Cap.IMM, Cap.ISO})
        cands = [lf for lf in leaves(ftype) if lf.cap in want
                 and isinstance(lf.head, ClassName)]
        if not cands:
            raise _GiveUp
        return self.rng.choice(cands)

    def materialize(self, scope: _Scope, cap: Cap, cls: str,
                    fresh: bool = False) -> Use:
        """Return a use of type `cap cls`, reusing or synthesizing."""
        target = CapType(cap, ClassName(cls))
        if not fresh and self.rng.random() < 0.6:
            cands = [n for n, t in scope.env.items() if t == target]
            if cap is Cap.ISO:
                cands = [n for n in cands if n not in scope.locked
                         and n not in scope.adjacent]
                if cands:
                    n = self.rng.choice(cands)
                    del scope.env[n]
                    return Use(n, True)
            elif cands:
                return Use(self.rng.choice(cands))
        if cap is Cap.IMM:
            inner = self.materialize(scope, Cap.ISO, cls)
            name = self._emit(scope, Freeze(inner),
                              CapType(Cap.IMM, ClassName(cls)), "im")
            return Use(name)
        ctor = cap if cap in (Cap.MUT, Cap.TMP, Cap.ISO) else Cap.MUT
        args = []
        for fname, ftype in self.classes.ftypes(ClassName(cls)):
            lf = self._ftype_arg_leaf(ftype, ctor)
            args.append(self.materialize(scope, lf.cap, lf.head.name))
        name = self._emit(scope, New(ctor, cls, tuple(args)), target, "n")
        if cap is Cap.ISO:
            del scope.env[name]
            return Use(name, True)
        return Use(name)

    def _plain_usable(self, scope: _Scope) -> list[str]:
        return [n for n, t in scope.env.items()
                if cap_not_in({Cap.ISO, Cap.VAR}, t)]

    # -- productions ------------------------------------------------------------

    def p_new(self, scope: _Scope) -> bool:
        cap = self.rng.choice([Cap.MUT, Cap.MUT, Cap.TMP, Cap.ISO])
        cls = self.rng.choice(self.class_names)
        try:
            u = self.materialize(scope, cap, cls, fresh=True)
        except _GiveUp:
            return False
        if u.drop:  # keep iso allocations available for later statements
            scope.env[u.name] = CapType(Cap.ISO, ClassName(cls))
        return True

    def p_freeze(self, scope: _Scope, merge: bool = False) -> bool:
        isos = self._droppable_isos(scope)
        if isos:
            n = self.rng.choice(isos)
            t = scope.env.pop(n)
            u = Use(n, True)
        else:
            cls = self.rng.choice(self.class_names[:3])  # A, B, D
            try:
                u = self.materialize(scope, Cap.ISO, cls, fresh=True)
            except _GiveUp:
                return False
            t = CapType(Cap.ISO, ClassName(cls))
        if merge:
            self._emit(scope, Merge(u), make_mut(t), "mg")
        else:
            self._emit(scope, Freeze(u), make_imm(t), "fz")
        return True

    def p_var(self, scope: _Scope) -> bool:
        isos = self._droppable_isos(scope)
        if isos and self.rng.random() < 0.7:
            n = self.rng.choice(isos)
            t = scope.env.pop(n)
            u = Use(n, True)
        else:
            cands = [(n, t) for n, t in scope.env.items()
                     if cap_in({Cap.MUT, Cap.IMM}, t)]
            if not cands:
                return False
            n, t = self.rng.choice(cands)
            u = Use(n)
        self._emit(scope, VarAlloc(u), CapType(Cap.VAR, CellHead(t)), "v")
        return True

    def p_deref(self, scope: _Scope) -> bool:
        cands: list[tuple[str, Optional[str], Type]] = []
        for n, t in scope.env.items():
            lf = _leaf(t)
            if lf is None:
                continue
            if lf.cap is Cap.VAR:
                r = fresult(t, "val", self.classes)
                if r is not None:
                    cands.append((n, None, r))
                continue
            if lf.cap is Cap.ISO:
                continue
            if isinstance(lf.head, CellHead):
                r = fresult(t, "val", self.classes)
                if r is not None:
                    cands.append((n, "val", r))
                continue
            for fname, _ft in self.classes.ftypes(lf.head):
                r = fresult(t, fname, self.classes)
                if r is not None:
                    cands.append((n, fname, r))
        if not cands:
            return False
        n, f, r = self.rng.choice(cands)
        self._emit(scope, Deref(LVal(n, f)), r, "d")
        return True

    def p_swap(self, scope: _Scope) -> bool:
        cands: list[tuple[str, str, Type]] = []
        for n, t in scope.env.items():
            lf = _leaf(t)
            if lf is None or lf.cap not in (Cap.MUT, Cap.TMP):
                continue
            if isinstance(lf.head, CellHead):
                cands.append((n, "val", lf.head.param))
                continue
            for fname, ftype in self.classes.ftypes(lf.head):
                cands.append((n, fname, ftype))
        self.rng.shuffle(cands)
        for n, f, ftype in cands:
            want = [lf for lf in leaves(ftype)
                    if isinstance(lf.head, ClassName)
                    and lf.cap in (Cap.MUT, Cap.IMM, Cap.ISO)]
            if not want:
                continue
            lf = self.rng.choice(want)
            try:
                u = self.materialize(scope, lf.cap, lf.head.name)
            except _GiveUp:
                continue
            self._emit(scope, Assign(LVal(n, f), u), ftype, "s")
            return True
        return False

    def p_swap_var(self, scope: _Scope) -> bool:
        cands = []
        for n, t in scope.env.items():
            lf = _leaf(t)
            if lf is None or lf.cap is not Cap.VAR:
                continue
            old = fresult(t, "val", self.classes)
            if old is None:
                continue
            cands.append((n, old))
        if not cands:
            return False
        n, old = self.rng.choice(cands)
        cls = self.rng.choice(self.class_names)
        cap = Cap.MUT if n in scope.adjacent else self.rng.choice(
            [Cap.MUT, Cap.IMM])
        try:
            u = self.materialize(scope, cap, cls)
        except _GiveUp:
            return False
        t_u = CapType(cap, ClassName(cls))
        scope.env[n] = make_cell(t_u)
        self._emit(scope, Assign(LVal(n), u), old, "o")
        return True

    def p_typetest(self, scope: _Scope) -> bool:
        cands = [(n, t) for n, t in scope.env.items()
                 if (lf := _leaf(t)) is not None
                 and lf.cap in (Cap.MUT, Cap.TMP, Cap.IMM, Cap.PAUSED)
                 and isinstance(lf.head, ClassName)]
        if not cands:
            return False
        n, t = self.rng.choice(cands)
        lf = _leaf(t)
        if self.rng.random() < 0.5:
            ty: Type = t  # dynamic cast succeeds
        else:
            other = self.rng.choice(
                [c for c in self.class_names if c != lf.head.name])
            ty = CapType(lf.cap, ClassName(other))
        binder = self.fresh("tt")
        result = ty if ty == t else UnionType(ty, t)
        self._emit(scope, TypeTest(Use(n), ty, binder,
                                   Use(binder), Use(binder)), result, "q")
        return True

    def p_call(self, scope: _Scope) -> bool:
        if _SPIN not in self.fn_order:
            return False
        self._emit(scope, Call(_SPIN, ()),
                   CapType(Cap.ISO, ClassName("A")), "c")
        return True

    # -- enters -----------------------------------------------------------------

    def _captures(self, scope: _Scope) -> tuple[list[tuple[str, Use]],
                                                dict[str, Type]]:
        caps: list[tuple[str, Use]] = []
        body_env: dict[str, Type] = {}
        for n in list(scope.env):
            if self.rng.random() > 0.4:
                continue
            t = scope.env[n]
            y = self.fresh("k")
            if cap_in({Cap.ISO}, t):
                if n in scope.locked or n in scope.adjacent:
                    continue
                del scope.env[n]
                caps.append((y, Use(n, True)))
                body_env[y] = t
                continue
            adapted = vpa_type(Cap.PAUSED, t)
            if adapted is None or not cap_not_in({Cap.ISO, Cap.VAR}, t):
                continue
            caps.append((y, Use(n)))
            body_env[y] = adapted
        return caps, body_env

    def _body_result(self, scope: _Scope) -> tuple[Use, Type]:
        imms = [(n, t) for n, t in scope.env.items()
                if cap_in({Cap.IMM}, t)]
        if imms and self.rng.random() < 0.5:
            n, t = self.rng.choice(imms)
            return Use(n), t
        isos = self._droppable_isos(scope)
        if isos and self.rng.random() < 0.5:
            n = self.rng.choice(isos)
            t = scope.env.pop(n)
            return Use(n, True), t
        u = self.materialize(scope, Cap.ISO, "A", fresh=True)
        return u, CapType(Cap.ISO, ClassName("A"))

    def _gen_body(self, scope: _Scope) -> tuple[Expr, Type]:
        for _ in range(self.rng.randint(1, 3 + self.cfg.max_depth // 3)):
            self.step(scope)
        # Consume captured isos inside the block now and then: this is what
        # makes stale-reinstatement and freeze bugs observable.
        for n in self._droppable_isos(scope):
            if self.rng.random() < 0.5:
                t = scope.env.pop(n)
                mk = self.rng.random() < 0.5
                self._emit(scope, Merge(Use(n, True)) if mk
                           else Freeze(Use(n, True)),
                           make_mut(t) if mk else make_imm(t), "u")
        ret, t = self._body_result(scope)
        return _fold(scope.stmts, ret), t

    def p_enter(self, scope: _Scope) -> bool:
        if scope.depth <= 0:
            return False
        holders = [(n, t) for n, t in scope.env.items()
                   if (lf := _leaf(t)) is not None
                   and isinstance(lf.head, ClassName)
                   and lf.head.name in self.holders
                   and lf.cap in (Cap.MUT, Cap.TMP, Cap.PAUSED)]
        if holders and self.rng.random() < 0.5:
            n, t = self.rng.choice(holders)
        else:
            cls = self.rng.choice(self.holders) if self.holders else None
            if cls is None:
                return False
            try:
                u = self.materialize(scope, Cap.MUT, cls, fresh=True)
            except _GiveUp:
                return False
            n, t = u.name, scope.env[u.name]
        t_f = self.classes.ftype(_leaf(t).head, "h")
        caps, body_env = self._captures(scope)
        binder = self.fresh("z")
        t_z = CapType(Cap.TMP, CellHead(make_mut(t_f)))
        body_env[binder] = t_z
        inner = _Scope(env=body_env, locked={binder},
                       depth=scope.depth - 1)
        body, t_body = self._gen_body(inner)
        self._emit(scope, Enter(LVal(n, "h"), tuple(caps), binder, body),
                   t_body, "e")
        return True

    def p_enter_var(self, scope: _Scope) -> bool:
        if scope.depth <= 0:
            return False
        targets = [(n, t) for n, t in scope.env.items()
                   if (lf := _leaf(t)) is not None and lf.cap is Cap.VAR
                   and cap_in({Cap.ISO}, lf.head.param)
                   and _leaf(lf.head.param) is not None]
        if targets and self.rng.random() < 0.5:
            n, t = self.rng.choice(targets)
        else:
            cls = self.rng.choice(["A", "D"])
            try:
                u = self.materialize(scope, Cap.ISO, cls)
            except _GiveUp:
                return False
            t = CapType(Cap.VAR,
                        CellHead(CapType(Cap.ISO, ClassName(cls))))
            n = self._emit(scope, VarAlloc(u), t, "v")
        t_f = _leaf(t).head.param
        caps, body_env = self._captures(scope)
        binder = self.fresh("w")
        body_env[binder] = make_cell(make_mut(t_f))
        inner = _Scope(env=body_env, adjacent={binder},
                       depth=scope.depth - 1)
        body, t_body = self._gen_body(inner)
        # Mirror cmd-ty-enter-var's out-binding for the target cell.
        content: Optional[Type] = None
        for lf in leaves(inner.env[binder]):
            p = lf.head.param
            content = p if content is None else UnionType(content, p)
        scope.env[n] = make_cell(make_iso(content))
        self._emit(scope, Enter(LVal(n), tuple(caps), binder, body),
                   t_body, "e")
        return True

    # -- program ----------------------------------------------------------------

    def step(self, scope: _Scope) -> None:
        names = [n for n, _ in self.cfg.weights]
        weights = [w for _, w in self.cfg.weights]
        table: dict[str, Callable[[_Scope], bool]] = {
            "new": self.p_new,
            "freeze": self.p_freeze,
            "merge": lambda s: self.p_freeze(s, merge=True),
            "var": self.p_var,
            "deref": self.p_deref,
            "swap": self.p_swap,
            "swap_var": self.p_swap_var,
            "enter": self.p_enter,
            "enter_var": self.p_enter_var,
            "typetest": self.p_typetest,
            "call": self.p_call,
        }
        for _ in range(6):
            choice = self.rng.choices(names, weights)[0]
            try:
                if table[choice](scope):
                    return
            except _GiveUp:
                pass
        self.p_new(scope)

    def program(self) -> Program:
        scope = _Scope(depth=self.cfg.enter_nesting)
        if self.cfg.max_depth == 1:
            self.materialize(scope, Cap.MUT, "A", fresh=True)
        else:
            for _ in range(self.rng.randint(3, 4 + self.cfg.max_depth)):
                self.step(scope)
        finals = self._plain_usable(scope)
        if finals:
            ret = Use(self.rng.choice(finals))
        else:
            ret = self.materialize(scope, Cap.MUT, "A")
        main = _fold(scope.stmts, ret)
        return Program(self.classes, self.functions, main,
                       [n for n, _ in _MENU[:max(2, self.cfg.max_classes)]],
                       list(self.fn_order))


def _fold(stmts: list[tuple[str, Expr]], ret: Expr) -> Expr:
    e = ret
    for name, binding in reversed(stmts):
        e = Let(name, binding, e)
    return e


def generate(cfg: GenConfig) -> Program:
    """Generate a well-typed program (verified; retries on the rare miss)."""
    for attempt in range(50):
        gen = _Gen(cfg, seed=cfg.seed * 1_000_003 + attempt)
        try:
            prog = gen.program()
            check_program(prog)
            return prog
        except (TypeCheckError, _GiveUp):
            continue
    raise RuntimeError(f"generation failed for seed {cfg.seed}")


# ---------------------------------------------------------------------------
# Soundness runs
# ---------------------------------------------------------------------------

def soundness_run(prog: Program, budget: int = 10_000,
                  bugs: frozenset[str] = frozenset()
                  ) -> tuple[Verdict, str]:
    runner = TandemRunner(prog, check="each-step", budget=budget, bugs=bugs)
    result = runner.run()
    return result.verdict, result.detail or ""


def _triggers(prog: Program, budget: int, bugs: frozenset[str]) -> bool:
    try:
        check_program(prog)
    except TypeCheckError:
        return False
    verdict, _ = soundness_run(prog, budget, bugs)
    return verdict in (Verdict.STUCK, Verdict.VIOLATION)


# ---------------------------------------------------------------------------
# Shrinking
# ---------------------------------------------------------------------------

def _names_in(e: Expr) -> set[str]:
    """All variable names occurring in e (over-approximates free names)."""
    out: set[str] = set()

    def walk(x) -> None:
        if isinstance(x, Use):
            out.add(x.name)
        elif isinstance(x, LVal):
            out.add(x.name)
        elif isinstance(x, Deref):
            walk(x.target)
        elif isinstance(x, Assign):
            walk(x.target)
            walk(x.use)
        elif isinstance(x, (VarAlloc, Freeze, Merge)):
            walk(x.use)
        elif isinstance(x, New):
            for a in x.args:
                walk(a)
        elif isinstance(x, Call):
            for a in x.args:
                walk(a)
        elif isinstance(x, Enter):
            walk(x.target)
            for _, u in x.captures:
                walk(u)
            walk(x.body)
        elif isinstance(x, Let):
            walk(x.binding)
            walk(x.body)
        elif isinstance(x, TypeTest):
            walk(x.use)
            walk(x.then)
            walk(x.els)

    walk(e)
    return out


def _let_sites(e: Expr) -> list[int]:
    """Preorder indices of Let nodes whose bound name is unused."""
    sites: list[int] = []
    idx = 0

    def walk(x) -> None:
        nonlocal idx
        if isinstance(x, Let):
            here = idx
            idx += 1
            if x.name not in _names_in(x.body):
                sites.append(here)
            walk(x.binding)
            walk(x.body)
        elif isinstance(x, Enter):
            walk(x.body)
        elif isinstance(x, TypeTest):
            walk(x.then)
            walk(x.els)

    walk(e)
    return sites


def _remove_let(e: Expr, target: int) -> Expr:
    idx = 0

    def walk(x):
        nonlocal idx
        if isinstance(x, Let):
            here = idx
            idx += 1
            if here == target:
                return walk(x.body)
            return replace(x, binding=walk(x.binding), body=walk(x.body))
        if isinstance(x, Enter):
            return replace(x, body=walk(x.body))
        if isinstance(x, TypeTest):
            return replace(x, then=walk(x.then), els=walk(x.els))
        return x

    return walk(e)


def _capture_sites(e: Expr) -> list[tuple[int, int]]:
    """(enter-index, capture-position) pairs for unused captures."""
    sites: list[tuple[int, int]] = []
    idx = 0

    def walk(x) -> None:
        nonlocal idx
        if isinstance(x, Enter):
            here = idx
            idx += 1
            used = _names_in(x.body)
            for i, (y, _u) in enumerate(x.captures):
                if y not in used:
                    sites.append((here, i))
            walk(x.body)
        elif isinstance(x, Let):
            walk(x.binding)
            walk(x.body)
        elif isinstance(x, TypeTest):
            walk(x.then)
            walk(x.els)

    walk(e)
    return sites


def _remove_capture(e: Expr, target: tuple[int, int]) -> Expr:
    idx = 0

    def walk(x):
        nonlocal idx
        if isinstance(x, Enter):
            here = idx
            idx += 1
            caps = x.captures
            if here == target[0]:
                caps = tuple(c for i, c in enumerate(caps)
                             if i != target[1])
            return replace(x, captures=caps, body=walk(x.body))
        if isinstance(x, Let):
            return replace(x, binding=walk(x.binding), body=walk(x.body))
        if isinstance(x, TypeTest):
            return replace(x, then=walk(x.then), els=walk(x.els))
        return x

    return walk(e)


def _used_decls(prog: Program) -> tuple[list[str], list[str]]:
    classes: set[str] = set()
    fns: set[str] = set()

    def types_of(t: Type) -> None:
        for lf in leaves(t):
            head = lf.head
            while isinstance(head, CellHead):
                types_of(head.param)
                return
            classes.add(head.name)

    def walk(x) -> None:
        if isinstance(x, New):
            classes.add(x.cls)
            for a in x.args:
                walk(a)
        elif isinstance(x, Call):
            fns.add(x.fn)
        elif isinstance(x, Enter):
            walk(x.body)
        elif isinstance(x, Let):
            walk(x.binding)
            walk(x.body)
        elif isinstance(x, TypeTest):
            types_of(x.ty)
            walk(x.then)
            walk(x.els)
        elif isinstance(x, Assign):
            walk(x.use)
        elif isinstance(x, (VarAlloc, Freeze, Merge)):
            walk(x.use)

    walk(prog.main)
    for fname in prog.fn_order:
        if fname in fns:
            sig = prog.functions.lookup(fname)
            for _, t in sig.params:
                types_of(t)
            types_of(sig.result)
            walk(sig.body)
    # Fields of used classes pull in more classes, transitively.
    changed = True
    while changed:
        changed = False
        for cname in list(classes):
            if cname not in prog.classes:
                continue
            for _f, t in prog.classes.ftypes(ClassName(cname)):
                before = len(classes)
                types_of(t)
                changed = changed or len(classes) != before
    kept_c = [c for c in prog.class_order if c in classes]
    kept_f = [f for f in prog.fn_order if f in fns]
    return kept_c, kept_f


def _rebuild(prog: Program, main: Expr) -> Program:
    kept_c, kept_f = _used_decls(
        Program(prog.classes, prog.functions, main,
                prog.class_order, prog.fn_order))
    table = ClassTable()
    for c in kept_c:
        table.declare(c, list(prog.classes.ftypes(ClassName(c))))
    funcs = FunctionTable()
    for f in kept_f:
        funcs.declare(f, prog.functions.lookup(f))
    return Program(table, funcs, main, kept_c, kept_f)


def shrink(prog: Program,
           predicate: Callable[[Program], bool]) -> Program:
    """Greedy removal of unused lets/captures/declarations while the
    predicate keeps triggering and the program keeps type checking."""
    try:
        check_program(prog)
    except TypeCheckError:
        return prog
    if not predicate(prog):
        return prog
    current = prog
    progress = True
    while progress:
        progress = False
        for site in _let_sites(current.main):
            cand = _rebuild(current, _remove_let(current.main, site))
            try:
                check_program(cand)
            except TypeCheckError:
                continue
            if predicate(cand):
                current = cand
                progress = True
                break
        if progress:
            continue
        for site in _capture_sites(current.main):
            cand = _rebuild(current, _remove_capture(current.main, site))
            try:
                check_program(cand)
            except TypeCheckError:
                continue
            if predicate(cand):
                current = cand
                progress = True
                break
    return _rebuild(current, current.main)


# ---------------------------------------------------------------------------
# Campaign
# ---------------------------------------------------------------------------

@dataclass
class CampaignResult:
    runs: int = 0
    done: int = 0
    failed: int = 0
    budget_outs: int = 0
    abort_seed: Optional[int] = None
    abort_detail: Optional[str] = None
    counterexample: Optional[str] = None

    def summary(self) -> str:
        if self.counterexample is not None:
            return (f"ABORT at seed {self.abort_seed} after {self.runs} "
                    f"runs: {self.abort_detail}")
        return (f"{self.runs} runs: {self.done} done, {self.failed} failed, "
                f"{self.budget_outs} budget, 0 stuck, 0 violations")


def campaign(n: int, cfg: GenConfig, budget: int = 10_000,
             bugs: frozenset[str] = frozenset()) -> CampaignResult:
    result = CampaignResult()
    for i in range(n):
        sub = replace(cfg, seed=cfg.seed + i)
        prog = generate(sub)
        verdict, detail = soundness_run(prog, budget, bugs)
        result.runs += 1
        if verdict is Verdict.DONE:
            result.done += 1
        elif verdict is Verdict.FAILED:
            result.failed += 1
        elif verdict is Verdict.BUDGET:
            result.budget_outs += 1
        else:
            small = shrink(prog, lambda p: _triggers(p, budget, bugs))
            result.abort_seed = sub.seed
            result.abort_detail = f"{verdict.value}: {detail}"
            result.counterexample = pretty_program(small)
            return result
    return result
