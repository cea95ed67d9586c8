"""Flow-sensitive static semantics.

Typing contexts map variables to a type or UNDEF (buried).  Checking is
syntax-directed; subsumption (cmd-ty-sub) is applied only at demand sites
(argument passing, field writes, body-result checks, branch merges), and
union-typed receivers are handled leafwise, which realizes cmd-ty-split.

Diagnostics carry the name of the violated rule verbatim and print as
``<file>:<line>:<col>: error[<rule-name>]: <message>``.
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import (ALL_CAPS, Cap, CapType, CellHead, ClassName, ClassTable,
                    FunctionTable, OPEN_CAPS, Type, UnionType, cap_in,
                    cap_not_in, fresult, is_open, leaves, make_cell,
                    make_imm, make_iso, make_mut, map_leaves, subtype,
                    type_wf, vpa, vpa_type)
from .syntax import (Assign, Call, Deref, Enter, Expr, Freeze, Let, LVal,
                     Merge, New, Pos, Program, TypeTest, Use, VarAlloc,
                     pretty_type)


class _Undef:
    """Sentinel binding for buried (dropped) variables."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "UNDEF"


UNDEF = _Undef()
Binding = Type | _Undef
Gamma = dict[str, Binding]


@dataclass(frozen=True)
class Diagnostic:
    rule: str
    msg: str
    pos: Pos

    def render(self, path: str) -> str:
        line, col = self.pos
        return f"{path}:{line}:{col}: error[{self.rule}]: {self.msg}"


class TypeCheckError(Exception):
    def __init__(self, diagnostic: Diagnostic) -> None:
        super().__init__(f"{diagnostic.rule}: {diagnostic.msg}")
        self.diagnostic = diagnostic


def _fail(rule: str, msg: str, pos: Pos) -> None:
    raise TypeCheckError(Diagnostic(rule, msg, pos))


def merge_contexts(g1: Gamma, g2: Gamma) -> Gamma:
    """Pointwise (Γ₁|Γ₂): UNDEF absorbs; differing types union."""
    if g1.keys() != g2.keys():
        raise ValueError("context domain mismatch")
    out: Gamma = {}
    for x, b1 in g1.items():
        b2 = g2[x]
        if b1 is UNDEF or b2 is UNDEF:
            out[x] = UNDEF
        elif b1 == b2:
            out[x] = b1
        else:
            out[x] = UnionType(b1, b2)
    return out


def fresult_keep_iso(t: Type, f: str, classes: ClassTable) -> Type | None:
    """Field lookup used by the enter rules: like fresult, but an iso field
    keeps its iso-ness instead of the read table's undefined entry.

    The read table makes open-capability views of iso fields inaccessible
    (non-destructive reads cannot move them); entering consumes the field's
    uniqueness instead, so the enter rules see the iso as iso.
    """
    if isinstance(t, UnionType):
        left = fresult_keep_iso(t.left, f, classes)
        right = fresult_keep_iso(t.right, f, classes)
        if left is None or right is None:
            return None
        return UnionType(left, right)
    ftype = classes.ftype(t.head, f)
    if ftype is None:
        return None

    def adapt(leaf: CapType) -> CapType | None:
        if leaf.cap is Cap.ISO and is_open(t.cap):
            return leaf
        k = vpa(t.cap, leaf.cap)
        return None if k is None else CapType(k, leaf.head)

    return map_leaves(ftype, adapt)


def rtype(t: Type) -> str:
    return pretty_type(t)


class Checker:
    """Type checker over a fixed class/function table."""

    def __init__(self, classes: ClassTable,
                 functions: FunctionTable) -> None:
        self.classes = classes
        self.functions = functions

    # -- uses -----------------------------------------------------------------

    def lookup(self, gamma: Gamma, name: str, rule: str, pos: Pos) -> Type:
        if name not in gamma:
            _fail(rule, f"unbound variable {name}", pos)
        b = gamma[name]
        if b is UNDEF:
            _fail(rule, f"variable {name} is undefined here "
                        "(consumed by an earlier drop)", pos)
        return b

    def check_use(self, gamma: Gamma, u: Use) -> tuple[Type, Gamma]:
        if u.drop:
            t = self.lookup(gamma, u.name, "cmd-ty-use-drop", u.pos)
            g2 = dict(gamma)
            g2[u.name] = UNDEF
            return t, g2
        t = self.lookup(gamma, u.name, "cmd-ty-use-keep", u.pos)
        if not cap_not_in({Cap.ISO, Cap.VAR}, t):
            _fail("cmd-ty-use-keep",
                  f"plain read of {u.name}: {rtype(t)} would duplicate an "
                  f"iso/var; use `drop {u.name}`", u.pos)
        return t, gamma

    def check_uses(self, gamma: Gamma,
                   uses: tuple[Use, ...]) -> tuple[list[Type], Gamma]:
        ts: list[Type] = []
        for u in uses:
            t, gamma = self.check_use(gamma, u)
            ts.append(t)
        return ts, gamma

    # -- expressions -----------------------------------------------------------

    def check_expr(self, gamma: Gamma, e: Expr,
                   adjacent: frozenset[str] = frozenset()
                   ) -> tuple[Type, Gamma]:
        if isinstance(e, Use):
            return self.check_use(gamma, e)
        if isinstance(e, Deref):
            return self._check_deref(gamma, e)
        if isinstance(e, Assign):
            return self._check_assign(gamma, e, adjacent)
        if isinstance(e, VarAlloc):
            return self._check_var_alloc(gamma, e)
        if isinstance(e, New):
            return self._check_new(gamma, e)
        if isinstance(e, Freeze):
            t, g2 = self.check_use(gamma, e.use)
            if not cap_in({Cap.ISO}, t):
                _fail("cmd-ty-freeze",
                      f"freeze demands an iso value, got {rtype(t)}", e.pos)
            return make_imm(t), g2
        if isinstance(e, Merge):
            t, g2 = self.check_use(gamma, e.use)
            if not cap_in({Cap.ISO}, t):
                _fail("cmd-ty-merge",
                      f"merge demands an iso value, got {rtype(t)}", e.pos)
            return make_mut(t), g2
        if isinstance(e, Call):
            return self._check_call(gamma, e)
        if isinstance(e, Enter):
            return self._check_enter(gamma, e)
        if isinstance(e, Let):
            t_b, g1 = self.check_expr(gamma, e.binding, adjacent)
            shadow = e.name in g1
            saved = g1.get(e.name)
            g1 = dict(g1)
            g1[e.name] = t_b
            inner_adj = adjacent - {e.name}
            t, g2 = self.check_expr(g1, e.body, inner_adj)
            g2 = dict(g2)
            if shadow:
                g2[e.name] = saved
            else:
                del g2[e.name]
            return t, g2
        if isinstance(e, TypeTest):
            return self._check_typetest(gamma, e, adjacent)
        raise AssertionError(f"unhandled expression {e!r}")

    def _check_deref(self, gamma: Gamma, e: Deref) -> tuple[Type, Gamma]:
        x, f = e.target.name, e.target.fld
        if f is None:
            t_x = self.lookup(gamma, x, "cmd-ty-deref-var", e.pos)
            if not cap_in({Cap.VAR}, t_x):
                _fail("cmd-ty-deref-var",
                      f"*{x} requires a var binding, got {rtype(t_x)}", e.pos)
            t = fresult(t_x, "val", self.classes)
            if t is None:
                _fail("cmd-ty-deref-var",
                      f"viewpoint adaptation of *{x} is undefined "
                      f"(content of {rtype(t_x)} cannot be read)", e.pos)
            return t, gamma
        t_x = self.lookup(gamma, x, "cmd-ty-deref-field", e.pos)
        if not cap_not_in({Cap.ISO}, t_x):
            _fail("cmd-ty-deref-field",
                  f"receiver {x}: {rtype(t_x)} may not be iso", e.pos)
        t = fresult(t_x, f, self.classes)
        if t is None:
            _fail("cmd-ty-deref-field",
                  f"*{x}.{f} is undefined through {rtype(t_x)} "
                  "(missing field or inaccessible viewpoint)", e.pos)
        return t, gamma

    def _check_assign(self, gamma: Gamma, e: Assign,
                      adjacent: frozenset[str]) -> tuple[Type, Gamma]:
        x, f = e.target.name, e.target.fld
        t_u, g2 = self.check_use(gamma, e.use)
        if not cap_not_in({Cap.VAR}, t_u):
            _fail("cmd-ty-assign",
                  f"a var binding cannot be stored ({rtype(t_u)})", e.pos)
        if f is not None:
            t_x = self.lookup(g2, x, "cmd-ty-assign", e.pos)
            if not cap_in({Cap.MUT, Cap.TMP}, t_x):
                _fail("cmd-ty-assign",
                      f"field update needs a mut/tmp receiver, "
                      f"{x} is {rtype(t_x)}", e.pos)
            old: Type | None = None
            for leaf in leaves(t_x):
                ftype = self.classes.ftype(leaf.head, f)
                if ftype is None:
                    _fail("cmd-ty-assign",
                          f"{leaf.head} has no field {f}", e.pos)
                if not subtype(t_u, ftype):
                    _fail("cmd-ty-assign",
                          f"{rtype(t_u)} is not a subtype of field type "
                          f"{rtype(ftype)}", e.pos)
                old = ftype if old is None else UnionType(old, ftype)
            return old, g2
        # Strong update of a var cell.
        t_x = self.lookup(g2, x, "cmd-ty-assign-var", e.pos)
        if not cap_in({Cap.VAR}, t_x):
            _fail("cmd-ty-assign-var",
                  f"{x} := requires a var binding, got {rtype(t_x)}", e.pos)
        if x in adjacent and not cap_in({Cap.MUT}, t_u):
            _fail("cmd-ty-assign-var-adjacent",
                  f"rejected: {e.use} is {rtype(t_u)}, not "
                  f"{rtype(map_leaves(t_u, lambda l: CapType(Cap.MUT, l.head)))}"
                  " — the bridge cell of an entered region must hold a mut",
                  e.pos)
        t_f = fresult(t_x, "val", self.classes)
        if t_f is None:
            _fail("cmd-ty-assign-var",
                  f"the old content of {x}: {rtype(t_x)} cannot be "
                  "read out (viewpoint adaptation undefined)", e.pos)
        g3 = dict(g2)
        g3[x] = make_cell(t_u)
        return t_f, g3

    def _check_var_alloc(self, gamma: Gamma,
                         e: VarAlloc) -> tuple[Type, Gamma]:
        t_u, g2 = self.check_use(gamma, e.use)
        if not cap_not_in({Cap.VAR}, t_u):
            _fail("cmd-ty-create-var",
                  f"a var binding cannot be stored in a cell "
                  f"({rtype(t_u)})", e.pos)
        return CapType(Cap.VAR, CellHead(t_u)), g2

    def _check_new(self, gamma: Gamma, e: New) -> tuple[Type, Gamma]:
        if e.cls not in self.classes:
            _fail("cmd-ty-new", f"unknown class {e.cls}", e.pos)
        if e.cap not in (Cap.MUT, Cap.TMP, Cap.ISO):
            _fail("cmd-ty-new",
                  f"new requires mut, tmp, or iso, got {e.cap}", e.pos)
        ftypes = self.classes.ftypes(ClassName(e.cls))
        if len(ftypes) != len(e.args):
            _fail("cmd-ty-new",
                  f"{e.cls} has {len(ftypes)} fields, got "
                  f"{len(e.args)} arguments", e.pos)
        for (fname, ftype), arg in zip(ftypes, e.args):
            t_a, gamma = self.check_use(gamma, arg)
            if not subtype(t_a, ftype):
                _fail("cmd-ty-new",
                      f"argument for {e.cls}.{fname}: {rtype(t_a)} is not "
                      f"a subtype of {rtype(ftype)}", arg.pos)
            if e.cap is Cap.ISO and not cap_in({Cap.ISO, Cap.IMM}, t_a):
                _fail("cmd-ty-new",
                      f"iso constructor arguments must be iso or imm, "
                      f"{fname} gets {rtype(t_a)}", arg.pos)
        return CapType(e.cap, ClassName(e.cls)), gamma

    def _check_call(self, gamma: Gamma, e: Call) -> tuple[Type, Gamma]:
        if e.fn not in self.functions:
            _fail("cmd-ty-call", f"unknown function {e.fn}", e.pos)
        sig = self.functions.lookup(e.fn)
        if len(sig.params) != len(e.args):
            _fail("cmd-ty-call",
                  f"{e.fn} takes {len(sig.params)} arguments, got "
                  f"{len(e.args)}", e.pos)
        for (pname, ptype), arg in zip(sig.params, e.args):
            t_a, gamma = self.check_use(gamma, arg)
            if not subtype(t_a, ptype):
                _fail("cmd-ty-call",
                      f"argument {pname}: {rtype(t_a)} is not a subtype "
                      f"of {rtype(ptype)}", arg.pos)
        return sig.result, gamma

    def _capture_context(self, gamma: Gamma, e: Enter,
                         rule: str) -> tuple[Gamma, Gamma]:
        """Thread capture uses; build the suspended body context."""
        seen: set[str] = set()
        body_ctx: Gamma = {}
        for y, u in e.captures:
            if y in seen or y == e.binder:
                _fail(rule, f"duplicate capture name {y}", u.pos)
            seen.add(y)
            t_i, gamma = self.check_use(gamma, u)
            if cap_in({Cap.ISO}, t_i):
                body_ctx[y] = t_i
                continue
            adapted = vpa_type(Cap.PAUSED, t_i)
            if adapted is None:
                if any(leaf.cap is Cap.VAR for leaf in leaves(t_i)):
                    _fail(rule,
                          f"the {u.name} storage location is paused inside "
                          "the block and cannot be captured", u.pos)
                _fail(rule,
                      f"capture {y}: {rtype(t_i)} cannot be suspended "
                      "(viewpoint adaptation undefined)", u.pos)
            body_ctx[y] = adapted
        return gamma, body_ctx

    def _check_enter(self, gamma: Gamma, e: Enter) -> tuple[Type, Gamma]:
        if e.explore:
            from .command import desugar_explore
            return self.check_expr(gamma, desugar_explore(e))
        if e.target.fld is not None:
            return self._check_enter_field(gamma, e)
        return self._check_enter_var(gamma, e)

    def _check_enter_field(self, gamma: Gamma,
                           e: Enter) -> tuple[Type, Gamma]:
        gamma, body_ctx = self._capture_context(gamma, e, "cmd-ty-enter")
        x, f = e.target.name, e.target.fld
        t_x = self.lookup(gamma, x, "cmd-ty-enter", e.pos)
        if not cap_in(OPEN_CAPS, t_x):
            _fail("cmd-ty-enter",
                  f"enter target {x}: {rtype(t_x)} must have an open "
                  "capability (mut, tmp, var, or paused)", e.pos)
        t_f = fresult_keep_iso(t_x, f, self.classes)
        if t_f is None:
            _fail("cmd-ty-enter",
                  f"{x}.{f} is undefined through {rtype(t_x)}", e.pos)
        if not cap_in({Cap.ISO}, t_f):
            _fail("cmd-ty-enter",
                  f"field capability must be iso, {x}.{f} is "
                  f"{rtype(t_f)}", e.pos)
        t_z = CapType(Cap.TMP, CellHead(make_mut(t_f)))
        body_ctx[e.binder] = t_z
        t_body, g_out = self.check_expr(body_ctx, e.body)
        if not cap_in({Cap.ISO, Cap.IMM}, t_body):
            _fail("cmd-ty-enter",
                  f"the block may only return iso's and imm's, got "
                  f"{rtype(t_body)}", e.pos)
        if g_out.get(e.binder) != t_z:
            _fail("cmd-ty-enter",
                  f"the binding of {e.binder} must be unchanged at the "
                  "end of the block", e.pos)
        return t_body, gamma

    def _check_enter_var(self, gamma: Gamma,
                         e: Enter) -> tuple[Type, Gamma]:
        gamma, body_ctx = self._capture_context(gamma, e, "cmd-ty-enter-var")
        x = e.target.name
        t_x = self.lookup(gamma, x, "cmd-ty-enter-var", e.pos)
        if not cap_in({Cap.VAR}, t_x):
            _fail("cmd-ty-enter-var",
                  f"enter target {x}: {rtype(t_x)} must be a var binding",
                  e.pos)
        t_f = fresult_keep_iso(t_x, "val", self.classes)
        if t_f is None:
            _fail("cmd-ty-enter-var",
                  f"content of {x}: {rtype(t_x)} is undefined", e.pos)
        if not cap_in({Cap.ISO}, t_f):
            _fail("cmd-ty-enter-var",
                  f"cell content capability must be iso, {x} holds "
                  f"{rtype(t_f)}", e.pos)
        t_z = make_cell(make_mut(t_f))
        body_ctx[e.binder] = t_z
        t_body, g_out = self.check_expr(body_ctx, e.body,
                                        adjacent=frozenset({e.binder}))
        if not cap_in({Cap.ISO, Cap.IMM}, t_body):
            _fail("cmd-ty-enter-var",
                  f"the block may only return iso's and imm's, got "
                  f"{rtype(t_body)}", e.pos)
        t_z_out = g_out.get(e.binder)
        if t_z_out is UNDEF or t_z_out is None:
            _fail("cmd-ty-enter-var",
                  f"the ref cell {e.binder} must remain bound at the end "
                  "of the block", e.pos)
        new_params = self._cell_contents(t_z_out, e)
        if not cap_in({Cap.MUT}, new_params):
            _fail("cmd-ty-enter-var",
                  f"the final content of {e.binder} must be mut, got "
                  f"{rtype(new_params)}", e.pos)
        g2 = dict(gamma)
        g2[x] = make_cell(make_iso(new_params))
        return t_body, g2

    def _cell_contents(self, t: Type, e: Enter) -> Type:
        contents: Type | None = None
        for leaf in leaves(t):
            if leaf.cap is not Cap.VAR or not isinstance(leaf.head,
                                                         CellHead):
                _fail("cmd-ty-enter-var",
                      f"the ref cell {e.binder} must stay a var Cell, "
                      f"got {rtype(t)}", e.pos)
            p = leaf.head.param
            contents = p if contents is None else UnionType(contents, p)
        return contents

    def _check_typetest(self, gamma: Gamma, e: TypeTest,
                        adjacent: frozenset[str]) -> tuple[Type, Gamma]:
        if not type_wf(e.ty, self.classes):
            _fail("cmd-ty-typetest",
                  f"tested type {rtype(e.ty)} names an unknown class",
                  e.pos)
        t_u, g0 = self.check_use(gamma, e.use)
        shadow = e.binder in g0
        saved = g0.get(e.binder)
        inner_adj = adjacent - {e.binder}

        def branch(bind_t: Type, body: Expr) -> tuple[Type, Gamma]:
            g = dict(g0)
            g[e.binder] = bind_t
            t, g_out = self.check_expr(g, body, inner_adj)
            g_out = dict(g_out)
            if shadow:
                g_out[e.binder] = saved
            else:
                del g_out[e.binder]
            return t, g_out

        t1, g1 = branch(e.ty, e.then)
        t2, g2 = branch(t_u, e.els)
        merged = merge_contexts(g1, g2)
        result = t1 if t1 == t2 else UnionType(t1, t2)
        return result, merged

    # -- dynamic expressions ----------------------------------------------------

    def check_dyn(self, stack: list[Gamma], de) -> tuple[Type | None, Gamma]:
        """Type a dynamic expression under a context stack (top = last).

        Returns (result type, evolved bottom context); Failure types under
        anything and yields (None, bottom unchanged).
        """
        from .command import Entered, FAILURE
        if de is FAILURE:
            return None, stack[0]
        if isinstance(de, Let) and isinstance(de.binding, Entered):
            ent: Entered = de.binding
            if len(stack) < 2:
                _fail("cmd-dyn-ty-entered",
                      "entered block without a pushed context", de.pos)
            bottom, upper = stack[0], stack[1:]
            t_x = bottom.get(ent.target.name)
            if t_x is None or t_x is UNDEF:
                _fail("cmd-dyn-ty-entered",
                      f"enter target {ent.target.name} unbound below",
                      de.pos)
            if not cap_in(OPEN_CAPS, t_x):
                _fail("cmd-dyn-ty-entered",
                      f"enter target must be open, got {rtype(t_x)}", de.pos)
            fld = ent.target.fld or "val"
            t_f = fresult_keep_iso(t_x, fld, self.classes)
            if t_f is None:
                _fail("cmd-dyn-ty-entered",
                      f"{ent.target} undefined through {rtype(t_x)}", de.pos)
            t_body, g1_out = self.check_dyn(upper, ent.body)
            if t_body is None:  # nested Failure
                return None, bottom
            if not cap_in({Cap.ISO, Cap.IMM}, t_body):
                _fail("cmd-dyn-ty-entered",
                      f"entered body must return iso/imm, got "
                      f"{rtype(t_body)}", de.pos)
            t_w = g1_out.get(ent.bridge)
            if t_w is None or t_w is UNDEF:
                _fail("cmd-dyn-ty-entered",
                      f"bridge cell {ent.bridge} unbound", de.pos)
            if not all(leaf.cap in (Cap.TMP, Cap.VAR)
                       and isinstance(leaf.head, CellHead)
                       for leaf in leaves(t_w)):
                _fail("cmd-dyn-ty-entered",
                      f"bridge cell must be a tmp/var Cell, got "
                      f"{rtype(t_w)}", de.pos)
            t_new = fresult(t_w, "val", self.classes)
            if t_new is None or not cap_in({Cap.MUT}, t_new):
                _fail("cmd-dyn-ty-entered",
                      "bridge cell content must be mut at exit", de.pos)
            g0 = dict(bottom)
            if ent.target.fld is None:
                g0[ent.target.name] = make_cell(make_iso(t_new))
            shadow = de.name in g0
            saved = g0.get(de.name)
            g0[de.name] = t_body
            t, g_out = self.check_expr(g0, de.body)
            g_out = dict(g_out)
            if shadow:
                g_out[de.name] = saved
            else:
                del g_out[de.name]
            return t, g_out
        if isinstance(de, Let):
            # A nested dynamic redex can only live in the binding.
            from .command import contains_dyn
            if contains_dyn(de.binding):
                raise AssertionError("dynamic redex below a static let")
        if len(stack) != 1:
            _fail("cmd-dyn-ty-expr",
                  f"static expression under a {len(stack)}-deep stack",
                  getattr(de, "pos", (0, 0)))
        return self.check_expr(stack[0], de)


# ---------------------------------------------------------------------------
# Whole-program checking
# ---------------------------------------------------------------------------

def check_program(prog: Program) -> Type:
    """Check declarations and the main expression; returns main's type."""
    checker = Checker(prog.classes, prog.functions)
    for cname in prog.class_order:
        for f, ftype in prog.classes.ftypes(ClassName(cname)):
            if not type_wf(ftype, prog.classes):
                _fail("cmd-ty-new",
                      f"field {cname}.{f} names an unknown class", (0, 0))
    for fname in prog.fn_order:
        sig = prog.functions.lookup(fname)
        gamma: Gamma = {}
        for pname, ptype in sig.params:
            if not type_wf(ptype, prog.classes):
                _fail("cmd-ty-call",
                      f"parameter {fname}({pname}) names an unknown class",
                      (0, 0))
            gamma[pname] = ptype
        if not type_wf(sig.result, prog.classes):
            _fail("cmd-ty-call",
                  f"result type of {fname} names an unknown class", (0, 0))
        t_body, _ = checker.check_expr(gamma, sig.body)
        if not subtype(t_body, sig.result):
            _fail("cmd-ty-sub",
                  f"body of {fname}: {rtype(t_body)} is not a subtype of "
                  f"the declared result {rtype(sig.result)}", (0, 0))
    t_main, _ = checker.check_expr({}, prog.main)
    return t_main
