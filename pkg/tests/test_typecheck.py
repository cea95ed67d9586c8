"""Static semantics: rule-named diagnostics and flow-sensitive properties."""
import pytest
from hypothesis import given, settings, strategies as st

from reggio.command import FreshNames, alpha_rename
from reggio.fuzz import GenConfig, generate
from reggio.model import Cap, CapType, CellHead, ClassName, UnionType
from reggio.syntax import parse_program, parse_type, pretty_program
from reggio.typecheck import (Checker, TypeCheckError, UNDEF, check_program,
                              fresult_keep_iso, merge_contexts)

_PRELUDE = """
class C { }
class D { f: mut C | imm C, g: imm C }
class H { h: iso C }
"""


def _check(src: str):
    return check_program(parse_program(_PRELUDE + src))


def _rule(src: str) -> str:
    with pytest.raises(TypeCheckError) as exc:
        _check(src)
    return exc.value.diagnostic.rule


def _t(src: str):
    return parse_type(src)


def test_main_type_simple():
    assert _check("let x = new mut C() in x") == _t("mut C")


def test_use_keep_rejects_iso_and_var():
    assert _rule("let x = new iso C() in x") == "cmd-ty-use-keep"
    assert _rule("let m = new mut C() in let x = var m in x") \
        == "cmd-ty-use-keep"


def test_use_drop_buries():
    assert _rule("let x = new iso C() in let y = freeze drop x in "
                 "let z = freeze drop x in z") == "cmd-ty-use-drop"


def test_deref_field_rules():
    assert _rule("let x = new iso C() in let y = *x.f in y") \
        == "cmd-ty-deref-field"
    assert _rule("let m = new mut C() in let y = *m.f in y") \
        == "cmd-ty-deref-field"  # C has no field f
    # reading an iso field through a mut receiver is undefined
    assert _rule("let c = new iso C() in let h = new mut H(drop c) in "
                 "let y = *h.h in y") == "cmd-ty-deref-field"


def test_deref_var_rules():
    assert _rule("let m = new mut C() in let y = *m in y") \
        == "cmd-ty-deref-var"
    # iso content cannot be read out of a cell
    assert _rule("let c = new iso C() in let v = var drop c in "
                 "let y = *v in y") == "cmd-ty-deref-var"


def test_assign_rules():
    assert _rule("let i = new iso C() in let m = freeze drop i in "
                 "let x = (m.g := m) in x") == "cmd-ty-assign"
    assert _rule("let m = new mut C() in let n = new mut C() in "
                 "let x = (m := n) in x") == "cmd-ty-assign-var"


def test_assign_field_result_is_old_field_type():
    t = _check("let i = new iso C() in let im = freeze drop i in "
               "let m = new mut C() in let d = new mut D(im, im) in "
               "let old = (d.f := m) in old")
    assert t == _t("mut C | imm C")


def test_assign_var_strong_update():
    t = _check("let m = new mut C() in let v = var m in "
               "let i0 = new iso C() in let im = freeze drop i0 in "
               "let old = (v := im) in old")
    assert t == _t("mut C")


def test_create_var_single_cell():
    prog = parse_program(
        _PRELUDE + "let i = new iso C() in let im = freeze drop i in "
        "let m = new mut C() in "
        "let x = (if typetest(m, imm C) { y => y } else { y => y }) in "
        "let v = var x in drop v")
    # `var u` wraps the whole union in one cell (no distribution)
    checker = Checker(prog.classes, prog.functions)
    t, _ = checker.check_expr({}, prog.main)
    assert t == CapType(Cap.VAR, CellHead(
        UnionType(_t("imm C"), _t("mut C"))))


def test_new_rules():
    assert _rule("let x = new mut Nope() in x") == "cmd-ty-new"
    assert _rule("let x = new paused C() in x") == "cmd-ty-new"
    assert _rule("let x = new mut D() in x") == "cmd-ty-new"  # arity
    assert _rule("let m = new mut C() in let x = new iso H(m) in x") \
        == "cmd-ty-new"  # iso ctor args must be iso/imm
    assert _rule("let m = new mut C() in "
                 "let x = new mut H(m) in x") == "cmd-ty-new"  # subtype


def test_freeze_merge_rules():
    assert _rule("let m = new mut C() in let x = freeze m in x") \
        == "cmd-ty-freeze"
    assert _rule("let m = new mut C() in let x = merge m in x") \
        == "cmd-ty-merge"


def test_enter_field_rules():
    assert _rule("let c = new iso C() in let h = new mut H(drop c) in "
                 "let x = enter h.h [] { z => z } in x") == "cmd-ty-enter"
    # body must return iso/imm
    assert _rule(
        "let c = new iso C() in let h = new mut H(drop c) in "
        "let x = enter h.h [] { z => let m = new mut C() in m } in x") \
        == "cmd-ty-enter"
    # entering a non-iso field
    assert _rule("let i = new iso C() in let im = freeze drop i in "
                 "let d = new mut D(im, im) in "
                 "let x = enter d.g [] { z => z } in x") == "cmd-ty-enter"


def test_enter_var_rules():
    # target must hold an iso
    assert _rule("let m = new mut C() in let v = var m in "
                 "let x = enter v [] { z => z } in x") == "cmd-ty-enter-var"


def test_capture_suspension():
    # mut captures appear paused inside the block
    src = ("let c = new iso C() in let h = new mut H(drop c) in "
           "let m = new mut C() in "
           "let x = enter h.h [k = m] { z => "
           "let w = (z.val := k) in let r = new iso C() in drop r } in x")
    assert _rule(src) == "cmd-ty-assign"  # paused k is not <: mut C


def test_capture_of_var_is_rejected_as_paused_location():
    src = ("let c = new iso C() in let h = new mut H(drop c) in "
           "let m = new mut C() in let v = var m in "
           "let x = enter h.h [k = drop v] { z => "
           "let r = new iso C() in drop r } in x")
    with pytest.raises(TypeCheckError) as exc:
        _check(src)
    assert exc.value.diagnostic.rule == "cmd-ty-enter"
    assert "the v storage location is paused" in exc.value.diagnostic.msg


def test_enter_var_adjacent_assign():
    src = ("let c = new iso C() in let v = var drop c in "
           "let m = new mut C() in "
           "let x = enter v [k = m] { z => "
           "let o = (z := k) in let r = new iso C() in drop r } in x")
    with pytest.raises(TypeCheckError) as exc:
        _check(src)
    d = exc.value.diagnostic
    assert d.rule == "cmd-ty-assign-var-adjacent"
    assert "rejected: k is paused C, not mut C" in d.msg


def test_typetest_rules():
    assert _rule("let m = new mut C() in let x = "
                 "(if typetest(m, mut Nope) { y => y } else { y => y }) "
                 "in x") == "cmd-ty-typetest"


def test_diagnostic_render_format():
    with pytest.raises(TypeCheckError) as exc:
        _check("let x = new iso C() in x")
    line = exc.value.diagnostic.render("file.rgo")
    import re
    assert re.match(r"^file\.rgo:\d+:\d+: error\[[a-z-]+\]: ", line)


def test_fresult_keep_iso():
    prog = parse_program(_PRELUDE + "let x = new mut C() in x")
    cls = prog.classes
    assert fresult_keep_iso(_t("mut H"), "h", cls) == _t("iso C")
    assert fresult_keep_iso(_t("paused H"), "h", cls) == _t("iso C")
    assert fresult_keep_iso(_t("var Cell[iso C]"), "val", cls) \
        == _t("iso C")
    # imm is not an open capability: the iso leaf stays unreadable
    assert fresult_keep_iso(_t("imm H"), "h", cls) == _t("imm C")


def test_merge_contexts_undef_absorbs():
    g = merge_contexts({"x": _t("mut C"), "y": UNDEF},
                       {"x": _t("imm C"), "y": _t("mut C")})
    assert g["x"] == UnionType(_t("mut C"), _t("imm C"))
    assert g["y"] is UNDEF
    with pytest.raises(ValueError):
        merge_contexts({"x": _t("mut C")}, {})


# -- properties over generated programs ----------------------------------------

@pytest.mark.parametrize("seed", range(30))
def test_generated_programs_typecheck(seed):
    prog = generate(GenConfig(seed=seed))
    check_program(prog)  # must not raise


@pytest.mark.parametrize("seed", range(15))
def test_alpha_conversion_preserves_type(seed):
    prog = generate(GenConfig(seed=seed))
    t1 = check_program(prog)
    renamed = alpha_rename(prog.main, FreshNames(), {})
    prog2 = parse_program(pretty_program(prog))
    prog2.main = renamed
    assert check_program(prog2) == t1


@pytest.mark.parametrize("seed", range(15))
def test_weakening_with_unused_binding(seed):
    from reggio.syntax import Let, New, Use
    prog = generate(GenConfig(seed=seed))
    t1 = check_program(prog)
    prog2 = parse_program(pretty_program(prog))
    prog2.main = Let("unused~w", New(Cap.MUT, "A", ()), prog2.main)
    assert check_program(prog2) == t1
