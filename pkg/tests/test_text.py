import math

import pytest
from hypothesis import given, settings

from warpsim.ir import Const, KernelError, KernelProgram
from warpsim.models import MODELS, model_body
from warpsim.text import dump_expr, dump_kernel, parse_kernel
from warpsim.wlp import wrap_tlp, wrap_wlp

from .programs import programs


@pytest.mark.parametrize("model", MODELS)
def test_model_kernels_round_trip(model):
    body = model_body(model)
    for prog in (body, wrap_wlp(body), wrap_tlp(body)):
        assert parse_kernel(dump_kernel(prog)) == prog


@given(programs())
@settings(max_examples=60, deadline=None)
def test_random_programs_round_trip(prog):
    text = dump_kernel(prog)
    assert parse_kernel(text) == prog
    assert dump_kernel(parse_kernel(text)) == text


def test_float_atoms_keep_their_bits():
    for v in (0.1, -0.0, 1e-300, 2.0**60, math.inf, -math.inf, 3, -12):
        text = f"(kernel k)\n(local a f64)\n(assign a {dump_expr(Const(v))})\n"
        got = parse_kernel(text).body[0].value.value
        assert type(got) is type(v)
        assert math.copysign(1, got) == math.copysign(1, v) and got == v
    assert dump_expr(Const(math.nan)) == "#nan"


def test_grammar_document_example_parses():
    text = """
    (kernel count_up)   ; comment
    (param n scalar)
    (param out array)
    (local i i64)
    (assign i 0)
    (while (lt i n))
      (if (eq (mod i 2) 0))
        (store out i 1.0)
      (else)
        (store out i (rng))
      (end)
      (assign i (add i 1))
    (end)
    """
    prog = parse_kernel(text)
    assert prog.name == "count_up"
    assert len(prog.body) == 2
    assert prog.body[1].body[0].orelse


@pytest.mark.parametrize("text, message", [
    ("(local a f64)", "must start"),
    ("(kernel k)\n(if 1)\n", "never closed"),
    ("(kernel k)\n(end)", "without an open block"),
    ("(kernel k)\n(else)", "without a matching"),
    ("(kernel k)\n(local a f64)\n(assign a (pow 1 2))", "bad expression"),
    ("(kernel k)\n(local a f64)\n(assign a 1) (assign a 2)", "exactly one form"),
    ("(kernel k)\n(local a f64)\n(assign a (add 1 2)", "missing"),
    ("(kernel k)\n(frobnicate)", "unknown form"),
    ("(kernel k)\n(assign b 1)", "undeclared"),
    ("(kernel k)\n(local a f64)\n(assign a 1x)", "bad atom"),
])
def test_parse_errors(text, message):
    with pytest.raises(KernelError, match=message):
        parse_kernel(text)


def test_dump_is_indented_and_newline_terminated():
    text = dump_kernel(model_body("walk"))
    assert text.endswith(")\n")
    assert "\n  (assign u (rng))\n" in text
    assert isinstance(parse_kernel(text), KernelProgram)
