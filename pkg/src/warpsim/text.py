"""Line-oriented text form of kernel programs.

One form per line; ``;`` starts a comment; indentation is cosmetic::

    (kernel pi)
    (param draws scalar)
    (param out array)
    (local i i64)
    (assign i 0)
    (while (lt i draws))
      (assign i (add i 1))
    (end)
    (store out 0 (rng))

See docs/kernel_text.md for the full grammar.  ``parse_kernel(dump_kernel(p))
== p`` for every valid program.
"""

from __future__ import annotations

import math
import re
from typing import List

from .ir import (
    BINARY_OPS, SPECIAL_REGISTERS, UNARY_OPS, Assign, Binary, Const, GlobalLoad,
    GlobalStore, Halt, If, KernelError, KernelProgram, Local, Param, RngDraw,
    Special, Unary, Var, While,
)

_INT = re.compile(r"^-?\d+$")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_FLOAT_WORDS = {"#inf": math.inf, "#-inf": -math.inf, "#nan": math.nan}


# -- writing ------------------------------------------------------------------

def _atom(value) -> str:
    if isinstance(value, bool):
        raise KernelError("boolean constants are not part of the IR; use 0 or 1")
    if isinstance(value, int):
        return str(value)
    value = float(value)
    if math.isnan(value):
        return "#nan"
    if math.isinf(value):
        return "#inf" if value > 0 else "#-inf"
    return repr(value)


def dump_expr(e) -> str:
    if isinstance(e, Const):
        return _atom(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Special):
        return e.name
    if isinstance(e, RngDraw):
        return "(rng)"
    if isinstance(e, Unary):
        return f"({e.op} {dump_expr(e.arg)})"
    if isinstance(e, Binary):
        return f"({e.op} {dump_expr(e.lhs)} {dump_expr(e.rhs)})"
    raise KernelError(f"not an expression: {e!r}")


def _dump_body(body, depth, out):
    pad = "  " * depth
    for s in body:
        if isinstance(s, Assign):
            out.append(f"{pad}(assign {s.local} {dump_expr(s.value)})")
        elif isinstance(s, GlobalLoad):
            out.append(f"{pad}(load {s.local} {s.array} {dump_expr(s.index)})")
        elif isinstance(s, GlobalStore):
            out.append(f"{pad}(store {s.array} {dump_expr(s.index)} {dump_expr(s.value)})")
        elif isinstance(s, Halt):
            out.append(f"{pad}(halt)")
        elif isinstance(s, If):
            out.append(f"{pad}(if {dump_expr(s.cond)})")
            _dump_body(s.then, depth + 1, out)
            if s.orelse:
                out.append(f"{pad}(else)")
                _dump_body(s.orelse, depth + 1, out)
            out.append(f"{pad}(end)")
        elif isinstance(s, While):
            out.append(f"{pad}(while {dump_expr(s.cond)})")
            _dump_body(s.body, depth + 1, out)
            out.append(f"{pad}(end)")
        else:
            raise KernelError(f"not a statement: {s!r}")


def dump_kernel(program: KernelProgram) -> str:
    out = [f"(kernel {program.name})"]
    out += [f"(param {p.name} {p.kind})" for p in program.params]
    out += [f"(local {loc.name} {loc.dtype})" for loc in program.locals]
    _dump_body(program.body, 0, out)
    return "\n".join(out) + "\n"


# -- reading ------------------------------------------------------------------

def _tokens(line: str) -> List[str]:
    return line.replace("(", " ( ").replace(")", " ) ").split()


def _read(tokens, pos, lineno):
    if pos >= len(tokens):
        raise KernelError(f"line {lineno}: unexpected end of form")
    tok = tokens[pos]
    if tok == ")":
        raise KernelError(f"line {lineno}: unexpected ')'")
    if tok != "(":
        return tok, pos + 1
    items = []
    pos += 1
    while True:
        if pos >= len(tokens):
            raise KernelError(f"line {lineno}: missing ')'")
        if tokens[pos] == ")":
            return items, pos + 1
        item, pos = _read(tokens, pos, lineno)
        items.append(item)


def _expr(form, lineno):
    if isinstance(form, str):
        if _INT.match(form):
            return Const(int(form))
        if form in _FLOAT_WORDS:
            return Const(_FLOAT_WORDS[form])
        if form in SPECIAL_REGISTERS:
            return Special(form)
        if _IDENT.match(form):
            return Var(form)
        try:
            return Const(float(form))
        except ValueError:
            raise KernelError(f"line {lineno}: bad atom {form!r}") from None
    if not form:
        raise KernelError(f"line {lineno}: empty expression")
    head, args = form[0], form[1:]
    if head == "rng" and not args:
        return RngDraw()
    if head in UNARY_OPS and len(args) == 1:
        return Unary(head, _expr(args[0], lineno))
    if head in BINARY_OPS and len(args) == 2:
        return Binary(head, _expr(args[0], lineno), _expr(args[1], lineno))
    raise KernelError(f"line {lineno}: bad expression {head!r} with {len(args)} operands")


def _name(form, lineno, what):
    if not isinstance(form, str) or not _IDENT.match(form):
        raise KernelError(f"line {lineno}: expected {what} name, got {form!r}")
    return form


def parse_kernel(text: str) -> KernelProgram:
    forms = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split(";", 1)[0].strip()
        if not line:
            continue
        toks = _tokens(line)
        form, pos = _read(toks, 0, lineno)
        if pos != len(toks) or not isinstance(form, list) or not form:
            raise KernelError(f"line {lineno}: expected exactly one form")
        forms.append((lineno, form))
    if not forms or forms[0][1][0] != "kernel" or len(forms[0][1]) != 2:
        raise KernelError("a program must start with (kernel NAME)")
    name = _name(forms[0][1][1], forms[0][0], "kernel")

    params, locals_ = [], []
    # stack of (kind, then-list, else-list-or-None, cond, lineno)
    stack = [["root", [], None, None, 0]]
    for lineno, form in forms[1:]:
        head, args = form[0], form[1:]
        cur = stack[-1]
        body = cur[2] if cur[2] is not None else cur[1]
        if head == "param" and len(args) == 2:
            params.append(Param(_name(args[0], lineno, "param"), args[1]))
        elif head == "local" and len(args) == 2:
            locals_.append(Local(_name(args[0], lineno, "local"), args[1]))
        elif head == "assign" and len(args) == 2:
            body.append(Assign(_name(args[0], lineno, "local"), _expr(args[1], lineno)))
        elif head == "load" and len(args) == 3:
            body.append(GlobalLoad(_name(args[0], lineno, "local"),
                                   _name(args[1], lineno, "array"), _expr(args[2], lineno)))
        elif head == "store" and len(args) == 3:
            body.append(GlobalStore(_name(args[0], lineno, "array"),
                                    _expr(args[1], lineno), _expr(args[2], lineno)))
        elif head == "halt" and not args:
            body.append(Halt())
        elif head in ("if", "while") and len(args) == 1:
            stack.append([head, [], None, _expr(args[0], lineno), lineno])
        elif head == "else" and not args:
            if cur[0] != "if" or cur[2] is not None:
                raise KernelError(f"line {lineno}: (else) without a matching (if)")
            cur[2] = []
        elif head == "end" and not args:
            if cur[0] == "root":
                raise KernelError(f"line {lineno}: (end) without an open block")
            stack.pop()
            parent = stack[-1]
            target = parent[2] if parent[2] is not None else parent[1]
            if cur[0] == "if":
                target.append(If(cur[3], tuple(cur[1]), tuple(cur[2] or ())))
            else:
                target.append(While(cur[3], tuple(cur[1])))
        else:
            raise KernelError(f"line {lineno}: unknown form {head!r} with {len(args)} arguments")
    if len(stack) > 1:
        raise KernelError(f"line {stack[-1][4]}: ({stack[-1][0]}) is never closed")
    return KernelProgram(name, tuple(params), tuple(locals_), tuple(stack[0][1]))
