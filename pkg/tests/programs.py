"""Hypothesis strategies for random, race-free kernel programs.

Every thread writes only to its own slots ``out[g * SLOTS + k]``, where ``g``
is its global linear id, so any execution order gives the same memory.
Loops are counted with a dedicated counter per nesting level and always
terminate.
"""

from hypothesis import strategies as st

from warpsim.ir import (
    Assign, Binary, Const, GlobalLoad, GlobalStore, Halt, If, KernelProgram, Local,
    Param, RngDraw, Special, Unary, Var, While,
)
from warpsim.wlp import linear_id_expr

SLOTS = 4
FLOATS = ("a", "b")
MAX_DEPTH = 3

leaf = st.one_of(
    st.sampled_from([Var("a"), Var("b"), Var("n"), RngDraw(), RngDraw(),
                     Special("threadIdx.x"), Special("blockIdx.x")]),
    st.integers(-3, 3).map(Const),
    st.sampled_from([0.5, -1.25, 2.0, 0.0]).map(Const),
)


def _compound(children):
    return st.one_of(
        st.tuples(st.sampled_from(["add", "sub", "mul", "lt", "gt", "eq", "and", "or"]),
                  children, children).map(lambda t: Binary(*t)),
        children.map(lambda e: Unary("neg", e)),
        children.map(lambda e: Unary("floor", e)),
        # always-positive log argument
        children.map(lambda e: Unary("ln", Binary("add", Const(1.0), Binary("mul", e, e)))),
    )


exprs = st.recursive(leaf, _compound, max_leaves=6)
# small-magnitude integer expressions for the i64 local
int_exprs = st.one_of(
    st.integers(0, 5).map(Const),
    st.just(Unary("floor", Binary("mul", Const(4.0), RngDraw()))),
    st.just(Binary("add", Var("n"), Const(1))),
    st.just(Binary("mod", Special("threadIdx.x"), Const(3))),
)
slots = st.integers(0, SLOTS - 1)


def _slot(k):
    return Binary("add", Binary("mul", Var("g"), Const(SLOTS)), Const(k))


def _simple():
    return st.one_of(
        st.tuples(st.sampled_from(FLOATS), exprs).map(lambda t: Assign(*t)),
        int_exprs.map(lambda e: Assign("n", e)),
        st.tuples(slots, exprs).map(lambda t: GlobalStore("out", _slot(t[0]), t[1])),
        st.tuples(st.sampled_from(FLOATS), slots).map(
            lambda t: GlobalLoad(t[0], "out", _slot(t[1]))),
    )


@st.composite
def bodies(draw, depth=0, allow_halt=True):
    size = draw(st.integers(0 if depth else 1, 4))
    out = []
    for _ in range(size):
        choice = draw(st.integers(0, 9))
        if choice <= 5 or depth >= MAX_DEPTH:
            out.append(draw(_simple()))
        elif choice <= 7:
            then = tuple(draw(bodies(depth + 1, allow_halt)))
            orelse = tuple(draw(bodies(depth + 1, allow_halt)))
            out.append(If(draw(exprs), then, orelse))
        elif choice == 8:
            k = f"k{depth}"
            limit = draw(st.one_of(st.integers(0, 3).map(Const),
                                   st.just(Binary("mod", Special("threadIdx.x"), Const(4)))))
            body = tuple(draw(bodies(depth + 1, allow_halt)))
            out.append(Assign(k, Const(0)))
            cond = Binary("lt", Var(k), limit)
            if draw(st.booleans()):
                # data-dependent early exit for some lanes
                cond = Binary("and", cond, Binary("lt", Var("a"), Const(3.0)))
            out.append(While(cond, body + (Assign(k, Binary("add", Var(k), Const(1))),)))
        elif allow_halt:
            out.append(If(Binary("lt", RngDraw(), Const(0.3)), (Halt(),)))
        else:
            out.append(draw(_simple()))
    return out


@st.composite
def programs(draw, allow_halt=True):
    body = tuple(draw(bodies(0, allow_halt)))
    locals_ = (Local("g", "i64"), Local("a"), Local("b"), Local("n", "i64")) + tuple(
        Local(f"k{d}", "i64") for d in range(MAX_DEPTH + 1))
    return KernelProgram("random", (Param("out", "array"),), locals_,
                         (Assign("g", linear_id_expr()),) + body)
