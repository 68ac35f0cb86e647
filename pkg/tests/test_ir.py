import math

import pytest
from hypothesis import given, strategies as st

from warpsim.ir import (
    Assign, Binary, BlockCoord, Const, GlobalStore, If, KernelError, KernelProgram,
    LaunchConfig, Local, Param, Special, ThreadCoord, Unary, Var, While, coords_of,
    linear_thread_id,
)
from warpsim.reference import evaluate_expr
from warpsim.rng import RngState, Stream
from warpsim.ir import RngDraw


def test_linear_thread_id_examples():
    assert linear_thread_id(ThreadCoord(), BlockCoord(), LaunchConfig((7, 3, 2), (5, 4))) == 0
    cfg = LaunchConfig((32, 1, 1), (4, 1))
    assert linear_thread_id(ThreadCoord(0, 0, 0), BlockCoord(2, 0), cfg) == 64
    cfg = LaunchConfig((8, 2, 1), (3, 2))
    assert linear_thread_id(ThreadCoord(5, 1, 0), BlockCoord(0, 1), cfg) == 61


def test_linear_thread_id_rejects_out_of_range_coordinates():
    cfg = LaunchConfig((8, 2, 1), (3, 2))
    with pytest.raises(ValueError):
        linear_thread_id(ThreadCoord(8, 0, 0), BlockCoord(0, 0), cfg)
    with pytest.raises(ValueError):
        linear_thread_id(ThreadCoord(0, 0, 0), BlockCoord(0, 2), cfg)


dims = st.tuples(st.integers(1, 6), st.integers(1, 4), st.integers(1, 3))
grids = st.tuples(st.integers(1, 5), st.integers(1, 4))


@given(dims, grids, st.data())
def test_coords_round_trip_and_ids_are_dense(bd, gd, data):
    cfg = LaunchConfig(bd, gd)
    gid = data.draw(st.integers(0, cfg.num_threads - 1))
    t, b = coords_of(gid, cfg)
    assert linear_thread_id(t, b, cfg) == gid


def test_launch_config_invariants():
    with pytest.raises(KernelError):
        LaunchConfig((1025, 1, 1), (1, 1))
    with pytest.raises(KernelError):
        LaunchConfig((0, 1, 1), (1, 1))
    with pytest.raises(KernelError):
        LaunchConfig((32, 1, 1), (1, 1), warp_size=0)
    cfg = LaunchConfig((48, 1, 1), (3, 1))
    assert cfg.warps_per_block == 2
    assert cfg.num_warps == 6
    assert cfg.num_threads == 144


def test_program_validation():
    with pytest.raises(KernelError, match="undeclared"):
        KernelProgram("k", (), (Local("a"),), (Assign("a", Var("b")),))
    with pytest.raises(KernelError, match="undeclared local"):
        KernelProgram("k", (Param("n"),), (), (Assign("n", Const(1)),))
    with pytest.raises(KernelError, match="not an array"):
        KernelProgram("k", (Param("n"),), (), (GlobalStore("n", Const(0), Const(1)),))
    with pytest.raises(KernelError, match="duplicate"):
        KernelProgram("k", (Param("a"),), (Local("a"),), ())
    # nested bodies are checked too
    with pytest.raises(KernelError):
        KernelProgram("k", (), (Local("a"),),
                      (While(Const(0), (If(Const(1), (Assign("a", Var("zz")),)),)),))
    with pytest.raises(KernelError):
        Special("laneId")
    with pytest.raises(KernelError):
        Binary("pow", Const(1), Const(2))
    with pytest.raises(KernelError):
        Local("x", "f32")


def test_evaluate_expr_examples():
    assert evaluate_expr(Const(7)) == 7
    assert evaluate_expr(Special("warpSize")) == 32
    assert evaluate_expr(Unary("ln", Const(math.e))) == pytest.approx(1.0, abs=1e-12)


def test_evaluate_expr_integer_and_float_semantics():
    assert evaluate_expr(Binary("div", Const(-7), Const(2))) == -3
    assert evaluate_expr(Binary("mod", Const(-7), Const(2))) == -1
    assert evaluate_expr(Binary("div", Const(-7.0), Const(2))) == -3.5
    assert evaluate_expr(Binary("lt", Const(1), Const(2.5))) == 1
    assert evaluate_expr(Unary("floor", Const(-0.5))) == -1.0
    assert evaluate_expr(Unary("not", Const(0))) == 1
    assert evaluate_expr(Var("x"), registers={"x": 2.5}) == 2.5


def test_evaluate_expr_faults():
    from warpsim.ir import LaneFault
    with pytest.raises(LaneFault):
        evaluate_expr(Binary("div", Const(1), Const(0)))
    with pytest.raises(LaneFault):
        evaluate_expr(Unary("ln", Const(0.0)))
    with pytest.raises(LaneFault):
        evaluate_expr(RngDraw())


def test_rng_draw_advances_stream_once():
    s = Stream(RngState(2, 8, 16))
    ref = Stream(RngState(2, 8, 16))
    v = evaluate_expr(Binary("add", RngDraw(), RngDraw()), stream=s)
    assert v == ref.uniform() + ref.uniform()
    assert s.state == ref.state


def test_special_registers_of_a_lane():
    cfg = LaunchConfig((8, 2, 1), (3, 2))
    gid = 61  # thread (5,1,0) of block (0,1)
    assert evaluate_expr(Special("threadIdx.x"), cfg, gid) == 5
    assert evaluate_expr(Special("threadIdx.y"), cfg, gid) == 1
    assert evaluate_expr(Special("blockIdx.y"), cfg, gid) == 1
    assert evaluate_expr(Special("gridDim.x"), cfg, gid) == 3
