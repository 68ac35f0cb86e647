from collections import defaultdict

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from warpsim.ir import (
    Assign, Binary, Const, GlobalLoad, GlobalStore, Halt, If, KernelError, KernelProgram,
    LaneFault, LaunchConfig, Local, Param, RngDraw, Special, Var, While, count_draws,
    own_expressions,
)
from warpsim.lockstep import GridExecutor, WarpState, execute_warp_step, run_warp
from warpsim.reference import run_reference
from warpsim.rng import RngState, random_spacing

from .programs import SLOTS, programs

TX = Special("threadIdx.x")


def seeds_for(cfg, seed=9):
    return random_spacing(RngState.from_seed(seed), cfg.num_threads)


def memory_for(cfg):
    return {"out": np.zeros(cfg.num_threads * SLOTS)}


def run_steppers(prog, cfg, seeds, memory, args=None):
    records = {}
    states = {}
    for w in range(cfg.num_warps):
        ws = WarpState(prog, cfg, w, memory, seeds, args)
        records[w] = run_warp(ws)
        states[w] = ws
    return records, states


def grid_by_warp(trace):
    out = defaultdict(list)
    for w, kind, n, div, lanes, _stmt in trace:
        out[w].append((kind, n, div, lanes))
    return out


def simple(body, locals_=(), params=(Param("out", "array"),)):
    return KernelProgram("t", params, tuple(locals_), tuple(body))


def one_warp(n=32):
    return LaunchConfig((n, 1, 1), (1, 1))


# -- worked examples -------------------------------------------------------------

def test_uniform_if_issues_only_taken_branch():
    prog = simple([If(Const(1), (GlobalStore("out", TX, Const(1.0)),),
                      (GlobalStore("out", TX, Const(2.0)),))])
    cfg = one_warp()
    mem = memory_for(cfg)
    recs = run_warp(WarpState(prog, cfg, 0, mem))
    assert [r.kind for r in recs] == ["if", "store"]
    assert not any(r.divergent for r in recs)
    assert all(r.active_lanes == 32 for r in recs)
    assert (mem["out"][:32] == 1.0).all()


def test_half_split_serializes_both_bodies_with_one_event():
    then = (GlobalStore("out", TX, Const(1.0)), Assign("a", Const(1.0)),
            Assign("a", Const(2.0)))
    orelse = (GlobalStore("out", TX, Const(2.0)), Assign("a", Const(3.0)))
    prog = simple([If(Binary("lt", TX, Const(16)), then, orelse), Assign("a", TX)],
                  [Local("a")])
    cfg = one_warp()
    mem = memory_for(cfg)
    recs = run_warp(WarpState(prog, cfg, 0, mem))
    # branch + then (3) + else (2), then the reconverged statement
    assert len(recs) == 1 + 3 + 2 + 1
    assert [r.active_lanes for r in recs] == [32, 16, 16, 16, 16, 16, 32]
    assert [r.divergent for r in recs] == [True] + [False] * 6
    assert recs[1].lanes == tuple(range(16))
    assert recs[4].lanes == tuple(range(16, 32))
    assert list(mem["out"][:32]) == [1.0] * 16 + [2.0] * 16


@pytest.mark.parametrize("cond", [Const(1), Const(0), Binary("lt", RngDraw(), Const(0.5)),
                                  Binary("eq", TX, Const(5))])
def test_single_lane_masks_never_diverge(cond):
    # every possible one-lane mask of a 32-lane warp
    for lane in range(32):
        prog = simple([If(Binary("ne", TX, Const(lane)), (Halt(),)),
                       If(cond, (Assign("a", Const(1.0)),),
                          (Assign("a", Const(2.0)), GlobalStore("out", TX, Var("a")))),
                       While(Binary("lt", Var("a"), Const(4.0)),
                             (Assign("a", Binary("add", Var("a"), RngDraw())),))],
                      [Local("a")])
        cfg = one_warp()
        seeds = seeds_for(cfg)
        recs = run_warp(WarpState(prog, cfg, 0, memory_for(cfg), seeds))
        assert not any(r.divergent for r in recs)
        assert all(r.lanes == (lane,) for r in recs[2:])


def test_while_keeps_going_until_no_lane_continues():
    # lane i runs i % 4 iterations
    prog = simple([Assign("k", Const(0)),
                   While(Binary("lt", Var("k"), Binary("mod", TX, Const(4))),
                         (Assign("k", Binary("add", Var("k"), Const(1))),)),
                   GlobalStore("out", TX, Var("k"))], [Local("k", "i64")])
    cfg = one_warp()
    mem = memory_for(cfg)
    recs = run_warp(WarpState(prog, cfg, 0, mem))
    whiles = [r for r in recs if r.kind == "while"]
    assert [r.active_lanes for r in whiles] == [32, 24, 16, 8]
    # the last test is uniform: every remaining lane exits together
    assert [r.divergent for r in whiles] == [True, True, True, False]
    assert recs[-1].active_lanes == 32
    assert list(mem["out"][:8]) == [0, 1, 2, 3, 0, 1, 2, 3]


def test_nesting_depth_limit():
    def nested(depth):
        body = (Assign("a", Const(1.0)),)
        for _ in range(depth):
            body = (If(Const(1), body),)
        return simple(body, [Local("a")])

    cfg = one_warp(4)
    run_warp(WarpState(nested(32), cfg, 0, memory_for(cfg)))
    GridExecutor(nested(32), cfg, memory_for(cfg)).run()
    with pytest.raises(KernelError, match="overflow"):
        run_warp(WarpState(nested(33), cfg, 0, memory_for(cfg)))
    with pytest.raises(KernelError, match="overflow"):
        GridExecutor(nested(33), cfg, memory_for(cfg)).run()
    with pytest.raises(KernelError, match="overflow"):
        run_warp(WarpState(nested(3), cfg, 0, memory_for(cfg), max_depth=2))


@pytest.mark.parametrize("stmt, lane", [
    (Assign("a", Binary("div", Const(1.0), Binary("sub", TX, Const(3)))), 3),
    (Assign("a", Binary("mod", Const(1), Binary("sub", TX, Const(2)))), 2),
    (Assign("a", Binary("add", Const(0.0), Special("warpSize"))), None),
    (GlobalStore("out", Binary("add", TX, Const(1000)), Const(1.0)), 0),
    (GlobalStore("out", Binary("add", TX, Const(0.5)), Const(1.0)), 0),
    (Assign("a", Binary("add", Const(0.0), Binary("div", Const(1.0), Const(0)))), 0),
])
def test_faults_name_the_first_bad_lane(stmt, lane):
    prog = simple([stmt], [Local("a")])
    cfg = one_warp(8)
    if lane is None:
        GridExecutor(prog, cfg, memory_for(cfg)).run()
        return
    for run in (lambda: GridExecutor(prog, cfg, memory_for(cfg)).run(),
                lambda: run_warp(WarpState(prog, cfg, 0, memory_for(cfg))),
                lambda: run_reference(prog, cfg, memory_for(cfg))):
        with pytest.raises(LaneFault) as info:
            run()
        assert info.value.lane == lane


def test_ln_of_non_positive_and_missing_stream_fault():
    cfg = one_warp(4)
    prog = simple([Assign("a", Binary("add", Const(0.0), RngDraw()))], [Local("a")])
    with pytest.raises(LaneFault, match="stream"):
        GridExecutor(prog, cfg, memory_for(cfg), {0: RngState(2, 8, 16)}).run()
    from warpsim.ir import Unary
    prog = simple([Assign("a", Unary("ln", Binary("sub", TX, Const(2))))], [Local("a")])
    with pytest.raises(LaneFault, match="log") as info:
        GridExecutor(prog, cfg, memory_for(cfg)).run()
    assert info.value.lane == 0


def test_missing_scalar_argument_is_an_error():
    prog = simple([], params=(Param("n"),))
    with pytest.raises(KernelError, match="missing"):
        GridExecutor(prog, one_warp(), {}).run()


def test_warp_state_rejects_foreign_program_or_memory():
    prog = simple([Assign("a", Const(1.0))], [Local("a")])
    cfg = one_warp()
    mem = memory_for(cfg)
    ws = WarpState(prog, cfg, 0, mem)
    with pytest.raises(KernelError):
        execute_warp_step(ws, simple([], [Local("a")]), mem)
    with pytest.raises(KernelError):
        execute_warp_step(ws, prog, memory_for(cfg))
    assert execute_warp_step(ws, prog, mem).kind == "assign"
    assert execute_warp_step(ws) is None
    assert ws.finished


# -- properties over random programs ---------------------------------------------

launches = st.one_of(
    st.tuples(st.integers(1, 70), st.integers(1, 3)).map(
        lambda t: LaunchConfig((t[0], 1, 1), (t[1], 1))),
    st.tuples(st.integers(1, 8), st.integers(1, 5), st.integers(1, 2)).map(
        lambda t: LaunchConfig((t[0], t[1], 1), (t[2], 2))),
)

prop = settings(max_examples=60, deadline=None,
                suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])


def _outcome(fn):
    try:
        return fn(), None
    except LaneFault as exc:
        return None, exc


@given(programs(), launches)
@prop
def test_grid_stepper_and_reference_agree(prog, cfg):
    seeds = seeds_for(cfg)
    m_grid, m_step, m_ref = memory_for(cfg), memory_for(cfg), memory_for(cfg)
    grid, e1 = _outcome(lambda: GridExecutor(prog, cfg, m_grid, seeds, trace=True).run())
    step, e2 = _outcome(lambda: run_steppers(prog, cfg, seeds, m_step))
    ref, e3 = _outcome(lambda: run_reference(prog, cfg, m_ref, seeds))
    assert (e1 is None) == (e2 is None) == (e3 is None)
    if e1 is not None:
        return
    np.testing.assert_array_equal(m_grid["out"], m_ref["out"])
    np.testing.assert_array_equal(m_step["out"], m_ref["out"])
    records, states = step
    np.testing.assert_array_equal(grid.draws, ref.draws)
    by_warp = grid_by_warp(grid.trace)
    for w, recs in records.items():
        assert by_warp.get(w, []) == [(r.kind, r.active_lanes, r.divergent, r.lanes)
                                      for r in recs]
        assert grid.divergence[w] == sum(r.divergent for r in recs)
        assert grid.loads[w] == sum(r.kind == "load" for r in recs)
        assert grid.stores[w] == sum(r.kind == "store" for r in recs)
        np.testing.assert_array_equal(states[w].lanes.rng.draws, grid.draws[states[w].gids])


@given(programs(), launches)
@prop
def test_masks_nest_and_reconverge(prog, cfg):
    seeds = seeds_for(cfg)
    mem = memory_for(cfg)
    for w in range(cfg.num_warps):
        ws = WarpState(prog, cfg, w, mem, seeds)
        entry = ~ws.halted
        original = {}
        retired = set()
        while True:
            try:
                rec = execute_warp_step(ws)
            except LaneFault:
                return
            if rec is None:
                break
            assert not set(rec.lanes) & retired, "a retired lane re-entered a mask"
            if rec.kind == "halt":
                retired |= set(rec.lanes)
            stack = ws.mask_stack
            for below, above in zip(stack, stack[1:]):
                assert not (above & ~below).any()
            for frame in ws.frames:
                assert not (frame.mask & ~entry).any()
                key = id(frame)
                if type(frame).__name__ == "_BodyFrame":
                    # a body's mask is fixed until it completes (only halts remove lanes)
                    original.setdefault(key, (frame, frame.mask.copy()))
                    assert (original[key][1] == frame.mask).all()


@given(programs(), launches)
@prop
def test_inactive_lanes_untouched_and_draws_match_trace(prog, cfg):
    seeds = seeds_for(cfg)
    mem = memory_for(cfg)
    for w in range(cfg.num_warps):
        ws = WarpState(prog, cfg, w, mem, seeds)
        expected = defaultdict(int)
        pos = {int(g): i for i, g in enumerate(ws.gids)}
        while True:
            before = {k: v.copy() for k, v in ws.lanes.regs.items()}
            try:
                rec = execute_warp_step(ws)
            except LaneFault:
                return
            if rec is None:
                break
            idle = np.ones(ws.lanes.n, dtype=bool)
            idle[[pos[g] for g in rec.lanes]] = False
            for name, old in before.items():
                np.testing.assert_array_equal(ws.lanes.regs[name][idle], old[idle])
            n = sum(count_draws(e) for e in own_expressions(rec.statement))
            for g in rec.lanes:
                expected[g] += n
        assert list(ws.lanes.rng.draws) == [expected[int(g)] for g in ws.gids]


@given(programs(), launches)
@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
def test_execution_is_deterministic(prog, cfg):
    seeds = seeds_for(cfg)
    runs = []
    for _ in range(2):
        mem = memory_for(cfg)
        out = _outcome(lambda: run_steppers(prog, cfg, seeds, mem)[0])
        runs.append((out[0], mem["out"].tobytes(), out[1] is None))
    assert runs[0] == runs[1]


def test_loads_read_own_earlier_stores():
    prog = simple([GlobalStore("out", TX, Binary("mul", TX, Const(2.0))),
                   GlobalLoad("a", "out", TX),
                   GlobalStore("out", Binary("add", TX, Const(32)), Var("a"))], [Local("a")])
    cfg = one_warp()
    mem = {"out": np.zeros(64)}
    GridExecutor(prog, cfg, mem).run()
    assert list(mem["out"][32:]) == [2.0 * i for i in range(32)]
