"""``warpsim`` command line: replication sweeps, step detection, confidence intervals."""

from __future__ import annotations

import argparse
import sys
from typing import Dict, List, Optional

from .bench import (
    AnalysisError, SpecError, SweepSpec, curve, detect_steps, format_csv,
    master_streams, plateau_widths, read_csv, run_point, run_sweep,
)
from .device import load_profile
from .ir import KernelError
from .models import MODELS, OUTPUTS, build_kernel, confidence_interval
from .text import dump_kernel
from .wlp import ExecutionMode

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

# flag dest -> (model, parameter field)
_MODEL_FLAGS = {
    "draws": ("pi", "draws"),
    "clients": ("mm1", "clients"),
    "lam": ("mm1", "arrival_rate"),
    "mu": ("mm1", "service_rate"),
    "steps": ("walk", "steps"),
    "chunks": ("walk", "chunks"),
}


class UsageError(Exception):
    pass


def _add_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--seed", type=int, default=1, help="master seed (default 1)")
    p.add_argument("--profile", help="device profile file (default: bundled C2050)")
    p.add_argument("--tlp-block-size", type=int, default=256)
    p.add_argument("--timing", choices=("interval", "cycle"), default="interval")
    g = p.add_argument_group("model parameters")
    g.add_argument("--draws", type=int, help="pi: points per replication")
    g.add_argument("--clients", type=int, help="mm1: clients per replication")
    g.add_argument("--lambda", dest="lam", type=float, help="mm1: arrival rate")
    g.add_argument("--mu", type=float, help="mm1: service rate")
    g.add_argument("--steps", type=int, help="walk: steps per walker")
    g.add_argument("--chunks", type=int, help="walk: number of areas")


def _model_params(ns) -> Dict[str, float]:
    params = {}
    for dest, (model, name) in _MODEL_FLAGS.items():
        value = getattr(ns, dest)
        if value is None:
            continue
        if model != ns.model:
            flag = "--lambda" if dest == "lam" else f"--{dest}"
            raise UsageError(f"{flag} does not apply to model {ns.model}")
        params[name] = value
    return params


def _modes(text: str) -> List[str]:
    modes = [m.strip().lower() for m in text.split(",") if m.strip()]
    for m in modes:
        try:
            ExecutionMode.parse(m)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    return modes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="warpsim",
        description="Simulate replicated stochastic models on a SIMT device model.")
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="run a replication sweep and write CSV")
    _add_model_flags(sw)
    sw.add_argument("--modes", default="wlp", help="comma list of sequential,tlp,wlp")
    sw.add_argument("--r-min", type=int, default=1)
    sw.add_argument("--r-max", type=int, default=1)
    sw.add_argument("--r-step", type=int, default=1)
    sw.add_argument("--out", help="CSV path (default: stdout)")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes")
    sw.add_argument("--dump-kernel", action="store_true",
                    help="print the kernel of each mode at r-min and exit")
    sw.add_argument("--wallclock", action="store_true",
                    help="report host time per point on stderr")

    st = sub.add_parser("steps", help="print step positions of a sweep CSV")
    st.add_argument("csv")
    st.add_argument("--mode", help="only this mode")
    st.add_argument("--model", choices=MODELS, help="only this model")

    ci = sub.add_parser("ci", help="run one configuration and print its confidence interval")
    _add_model_flags(ci)
    ci.add_argument("--mode", default="wlp")
    ci.add_argument("-r", "--replications", type=int, default=30)
    ci.add_argument("--level", type=float, default=0.95)
    return parser


def _spec(ns) -> SweepSpec:
    return SweepSpec(model=ns.model, modes=tuple(_modes(ns.modes)), r_min=ns.r_min,
                     r_max=ns.r_max, r_step=ns.r_step, model_params=_model_params(ns),
                     master_seed=ns.seed, profile_path=ns.profile,
                     tlp_block_size=ns.tlp_block_size, timing=ns.timing)


def cmd_sweep(ns, out, err) -> int:
    spec = _spec(ns)
    if ns.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    if ns.dump_kernel:
        profile = spec.profile()
        for mode in spec.modes:
            plan = build_kernel(spec.model, spec.params_for(spec.r_min), mode, profile,
                                tlp_block_size=spec.tlp_block_size)
            out.write(f"; mode={plan.mode.value} replications={spec.r_min} "
                      f"block={plan.cfg.block_dim} grid={plan.cfg.grid_dim}\n")
            out.write(dump_kernel(plan.program))
        return EXIT_OK

    def report(res):
        if ns.wallclock:
            err.write(f"{res.row.mode} R={res.row.replications}: {res.wallclock:.3f}s\n")

    rows = run_sweep(spec, jobs=ns.jobs, on_point=report)
    text = format_csv(rows)
    if ns.out:
        with open(ns.out, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_OK


def cmd_steps(ns, out, err) -> int:
    rows = read_csv(ns.csv)
    groups = sorted({(r.model, r.mode) for r in rows})
    for model, mode in groups:
        if ns.mode and mode != ExecutionMode.parse(ns.mode).value:
            continue
        if ns.model and model != ns.model:
            continue
        pts = curve(rows, mode, model)
        steps = detect_steps(pts)
        widths = plateau_widths(steps, pts[0][0]) if pts else []
        out.write(f"{model} {mode}: steps={steps} plateaus={widths}\n")
    return EXIT_OK


def cmd_ci(ns, out, err) -> int:
    if ns.replications < 2:
        raise UsageError("a confidence interval needs at least 2 replications")
    spec = SweepSpec(model=ns.model, modes=(ns.mode,), r_min=ns.replications,
                     r_max=ns.replications, model_params=_model_params(ns),
                     master_seed=ns.seed, profile_path=ns.profile,
                     tlp_block_size=ns.tlp_block_size, timing=ns.timing, level=ns.level)
    streams = master_streams(spec.master_seed, ns.replications)
    res = run_point(spec.model, spec.params_for(ns.replications), ns.mode, streams,
                    spec.profile(), spec.tlp_block_size, spec.timing, ns.level)
    small = False
    for name in OUTPUTS[ns.model][1]:
        ci = confidence_interval(res.outputs[name], ns.level)
        small = small or ci.small_sample
        out.write(f"{ns.model}.{name}: mean={ci.mean!r} half_width={ci.half_width!r} "
                  f"ci=[{ci.low!r}, {ci.high!r}] level={ns.level} n={ci.n}\n")
    if small:
        err.write(f"warning: {ns.replications} replications is below 30; "
                  f"the normal approximation may be poor\n")
    return EXIT_OK


def main(argv: Optional[List[str]] = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    handler = {"sweep": cmd_sweep, "steps": cmd_steps, "ci": cmd_ci}[ns.command]
    try:
        return handler(ns, out, err)
    except (UsageError, SpecError) as exc:
        err.write(f"warpsim: usage error: {exc}\n")
        return EXIT_USAGE
    except (KernelError, AnalysisError, OSError, ValueError, RuntimeError) as exc:
        err.write(f"warpsim: error: {exc}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
