"""Command line entry point: ``hystflow {validate,run,sweep,convexity}``.

Exit codes: 0 success, 1 invalid input or failed check, 2 solver failure.
Messages go to standard error; data goes to files under the output
directory (``--out``, else ``$HYSTFLOW_OUT``, else the scenario's
``output.dir``).
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .density import validate_compatibility
from .diagnostics import ReportWriter
from .errors import HystflowError, ScenarioError, StepFailure
from .hysteresis import (
    ExactPrandtlIshlinskii,
    LogRatio,
    check_convexity_inequality,
    derive_beta,
    random_sequences,
)
from .scenario import build_problem, load_scenario, stepper_config
from .stepper import initial_state, load_checkpoint, run, save_checkpoint, tau_sweep

OUT_ENV = "HYSTFLOW_OUT"
log = logging.getLogger("hystflow")


def _fmt(x):
    return f"{x:.17g}"


def _out_dir(args, scenario=None):
    if args.out:
        path = Path(args.out)
    elif os.environ.get(OUT_ENV):
        path = Path(os.environ[OUT_ENV])
    elif scenario is not None:
        path = Path(scenario.output.dir)
    else:
        path = Path("out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_snapshot(path, problem, state):
    coords = problem.mesh.coords
    axes = ["x", "y"][:coords.shape[1]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", *axes, "u", "v", "theta"])
        for i in range(coords.shape[0]):
            w.writerow([i, *map(_fmt, coords[i]), _fmt(state.u[i]), _fmt(state.v[i]),
                        _fmt(state.theta[i])])


def _load(args):
    scenario = load_scenario(args.scenario)
    return scenario, build_problem(scenario)


def _check(problem):
    report = validate_compatibility(problem)
    for line in report.lines():
        print(line, file=sys.stderr)
    return report


def cmd_validate(args):
    _, problem = _load(args)
    report = _check(problem)
    if report.failed:
        print("validate: FAIL", file=sys.stderr)
        return 1
    print("validate: OK", file=sys.stderr)
    return 0


def cmd_run(args):
    scenario, problem = _load(args)
    if _check(problem).failed:
        print("run: initial data incompatible", file=sys.stderr)
        return 1
    config = stepper_config(scenario)
    out = _out_dir(args, scenario)
    snap_every = scenario.output.snapshot_every if args.snapshot_every is None else args.snapshot_every
    ckpt_every = (scenario.output.checkpoint_every if args.checkpoint_every is None
                  else args.checkpoint_every)
    if snap_every:
        (out / "snapshots").mkdir(exist_ok=True)
    if ckpt_every:
        (out / "checkpoints").mkdir(exist_ok=True)
    start = load_checkpoint(args.restart) if args.restart else initial_state(problem)
    if start.u.size != problem.mesh.n_nodes:
        print("run: checkpoint does not match the scenario mesh", file=sys.stderr)
        return 1

    def on_step(state):
        if snap_every and state.step % snap_every == 0:
            write_snapshot(out / "snapshots" / f"snapshot_{state.step:06d}.csv", problem, state)
        if ckpt_every and state.step % ckpt_every == 0:
            save_checkpoint(state, out / "checkpoints" / f"checkpoint_{state.step:06d}.bin")

    if snap_every and start.step == 0:
        write_snapshot(out / "snapshots" / f"snapshot_{0:06d}.csv", problem, start)
    with ReportWriter(out / "reports.csv") as writer:
        try:
            result = run(problem, config, report_sink=writer, on_step=on_step,
                         keep_trajectory=False, start=start)
        except StepFailure as exc:
            print(f"run: solver failure at step {exc.step}: {exc}", file=sys.stderr)
            return 2
    bad = [r.step for r in result.reports if not r.energy_ok]
    if bad:
        print(f"run: energy balance above budget at steps {bad[:10]}", file=sys.stderr)
    print(f"run: {len(result.reports)} steps written to {out}", file=sys.stderr)
    return 0


def _parse_floats(text):
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad number list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def cmd_sweep(args):
    scenario, problem = _load(args)
    if _check(problem).failed:
        return 1
    config = stepper_config(scenario)
    taus = args.tau_list or [config.T / 50, config.T / 100, config.T / 200]
    try:
        rows = tau_sweep(problem, config, taus)
    except StepFailure as exc:
        print(f"sweep: solver failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"sweep: {exc}", file=sys.stderr)
        return 1
    out = _out_dir(args, scenario)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = list(asdict(rows[0]))
        w.writerow(cols)
        for row in rows:
            w.writerow([v if isinstance(v, int) else _fmt(v) for v in asdict(row).values()])
    print(f"sweep: {len(rows)} rows written to {out / 'sweep.csv'}", file=sys.stderr)
    return 0


def calibration_sequences(rng, count, U, max_length=4):
    """Short sequences, where the ratio of the two sides is smallest."""
    seqs = []
    for i in range(count):
        seqs.extend(random_sequences(rng, 1, 1 + i % max_length, U))
    return seqs


def cmd_convexity(args):
    if args.sequences < 1 or args.length < 1 or args.U <= 0 or args.tau <= 0:
        print("convexity: sequences, length, U and tau must be positive", file=sys.stderr)
        return 1
    Lambda = 2.0 * args.U if args.Lambda is None else args.Lambda
    P = ExactPrandtlIshlinskii.constant(Lambda, args.phi)
    f = LogRatio(args.tau)
    rng = np.random.default_rng(args.seed)
    if args.beta is None:
        beta = derive_beta(P, f, calibration_sequences(rng, args.calibration, args.U),
                           U=args.U, refine=args.refine)
        derived = True
    else:
        beta, derived = args.beta, False
    seqs = random_sequences(rng, args.sequences, args.length, args.U)
    out = _out_dir(args)
    n_fail = 0
    min_margin = np.inf
    with open(out / "convexity.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "lhs", "rhs", "holds"])
        for i, seq in enumerate(seqs):
            lhs, rhs, ok = check_convexity_inequality(P, seq, f, beta, U=args.U)
            n_fail += not ok
            min_margin = min(min_margin, lhs - rhs)
            w.writerow([i, _fmt(lhs), _fmt(rhs), int(ok)])
    status = "PASS" if n_fail == 0 and beta > 0 else "FAIL"
    with open(out / "convexity_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for key, value in [("status", status), ("beta", _fmt(beta)),
                           ("beta_derived", int(derived)), ("sequences", len(seqs)),
                           ("failures", n_fail), ("min_margin", _fmt(min_margin))]:
            w.writerow([key, value])
    print(f"convexity: {status} beta={beta:.6g} failures={n_fail}/{len(seqs)}", file=sys.stderr)
    return 0 if status == "PASS" else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="hystflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_cmd(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--scenario", required=True)
        p.add_argument("--out")
        p.set_defaults(func=func)
        return p

    scenario_cmd("validate", cmd_validate, "check a scenario and its initial data")
    p = scenario_cmd("run", cmd_run, "run the time-stepping scheme")
    p.add_argument("--snapshot-every", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--restart", help="resume from a checkpoint file")
    p = scenario_cmd("sweep", cmd_sweep, "repeat a run over several step sizes")
    p.add_argument("--tau-list", type=_parse_floats)

    p = sub.add_parser("convexity", help="check the convexity inequality on random sequences")
    p.add_argument("--sequences", type=int, default=1000)
    p.add_argument("--beta", type=float, help="fixed beta; derived by brute force if omitted")
    p.add_argument("--length", type=int, default=20)
    p.add_argument("--U", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.01, help="scale in f(w) = w / (tau + |w|)")
    p.add_argument("--Lambda", type=float, help="largest threshold (default 2U)")
    p.add_argument("--phi", type=float, default=1.0, help="constant threshold density")
    p.add_argument("--calibration", type=int, default=2000,
                   help="short random sequences sampled when deriving beta")
    p.add_argument("--refine", type=int, default=8,
                   help="local searches started from the worst calibration sequences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_convexity)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StepFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 2
    except HystflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
