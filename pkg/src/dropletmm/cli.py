"""Command line entry point: solve, evolve, oracle and verify."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import oracles, scenarios, verify as verify_mod
from .config import ConfigError, RunConfig, load_config
from .energy import ConsistencyFault, HysteresisParams
from .evolution import BRANCH_POLICIES, BranchExplosion, InvariantFault, ScheduleError, run_piecewise, stable_initial
from .grid import DomainError, ForcingPositivityError, build_disk_complement_domain, build_interval_domain
from .instances import tiny_instance
from .outputs import OutputError, OutputWriter, csv_text, write_outputs, write_solve
from .solver import MAX, MIN, MinimizeSpec, NonTermination, SolverFault, TruncationError, minimize, slope_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_PROPERTY = 4
EXIT_IO = 5

EPILOG = """exit codes:
  0  success
  1  usage error (unknown subcommand, flag or suite)
  2  configuration error (schema or modelling assumption violated)
  3  solver fault (linear solve, truncation, non-termination, branch limit)
  4  property failure (a verified property or oracle comparison failed)
  5  I/O error (output or input file could not be written or read)
"""

log = logging.getLogger("dropletmm")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    # SUPPRESS lets the flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", help="output prefix (solve) or directory (evolve, verify)")
    p.add_argument("--seed", type=int, help="seed for randomized property instances")
    p.add_argument("--threads", type=int, help="worker threads; runs are sequential, accepted for interface stability")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    return p


_GLOBAL_DEFAULTS = {"config": None, "out": None, "seed": None, "threads": 1, "quiet": False}


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="dropletmm", description="Quasi-static droplet evolution with contact-angle hysteresis.",
                     epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("solve", parents=[common], help="one minimization step from the configured initial mask",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--selection", choices=[MIN, MAX], default=None)
    s.add_argument("--amplitude", type=float, default=None, help="overrides the configured amplitude")
    e = sub.add_parser("evolve", parents=[common], help="minimizing-movement evolution over the schedule",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    e.add_argument("--branch-policy", choices=list(BRANCH_POLICIES), default=None)
    o = sub.add_parser("oracle", parents=[common], help="compare the solver against a reference solution",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    o.add_argument("--case", choices=["1d", "1d2", "radial", "brute"], required=True)
    o.add_argument("--params", default="{}", help="inline JSON with case parameters")
    v = sub.add_parser("verify", parents=[common], help="run a property suite",
                       epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    v.add_argument("suite", help="lattice | comparison | refinement | edi | branching | oracle | all")
    v.add_argument("--instances", type=int, default=None, help="instances per randomized suite")
    return parser


def _require_config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config: required for this subcommand")
    return load_config(args.config)


def cmd_solve(args) -> int:
    cfg = _require_config(args)
    amp = args.amplitude if args.amplitude is not None else cfg.amplitude
    if amp is None:
        raise ConfigError("amplitude: required for solve (config field or --amplitude)")
    d = cfg.build_domain()
    spec = MinimizeSpec(mask0=cfg.initial_mask(d), amplitude=amp, selection=args.selection or cfg.selection,
                        tol_lin=cfg.tolerances.tol_lin, tol_E=cfg.tolerances.tol_E)
    res = minimize(spec, d, cfg.params)
    prefix = args.out or os.path.join(cfg.output, "solve")
    write_solve(prefix, res, d)
    log.info("E = %.12g, wetted cells = %d, certificate %s", res.breakdown.total_E,
             int(np.count_nonzero(res.profile.wet_interior)), "PASS" if res.certificate.passed else "FAIL")
    return EXIT_OK if res.certificate.passed else EXIT_PROPERTY


def cmd_evolve(args) -> int:
    cfg = _require_config(args)
    if cfg.schedule is None:
        raise ConfigError("schedule: required for evolve")
    d = cfg.build_domain()
    # the initial state must be stable at t0
    init = stable_initial(d, cfg.params, cfg.initial_mask(d), cfg.schedule.amplitudes[0],
                          selection=cfg.schedule.selection(0), tol_lin=cfg.tolerances.tol_lin,
                          tol_E=cfg.tolerances.tol_E)
    tree = run_piecewise(init, cfg.schedule, cfg.partition, cfg.params,
                         branch_policy=args.branch_policy or cfg.branch_policy, max_branches=cfg.max_branches,
                         tol_lin=cfg.tolerances.tol_lin, tol_E=cfg.tolerances.tol_E)
    out = args.out or cfg.output
    write_outputs(tree, out, cfg.snapshots, extra={"config": cfg.to_dict()})
    log.info("%d branch(es) written to %s", len(tree.leaves()), out)
    return EXIT_OK


def _param(p: dict, key: str, default):
    v = p.get(key, default)
    if isinstance(default, float) and (isinstance(v, bool) or not isinstance(v, (int, float))):
        raise ConfigError(f"--params.{key}: expected a number")
    return v


def _discrete_jump_amplitude(d, params, guess: float, da: float) -> float:
    """Smallest amplitude (to da/64) at which a fresh solve returns the merged state."""

    def merged(F):
        res = minimize(MinimizeSpec(d.dirichlet.copy(), F), d, params)
        return bool(np.all(res.profile.mask[d.interior]))

    lo, hi = guess - 4 * da, guess + 4 * da
    while merged(lo) and lo > 2 * da:
        lo -= 4 * da
    while not merged(hi):
        hi += 4 * da
    while hi - lo > da / 64:
        mid = 0.5 * (lo + hi)
        if merged(mid):
            hi = mid
        else:
            lo = mid
    return hi


def oracle_table(case: str, p: dict) -> list[list]:
    """Rows (quantity, oracle, solver, abs_error, pass) for one oracle case."""
    params = HysteresisParams(_param(p, "mu_minus", 0.36), _param(p, "mu_plus", 0.21))
    rows = []
    if case == "1d":
        F, s0, h = _param(p, "F", 1.0), _param(p, "s0", 0.0), _param(p, "h", 1 / 512)
        length = _param(p, "length", float(max(2.0, 2.0 * F / np.sqrt(params.q_receding) + 0.5)))
        ref = oracles.oracle_1d(F, s0, params)
        d = build_interval_domain(length, h)
        res = minimize(MinimizeSpec(scenarios.distance_mask(d, s0), F), d, params)
        s = scenarios.free_boundary_position_1d(res.profile)
        rows.append(["s_star", ref.s_star, s, abs(s - ref.s_star), abs(s - ref.s_star) <= 2 * h])
        tol_e = 4 * h * params.q_advancing
        rows.append(["energy", ref.energy, res.breakdown.total_E, abs(res.breakdown.total_E - ref.energy),
                     abs(res.breakdown.total_E - ref.energy) <= tol_e])
    elif case == "1d2":
        F, length, h = _param(p, "F", 0.5), _param(p, "length", 2.0), _param(p, "h", 1 / 256)
        ref = oracles.oracle_1d_two_sided(F, 0.0, 0.0, length, params)
        d = build_interval_domain(length, h, two_sided=True)
        res = minimize(MinimizeSpec(d.dirichlet.copy(), F), d, params)
        merged = bool(np.all(res.profile.mask[d.interior]))
        ref_e = min(ref.energy_separate, ref.energy_merged)
        rows.append(["merged", float(ref.verdict == oracles.JUMP), float(merged), 0.0, merged == (ref.verdict == oracles.JUMP)])
        rows.append(["energy", ref_e, res.breakdown.total_E, abs(res.breakdown.total_E - ref_e),
                     abs(res.breakdown.total_E - ref_e) <= 8 * h * params.q_advancing])
        da = _param(p, "da", 0.01)
        fj = _discrete_jump_amplitude(d, params, ref.F_jump, da)
        rows.append(["F_jump", ref.F_jump, fj, abs(fj - ref.F_jump), abs(fj - ref.F_jump) <= da])
    elif case == "radial":
        F, r0, h = _param(p, "F", 2.0), _param(p, "r0", 1.0), _param(p, "h", 1 / 32)
        half = _param(p, "half_box", 4.0)
        ref = oracles.oracle_radial(F, r0, r0, params)
        d = build_disk_complement_domain([(0.0, 0.0)], r0, ((-half, half), (-half, half)), h)
        res = minimize(MinimizeSpec(d.dirichlet.copy(), F), d, params)
        rho = scenarios.mean_radius(res.profile)
        rows.append(["rho_star", ref.rho_star, rho, abs(rho - ref.rho_star), abs(rho - ref.rho_star) <= 2 * h])
        rep = slope_report(res, params)
        q = params.q_advancing
        rows.append(["slope_sq", q, rep.mean_slope_sq, abs(rep.mean_slope_sq - q), abs(rep.mean_slope_sq - q) <= 0.15])
    elif case == "brute":
        seed, index = int(_param(p, "seed", 1)), int(_param(p, "index", 0))
        ins = tiny_instance(seed, index)
        bf = oracles.brute_force(ins.domain, ins.mask0, ins.amplitude, ins.params)
        tol = 1e-10 * max(1.0, abs(bf.min_energy))
        for sel, ref_mask in ((MAX, bf.mask_union()), (MIN, bf.mask_intersection())):
            res = minimize(MinimizeSpec(ins.mask0, ins.amplitude, sel, allow_guard_contact=True), ins.domain, ins.params)
            gap = abs(res.breakdown.total_E - bf.min_energy)
            rows.append([f"energy_{sel}", bf.min_energy, res.breakdown.total_E, gap, gap <= tol])
            diff = int(np.count_nonzero(res.profile.mask ^ ref_mask))
            rows.append([f"mask_{sel}_cells_differing", 0.0, float(diff), float(diff), diff == 0])
    return rows


def cmd_oracle(args) -> int:
    try:
        p = json.loads(args.params)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--params: malformed JSON ({exc.msg})") from exc
    if not isinstance(p, dict):
        raise ConfigError("--params: expected a JSON object")
    rows = oracle_table(args.case, p)
    sys.stdout.write(csv_text(["quantity", "oracle", "solver", "abs_error", "pass"],
                              [[r[0], float(r[1]), float(r[2]), float(r[3]), int(bool(r[4]))] for r in rows]))
    return EXIT_OK if all(r[4] for r in rows) else EXIT_PROPERTY


def cmd_verify(args) -> int:
    if args.suite not in verify_mod.SUITES + ("all",):
        _Parser(prog="dropletmm verify").error(f"unknown suite {args.suite!r}")
    cfg = load_config(args.config) if args.config else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg is not None else 1)
    ok, rows = verify_mod.verify(args.suite, seed=seed, config=cfg, n=args.instances)
    text = csv_text(verify_mod.REPORT_COLUMNS, [r.as_list() for r in rows])
    if args.out:
        w = OutputWriter(args.out)
        w.text(f"verify_{args.suite}.csv", text)
        w.manifest()
    else:
        sys.stdout.write(text)
    n_fail = sum(not r.passed for r in rows)
    log.info("%s: %d checks, %d failed", args.suite, len(rows), n_fail)
    return EXIT_OK if ok else EXIT_PROPERTY


_COMMANDS = {"solve": cmd_solve, "evolve": cmd_evolve, "oracle": cmd_oracle, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ScheduleError, DomainError, ForcingPositivityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFault, TruncationError, NonTermination, BranchExplosion, InvariantFault, ConsistencyFault) as exc:
        print(f"solver fault: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except oracles.TooManyCells as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
