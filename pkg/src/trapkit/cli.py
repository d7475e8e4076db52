"""Command line front end.

Subcommands build reference models, validate and analyze stored chains,
certify traps, and export survival curves, occupation measures, and
sampled trajectories as CSV or JSON.  Exit status is 0 on success, 1 on
any error (malformed input files are reported with line and column), and
2 when certification is refused because the smallness condition fails;
in that case the measured parameters are printed as JSON.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from .certification import (
    CertificateParameters,
    certify,
    exponentiality_report,
    geometric_grid,
    verify_certificate_bounds,
)
from .chain import (
    FiniteChain,
    ProbabilityVector,
    load_chain,
    point_mass,
    save_chain,
    stationary_measure,
    validate,
)
from .errors import NotApplicable, TrapkitError
from .hitting import survival_function
from .measures import (
    TrapPartition,
    empirical_measure,
    quasi_stationary,
    restricted_invariant,
)
from .models import (
    build_barrier_walk,
    build_birth_death,
    build_birth_death_half,
    build_tiar_full,
    build_tiar_projection,
    project_and_verify_lumping,
)
from .montecarlo import SamplerConfig, simulate_trajectories

_MODELS = {
    "bd": build_birth_death,
    "bd-half": build_birth_death_half,
    "barrier": build_barrier_walk,
    "tiar-proj": build_tiar_projection,
    "tiar-full": build_tiar_full,
}


def parse_state_set(text: str) -> tuple[int, ...]:
    """Parse "3,7" and half-open ranges like "10:21" into a state tuple."""
    out: set[int] = set()
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if ":" in token:
            lo, hi = token.split(":", 1)
            out.update(range(int(lo), int(hi)))
        else:
            out.add(int(token))
    if not out:
        raise ValueError(f"empty state set: {text!r}")
    return tuple(sorted(out))


def _get_chain(args) -> FiniteChain:
    if getattr(args, "chain", None):
        return load_chain(args.chain)
    if getattr(args, "model", None):
        if args.n is None:
            raise ValueError("--model requires --n")
        return _MODELS[args.model](args.n)
    raise ValueError("provide --chain or --model")


def _out_stream(path):
    return open(path, "w", newline="") if path else sys.stdout


def _start_measure(chain: FiniteChain, part: TrapPartition, text: str) -> tuple[ProbabilityVector, str]:
    if text == "pi_A":
        return restricted_invariant(stationary_measure(chain), part), "pi_A"
    if text == "qsd":
        return quasi_stationary(chain, part).measure, "qsd"
    x = int(text)
    return point_mass(chain.state_count, x), f"point:{chain.labels[x]}"


def _parse_grid(text: str, chain: FiniteChain) -> np.ndarray:
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError("grid must be start:stop:points-per-decade")
    return geometric_grid(
        float(parts[0]), float(parts[1]), int(parts[2]), integer=not chain.is_continuous()
    )


def cmd_model(args) -> int:
    chain = _MODELS[args.name](args.n)
    if args.out:
        save_chain(chain, args.out)
        print(f"wrote {chain.state_count} states to {args.out}", file=sys.stderr)
    else:
        from .chain import chain_to_dict

        json.dump(chain_to_dict(chain), sys.stdout, indent=2)
        sys.stdout.write("\n")
    return 0


def cmd_analyze(args) -> int:
    chain = _get_chain(args)
    if args.stationary:
        pi = stationary_measure(chain)
        writer = csv.writer(sys.stdout)
        writer.writerow(["state", "label", "weight"])
        for i, w in enumerate(pi.weights):
            writer.writerow([i, chain.labels[i], w])
        return 0
    violations = validate(chain)
    print(f"states: {chain.state_count}")
    print(f"time: {chain.time_kind}")
    if chain.uniformization_rate is not None:
        print(f"uniformization rate: {chain.uniformization_rate:g}")
    if violations:
        for v in violations:
            print(f"violation: {v}")
        return 1
    print("valid: yes")
    return 0


def cmd_certify(args) -> int:
    chain = _get_chain(args)
    part = TrapPartition.from_goal(chain.state_count, parse_state_set(args.goal), args.alpha)
    cert = certify(chain, part, CertificateParameters(args.R, args.alpha), strict=True)
    payload = json.dumps(cert.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_qsd(args) -> int:
    chain = _get_chain(args)
    part = TrapPartition.from_goal(chain.state_count, parse_state_set(args.goal))
    res = quasi_stationary(chain, part)
    payload = {
        "mean_exit_time": res.mean_exit_time,
        "decay_rate": res.decay_rate,
        "measure": [[i, float(res.measure.weights[i])] for i in part.trap],
    }
    json.dump(payload, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


def cmd_survival(args) -> int:
    chain = _get_chain(args)
    goal = parse_state_set(args.goal)
    part = TrapPartition.from_goal(chain.state_count, goal)
    res = quasi_stationary(chain, part)
    if args.t_grid:
        grid = _parse_grid(args.t_grid, chain)
    else:
        grid = geometric_grid(
            0.01 * res.mean_exit_time,
            20.0 * res.mean_exit_time,
            integer=not chain.is_continuous(),
        )
    start, descriptor = _start_measure(chain, part, args.start)
    curve = survival_function(chain, start, goal, grid, start_descriptor=descriptor)
    out = _out_stream(args.out)
    try:
        writer = csv.writer(out)
        writer.writerow(["t", "survival", "exp_reference", "deviation"])
        for row in curve.as_rows(res.mean_exit_time):
            writer.writerow(row)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_empirical(args) -> int:
    chain = _get_chain(args)
    part = TrapPartition.from_goal(chain.state_count, parse_state_set(args.goal))
    measure = empirical_measure(chain, args.start, part)
    out = _out_stream(args.out)
    try:
        writer = csv.writer(out)
        writer.writerow(["state", "label", "weight"])
        for i in part.trap:
            writer.writerow([i, chain.labels[i], measure.weights[i]])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_simulate(args) -> int:
    chain = _get_chain(args)
    goal = parse_state_set(args.goal)
    part = TrapPartition.from_goal(chain.state_count, goal)
    start, _ = _start_measure(chain, part, args.start)
    config = SamplerConfig(args.seed, args.n_traj, args.max_time)
    times, censored = simulate_trajectories(chain, start, goal, config)
    out = _out_stream(args.out)
    try:
        writer = csv.writer(out)
        writer.writerow(["trajectory_index", "hitting_time", "censored_flag"])
        for i in range(len(times)):
            writer.writerow([i, times[i], int(censored[i])])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_lump_check(args) -> int:
    full = build_tiar_full(args.n)
    ok, worst = project_and_verify_lumping(full, args.n)
    print(f"lumping exact for {args.n} cards: discrepancy {worst:g}")
    return 0 if ok else 1


def cmd_report(args) -> int:
    chain = _get_chain(args)
    part = TrapPartition.from_goal(chain.state_count, parse_state_set(args.goal), args.alpha)
    grid = tuple(_parse_grid(args.t_grid, chain)) if args.t_grid else None
    params = CertificateParameters(args.R, args.alpha, grid)
    cert = certify(chain, part, params)
    print(f"reference time R: {cert.R:g}   alpha: {cert.alpha:g}")
    print(f"escape within 2R (f):        {cert.f:.6g}")
    print(f"basin spread at R (d):       {cert.d:.6g}")
    print(f"recurrence miss at R (r):    {cert.r:.6g}")
    print(f"combined c = r + 2 f^alpha:  {cert.c:.6g}   applicable: {cert.applicable}")
    print(f"basin: {len(cert.basin)} of {len(part.trap)} trap states")
    if cert.applicable:
        print(f"c_bar: {cert.c_bar:.6g}")
        print(f"epsilon1: {cert.epsilon1:.6g}   epsilon2: {cert.epsilon2:.6g}")
        if args.verify:
            check = verify_certificate_bounds(chain, part, cert, params.t_grid)
            print(
                "verified bounds: conditioned sup "
                f"{check.conditioned_sup:.6g}, mixture sup {check.mixture_sup:.6g}, "
                f"stationary vs qsd {check.stationary_vs_qsd:.6g}, "
                f"empirical sup {check.empirical_sup:.6g}"
            )
    report = exponentiality_report(
        chain, part, cert, comparison_constant=args.comparison_constant
    )
    print(f"exit time scale: {report.time_scale:.6g}")
    print(f"mixture exponentiality deviation: {report.mixture_deviation:.6g}")
    print(f"worst exponentiality deviation:   {report.epsilon_measured:.6g}")
    if report.bound_reference is not None:
        print(
            f"reference bound {args.comparison_constant:g}(r + epsilon2) = "
            f"{report.bound_reference:.6g}   satisfied: {report.bound_satisfied}"
        )
    if args.curves:
        with open(args.curves, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["start", "t", "survival", "exp_reference", "weighted_deviation"])
            for row in report.curves():
                writer.writerow(row)
        print(f"wrote scaled survival curves to {args.curves}", file=sys.stderr)
    return 0 if cert.applicable else 2


def _add_chain_source(sub, with_model: bool = True) -> None:
    sub.add_argument("--chain", help="path to a stored chain-spec JSON file")
    if with_model:
        sub.add_argument("--model", choices=sorted(_MODELS), help="build a reference model instead")
        sub.add_argument("--n", type=int, help="model size parameter")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trapkit",
        description="certify traps of finite Markov chains and export their laws",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", help="build a reference model chain")
    p.add_argument("name", choices=sorted(_MODELS))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("analyze", help="validate a chain and print a summary")
    _add_chain_source(p)
    p.add_argument("--stationary", action="store_true", help="print the invariant measure as CSV")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("certify", help="measure (f, d, r) and emit a certificate")
    _add_chain_source(p)
    p.add_argument("--goal", required=True, help='goal set, e.g. "10:21" or "3,7"')
    p.add_argument("--R", type=float, required=True, help="reference time")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("qsd", help="quasi-stationary measure of a trap")
    _add_chain_source(p)
    p.add_argument("--goal", required=True)
    p.set_defaults(func=cmd_qsd)

    p = sub.add_parser("survival", help="survival curve of the goal-hitting time")
    _add_chain_source(p)
    p.add_argument("--goal", required=True)
    p.add_argument("--start", default="pi_A", help='state index, "pi_A", or "qsd"')
    p.add_argument("--t-grid", dest="t_grid", help="start:stop:points-per-decade")
    p.add_argument("--out")
    p.set_defaults(func=cmd_survival)

    p = sub.add_parser("empirical", help="expected occupation measure before escape")
    _add_chain_source(p)
    p.add_argument("--goal", required=True)
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_empirical)

    p = sub.add_parser("simulate", help="sample hitting times to CSV")
    _add_chain_source(p)
    p.add_argument("--goal", required=True)
    p.add_argument("--start", default="pi_A")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-traj", dest="n_traj", type=int, default=10000)
    p.add_argument("--max-time", dest="max_time", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("lump-check", help="verify the shuffle lumps onto its projection")
    p.add_argument("--n", type=int, required=True)
    p.set_defaults(func=cmd_lump_check)

    p = sub.add_parser("report", help="certificate plus exponentiality summary")
    _add_chain_source(p)
    p.add_argument("--goal", required=True)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--comparison-constant", dest="comparison_constant", type=float, default=10.0)
    p.add_argument("--verify", action="store_true", help="also check every certified bound")
    p.add_argument("--t-grid", dest="t_grid", help="verification grid, start:stop:points-per-decade")
    p.add_argument("--curves", help="write scaled per-start survival curves as CSV")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except NotApplicable as exc:
        print(json.dumps({"f": exc.f, "d": exc.d, "r": exc.r}))
        return 2
    except TrapkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
