"""Command-line entry points.

Subcommands: fit, select, simulate, gradcheck, report. Exit codes:
0 success, 1 check failure, 2 invalid input, 3 numerical divergence.
Every command is deterministic given --seed, and the seed is echoed in
the summary line.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import fileio
from .curriculum import CurriculumConfig, EXHAUSTED, select
from .gradcheck import check_elbo_gradients, check_likelihood_gradients
from .simulate import run_loop
from .vi import FitConfig, NonFiniteObjectiveError, PriorSpec, fit

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID_INPUT = 2
EXIT_DIVERGED = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default 0)")
    common.add_argument("--quiet", action="store_true", help="suppress summary output")

    parser = argparse.ArgumentParser(
        prog="mirt-curriculum",
        description=(
            "Estimate concept difficulty and model competence from accumulated "
            "responses, and select training questions by predicted difficulty."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit the posterior on a response matrix")
    p.add_argument("responses", help="response CSV (snapshot_id,question_id,correct)")
    p.add_argument("bank", help="question bank JSON")
    p.add_argument("--out", required=True, help="posterior JSON output path")
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--mc-samples", type=int, default=4)
    p.add_argument("--prior-stddev", type=float, default=1.0)
    p.add_argument("--warm-start", default=None, help="posterior JSON to start from")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", parents=[common], help="pick questions inside the score bounds")
    p.add_argument("bank", help="question bank JSON")
    p.add_argument("--posterior", default=None, help="posterior JSON (required unless --epoch 0)")
    p.add_argument("--lb", type=float, required=True, help="log-scale score lower bound")
    p.add_argument("--ub", type=float, required=True, help="log-scale score upper bound")
    p.add_argument("--epoch", type=int, default=1, help="0 selects the seeding set")
    p.add_argument("--seed-count", type=int, default=5000)
    p.add_argument("--seed-max-concepts", type=int, default=2)
    p.add_argument("--out", required=True, help="selected question ids, one per line")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", parents=[common], help="run the full loop on a simulated learner")
    p.add_argument("config", help="simulation config JSON (sections: sim, curriculum, fit)")
    p.add_argument("--out", required=True, help="trace output path (JSON lines)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-5, help="likelihood-gradient tolerance")
    p.add_argument("--elbo-tol", type=float, default=1e-4, help="ELBO-gradient tolerance")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("report", parents=[common], help="render figures and a CSV from a trace")
    p.add_argument("trace", help="trace file written by simulate")
    p.add_argument("--out-dir", required=True, help="directory for report.csv and figures")
    p.set_defaults(func=cmd_report)

    return parser


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def cmd_fit(args) -> int:
    bank = fileio.load_bank(args.bank)
    responses = fileio.load_responses(args.responses, bank)
    warm = None
    if args.warm_start:
        warm, names, _ = fileio.load_posterior(args.warm_start)
        if names != list(bank.concept_names):
            print(
                f"error: warm-start concepts {names} do not match bank concepts",
                file=sys.stderr,
            )
            return EXIT_INVALID_INPUT
    if args.prior_stddev <= 0:
        print("error: --prior-stddev must be positive", file=sys.stderr)
        return EXIT_INVALID_INPUT
    prior = PriorSpec(theta_std=args.prior_stddev, b_std=args.prior_stddev)
    try:
        config = FitConfig(
            learning_rate=args.learning_rate,
            max_iters=args.max_iters,
            mc_samples=args.mc_samples,
            seed=_seed(args),
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    try:
        post, report = fit(responses, bank, prior, config, warm_start=warm)
    except NonFiniteObjectiveError as exc:
        print(f"error: fit diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    fileio.save_posterior(args.out, post, list(bank.concept_names), report)
    elbo = report.elbo_trace[-1] if report.iterations_run else float("nan")
    _say(
        args,
        f"fit: snapshots={post.num_snapshots} concepts={post.num_concepts} "
        f"iterations={report.iterations_run} elbo={elbo:.6f} "
        f"converged={str(report.converged).lower()} seed={_seed(args)}",
    )
    return EXIT_OK


def cmd_select(args) -> int:
    try:
        config = CurriculumConfig(
            lb_log=args.lb,
            ub_log=args.ub,
            seed_max_concepts=args.seed_max_concepts,
            seed_count=args.seed_count,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    bank = fileio.load_bank(args.bank)
    post = None
    if args.epoch != 0:
        if not args.posterior:
            print("error: --posterior is required unless --epoch 0", file=sys.stderr)
            return EXIT_INVALID_INPUT
        post, names, _ = fileio.load_posterior(args.posterior)
        if names != list(bank.concept_names):
            print(
                f"error: posterior concepts {names} do not match bank concepts",
                file=sys.stderr,
            )
            return EXIT_INVALID_INPUT
    result = select(bank, post, config, args.epoch)
    fileio.save_selection(args.out, result, bank)
    if result.stage == EXHAUSTED:
        _say(
            args,
            f"EARLY-STOP: no questions inside bounds ({args.lb}, {args.ub}); "
            f"stage=exhausted seed={_seed(args)}",
        )
    else:
        totals = bank.total_concepts
        mean_cc = (
            float(np.mean([totals[bank.index_of(q)] for q in result.selected]))
            if result.selected
            else float("nan")
        )
        _say(
            args,
            f"select: count={len(result.selected)} stage={result.stage} "
            f"mean_concepts={mean_cc:.3f} excluded_below={result.excluded_below} "
            f"excluded_above={result.excluded_above} seed={_seed(args)}",
        )
    return EXIT_OK


def cmd_simulate(args) -> int:
    sim_config, curriculum_config, fit_config = fileio.load_simulation_spec(args.config)
    if args.seed is not None:
        sim_config = replace(sim_config, seed=args.seed)
    diverged: list[str] = []
    epochs_written = 0
    final_stage = None

    with fileio.atomic_write(args.out) as handle:

        def emit(record):
            nonlocal epochs_written, final_stage
            handle.write(fileio.trace_line(record) + "\n")
            handle.flush()
            epochs_written += 1
            final_stage = record.stage

        try:
            run_loop(sim_config, curriculum_config, fit_config, on_epoch=emit)
        except NonFiniteObjectiveError as exc:
            diverged.append(str(exc))

    if diverged:
        print(
            f"error: fit diverged after {epochs_written} epochs: {diverged[0]} "
            f"(partial trace written to {args.out})",
            file=sys.stderr,
        )
        return EXIT_DIVERGED
    _say(
        args,
        f"simulate: epochs={epochs_written} final_stage={final_stage} "
        f"seed={sim_config.seed}",
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.trials == 0:
        _say(args, f"gradcheck: trials=0, nothing checked seed={_seed(args)}")
        return EXIT_OK
    if args.trials < 0:
        print("error: --trials must be non-negative", file=sys.stderr)
        return EXIT_INVALID_INPUT
    likelihood = check_likelihood_gradients(args.trials, args.tol, _seed(args))
    elbo = check_elbo_gradients(args.trials, args.elbo_tol, _seed(args))
    _say(args, likelihood.summary())
    _say(args, elbo.summary())
    _say(args, f"gradcheck: seed={_seed(args)}")
    if likelihood.passed and elbo.passed:
        return EXIT_OK
    if args.quiet:
        print(likelihood.summary(), file=sys.stderr)
        print(elbo.summary(), file=sys.stderr)
    return EXIT_CHECK_FAILED


def cmd_report(args) -> int:
    from .report import render_report

    records = fileio.load_trace(args.trace)
    written = render_report(records, args.out_dir)
    _say(
        args,
        f"report: epochs={len(records)} wrote {len(written)} files to {args.out_dir} "
        f"seed={_seed(args)}",
    )
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_INVALID_INPUT
    try:
        return args.func(args)
    except fileio.FileFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: file not found", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except (IsADirectoryError, PermissionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
