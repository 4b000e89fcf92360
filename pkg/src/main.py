import argparse
import logging
import sys

import pandas as pd

from src import response_models as rm
from src.config_manager import ConfigError, ConfigManager, load_experiment_config, parse_override
from src.harness import emit_outputs, run_experiment, summarize
from src.logger import setup_logging
from src.session import (SessionError, SessionStore, init_session, next_recommendation,
                         observe, status)

__version__ = "0.1.0"

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser():
    config = ConfigManager()
    parser = argparse.ArgumentParser(
        prog="fertbandit",
        description="Model-based bandits for economically optimal fertilizer rates.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug output on the console")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run a simulation preset")
    run.add_argument("config", help="preset file (flat JSON)")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a preset key; repeatable")
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int, help="base seed")
    run.add_argument("--workers", type=int, help="replicates run in parallel")
    run.add_argument("--no-plots", action="store_true", help="skip the SVG plots")

    state = argparse.ArgumentParser(add_help=False)
    state.add_argument("--state", default=config.get_state_file(), help="advisory state file")

    advise = commands.add_parser("advise", help="season-by-season recommendations")
    steps = advise.add_subparsers(dest="step", required=True)

    init = steps.add_parser("init", parents=[state], help="start a new session")
    init.add_argument("--model", required=True, help="response model family")
    init.add_argument("--grid", type=_float_list, help="comma-separated fertilizer rates")
    init.add_argument("--p-y", dest="p_y", type=float, required=True, help="grain price ($/bu)")
    init.add_argument("--p-x", dest="p_x", type=float, required=True, help="fertilizer price ($/lb N)")
    init.add_argument("--theta", type=_float_list, help="initial parameters (default: bundled initials)")
    init.add_argument("--policy", default=config.get_advise_policy())
    init.add_argument("--alpha", type=float, default=config.get_advise_alpha())
    init.add_argument("--seed", type=int)
    init.add_argument("--force", action="store_true", help="replace an existing state file")

    steps.add_parser("next", parents=[state], help="recommend the next rate")
    obs = steps.add_parser("observe", parents=[state], help="record the observed yield")
    obs.add_argument("yield_", metavar="YIELD")
    steps.add_parser("status", parents=[state], help="show History and current estimate")
    return parser


def cmd_run(args):
    overrides = dict(parse_override(item) for item in args.overrides)
    if args.out:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    config = load_experiment_config(args.config, overrides)

    records = run_experiment(config)
    summary = summarize(records, config.grid)
    emit_outputs(summary, records, config.output_dir, plots=not args.no_plots)

    table = summary.final_table()
    print(f"{config.scenario}: T={config.horizon}, R={config.replicates}, outputs in {config.output_dir}")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    return EXIT_OK


def _print_recommendation(pending):
    print(f"Round {pending['round']}: apply {pending['arm']:g} lb N/ac")
    breakdown = pending.get("breakdown") or {}
    if breakdown:
        print(f"  profit estimate {breakdown['profit']:.2f} + alpha {breakdown['alpha']:g} "
              f"x uncertainty {breakdown['uncertainty']:.2f} = score {breakdown['score']:.2f}")
    elif pending.get("explored"):
        print("  exploration round")


def cmd_advise(args):
    store = SessionStore(args.state)
    if args.step == "init":
        try:
            state = init_session(store, args.model, args.p_y, args.p_x, grid=args.grid,
                                 theta=args.theta, policy=args.policy, alpha=args.alpha,
                                 seed=args.seed, force=args.force)
        except ValueError as e:
            raise SessionError(str(e)) from e
        print(f"Started {state.policy} session for {state.model} in {args.state} (seed {state.seed})")
    elif args.step == "next":
        _, pending = next_recommendation(store)
        _print_recommendation(pending)
    elif args.step == "observe":
        _, entry = observe(store, args.yield_)
        print(f"Round {entry['round']}: yield {entry['yield']:g} at {entry['arm']:g}, "
              f"profit {entry['profit']:.2f}")
    elif args.step == "status":
        report = status(store)
        state = report["state"]
        print(f"{state.policy} on {state.model}, p_y={state.p_y:g}, p_x={state.p_x:g}, round {state.round}")
        if state.history:
            print(pd.DataFrame(state.history).to_string(index=False))
        if report["theta"] is not None:
            theta = ", ".join(f"{k}={v:.6g}" for k, v in report["theta"].items())
            fit = f" ({report['fit_status']})" if report["fit_status"] else ""
            print(f"theta: {theta}{fit}")
            print(f"x*: {report['x_star']:.2f}")
        if state.pending is not None:
            _print_recommendation(state.pending)
    return EXIT_OK


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    config = ConfigManager()
    setup_logging(config.get_log_file(), "DEBUG" if args.verbose else config.get_console_level())
    logger = logging.getLogger(__name__)
    logger.info(f"fertbandit {__version__}: {args.command}")

    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_advise(args)
    except (ConfigError, SessionError, rm.ModelDomainError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"{args.command} failed")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
