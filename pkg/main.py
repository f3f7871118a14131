"""
Command-line entry point.

    python main.py simulate --config run.yaml --out runs/a --seed 7
    python main.py dissipation-time --config cellular.yaml
    python main.py blowup-scan --config scan.yaml
    python main.py sweep --config base.yaml --nu 0.1 0.05 0.02 0.01 --threads 4
    python main.py resume runs/a/checkpoints/checkpoint_000100.nlsp --config run.yaml
    python main.py run --config shear.yaml

Exit codes: 0 success (a detected blow-up is a result), 1 I/O failure,
2 configuration error, 3 numerical failure.
"""

import argparse
import sys
from pathlib import Path

import yaml
from loguru import logger

import scenario_runner
from run_config import LOG_LEVEL, THREADS, ConfigError, apply_overrides, parse_config

SCENARIO_COMMANDS = ("simulate", "dissipation-time", "blowup-scan")


def setup_logging(level=LOG_LEVEL):
    logger.remove()
    logger.add(sys.stderr, level=level)


def load(path, scenario=None, nu=None):
    """Parse a config file, optionally forcing the scenario or solver.nu before validation."""
    text = Path(path).read_text(encoding="utf-8")
    if scenario is None and nu is None:
        return parse_config(text)
    document = yaml.safe_load(text) or {}
    if not isinstance(document, dict):
        return parse_config(text)
    if scenario is not None:
        document["scenario"] = scenario
    if nu is not None:
        solver = document.get("solver") or {}
        if isinstance(solver, dict):
            document["solver"] = {**solver, "nu": nu}
    return parse_config(yaml.safe_dump(document, sort_keys=True))


def build_parser():
    parser = argparse.ArgumentParser(description="Pseudo-spectral experiments for the nonlocal semilinear heat equation")
    commands = parser.add_subparsers(dest="command", required=True)

    def common(sub, multiple=False):
        if multiple:
            sub.add_argument("--config", nargs="+", required=True, help="run configuration file(s)")
        else:
            sub.add_argument("--config", required=True, help="run configuration file")
        sub.add_argument("--out", default=None, help="output directory (overrides the config)")
        sub.add_argument("--seed", type=int, default=None, help="seed for random initial data")
        sub.add_argument("--threads", type=int, default=THREADS, help="worker processes for sweeps")

    for name in SCENARIO_COMMANDS:
        common(commands.add_parser(name, help=f"run the {name} scenario"))
    common(commands.add_parser("run", help="run the scenario named in the config"))

    sweep = commands.add_parser("sweep", help="run several configs, one row each")
    common(sweep, multiple=True)
    sweep.add_argument("--nu", type=float, nargs="+", default=None,
                       help="expand each config over these nu values")

    resume = commands.add_parser("resume", help="continue a simulate run from a checkpoint")
    resume.add_argument("checkpoint", help="checkpoint file written by a previous run")
    common(resume)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging()

    try:
        if args.command == "sweep":
            configs = []
            for path in args.config:
                for nu in (args.nu or [None]):
                    configs.append(apply_overrides(load(path, nu=nu), seed=args.seed))
            table = scenario_runner.sweep(configs, parallelism=args.threads, output_dir=args.out)
            logger.info(f"sweep table:\n{table.drop(columns=['output_dir', 'error']).to_string(index=False)}")
            return scenario_runner.EXIT_OK

        scenario = args.command if args.command in SCENARIO_COMMANDS else None
        if args.command == "resume":
            scenario = "simulate"
        config = apply_overrides(load(args.config, scenario=scenario), output_dir=args.out, seed=args.seed)
    except ConfigError as e:
        logger.error(str(e))
        return scenario_runner.EXIT_CONFIG
    except OSError as e:
        logger.error(f"cannot read configuration: {e}")
        return scenario_runner.EXIT_CONFIG

    if args.command == "resume":
        outcome = scenario_runner.resume(args.checkpoint, config)
    else:
        outcome = scenario_runner.run(config)
    logger.info(f"status {outcome.status}, exit code {outcome.exit_code}")
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
