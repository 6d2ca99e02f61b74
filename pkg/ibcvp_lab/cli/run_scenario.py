import argparse, sys
from ibcvp_lab.errors import InvalidInputError, LabError
from ibcvp_lab.logconf import logger
from ibcvp_lab.models.scenario import SCENARIOS, ScenarioConfig
from ibcvp_lab.services.scenarios import run_scenario


def load_config(args: argparse.Namespace) -> ScenarioConfig:
    overrides = {
        "scenario": args.scenario,
        "output_dir": args.out,
        "seed": args.seed,
        "resolution_scale": args.resolution_scale,
    }
    if args.config:
        return ScenarioConfig.from_file(args.config, **overrides)
    return ScenarioConfig.build({k: v for k, v in overrides.items() if v is not None})


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        description="Run a named linearized IBCVP scenario and write its artifacts."
    )
    parser.add_argument("--config", help="key=value or JSON scenario file")
    parser.add_argument("--scenario", choices=SCENARIOS, help="Scenario to run (overrides the file)")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--seed", type=int, help="Seed for generated target data")
    parser.add_argument("--resolution-scale", type=int, help="Divide dt and dx by this factor")
    args = parser.parse_args(argv)

    try:
        config = load_config(args)
        artifacts = run_scenario(config)
    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return 130
    except LabError as exc:
        if not isinstance(exc, InvalidInputError):
            logger.error("Scenario failed: %s", exc, exc_info=True)
        print(f"ERROR: {exc}", file=sys.stderr)
        return exc.exit_code

    verdict = "PASS" if artifacts.passed else "FAIL"
    print(f"{artifacts.scenario}: {verdict} -> {artifacts.out_dir}")
    return 0 if artifacts.passed else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
