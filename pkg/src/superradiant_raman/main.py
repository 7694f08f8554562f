import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from . import __version__
from .config.loader import ConfigLoader, parse_yaml
from .config.models import REGIME_ATOMS
from .cumulant.master import TWO_PI
from .errors import ConfigError
from .scenarios.registry import ScenarioRegistry

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

# Grids used when `sweep --axis` is given without `--values`.
DEFAULT_GRIDS: Dict[str, Dict[str, Any]] = {
    "Omega": {"start": TWO_PI * 2.5e6, "stop": TWO_PI * 1e7, "num": 7},
    "detuning": {"start": TWO_PI * 1e9, "stop": TWO_PI * 4e9, "num": 7},
    "gamma12_NGamma": {"start": 0.05, "stop": 1.2, "num": 12, "log": False},
}
N_GRIDS = {
    "crossover": {"start": 5e3, "stop": 5e4, "num": 7},
    "strong": {"start": 3e5, "stop": 3e6, "num": 7},
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="Scenario YAML file.")
    p.add_argument(
        "--scenario", help="Catalogue scenario to start from (see list-scenarios)."
    )
    p.add_argument("--out", type=Path, help="Output directory.")
    p.add_argument("--threads", type=int, help="Worker threads for sweep points.")
    p.add_argument("--model", choices=("full", "effective"))
    p.add_argument("--regime", choices=tuple(REGIME_ATOMS))
    p.add_argument(
        "--param",
        action="append",
        default=[],
        metavar="NAME=VALUE",
        help="Physical parameter override, e.g. N=2e4 or Omega=5 MHz (repeatable).",
    )
    p.add_argument("--catalogue", type=Path, help="Scenario catalogue YAML file.")
    p.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="superradiant-raman",
        description="Cumulant mean-field simulation of superradiant Raman scattering.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    for kind, text in (
        ("pulse", "Integrate a superradiant pulse and extract its metrics."),
        ("steady", "Find the pumped steady state."),
        ("spectrum", "Steady-state emission spectrum and Lorentzian fit."),
    ):
        _add_common(sub.add_parser(kind, help=text))

    p = sub.add_parser("sweep", help="Sweep one parameter and tabulate a metric.")
    _add_common(p)
    p.add_argument(
        "--axis", help="Parameter to sweep (field name, detuning, gamma12_NGamma)."
    )
    p.add_argument("--metric", choices=("pulse", "steady", "spectrum"))
    p.add_argument("--values", type=float, nargs="+", help="Explicit sweep values.")

    p = sub.add_parser(
        "oracle-check", help="Check the moment equations against exact evolution."
    )
    _add_common(p)
    p.add_argument(
        "--slow", action="store_true", help="Include the N=2 pulse comparison."
    )
    p.add_argument("--seed", type=int, help="Seed for the random test states.")

    p = sub.add_parser("list-scenarios", help="List the catalogue scenarios.")
    p.add_argument("--catalogue", type=Path, help="Scenario catalogue YAML file.")
    p.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    return parser


def _param_overrides(items: Sequence[str]) -> Dict[str, Any]:
    """``NAME=VALUE`` pairs parsed with the configuration-file unit rules."""
    lines = []
    for item in items:
        name, sep, value = item.partition("=")
        if not sep or not name.strip():
            raise ConfigError(f"--param expects NAME=VALUE, got '{item}'")
        lines.append(f"{name.strip()}: {value.strip()}")
    return parse_yaml("\n".join(lines)).data or {}


def _sweep_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    sweep: Dict[str, Any] = {}
    if args.axis:
        sweep["axis"] = args.axis
    if args.metric:
        sweep["metric"] = args.metric
    if args.values:
        sweep["values"] = list(args.values)
    elif args.axis:
        regime = args.regime or "crossover"
        grid = N_GRIDS[regime] if args.axis == "N" else DEFAULT_GRIDS.get(args.axis)
        if grid is None:
            raise ConfigError(f"No default grid for axis '{args.axis}'; pass --values")
        sweep.update(grid)
        sweep["values"] = None
    return sweep


def cli_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """ScenarioConfig values set on the command line."""
    overrides: Dict[str, Any] = {"kind": args.command}
    for attr, key in (("model", "model"), ("regime", "regime"), ("out", "output_dir")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.param:
        overrides["params"] = _param_overrides(args.param)
    if args.command == "sweep":
        sweep = _sweep_overrides(args)
        if sweep:
            overrides["sweep"] = sweep
    if args.command == "oracle-check":
        if args.slow:
            overrides["include_slow"] = True
        if args.seed is not None:
            overrides["seed"] = args.seed
    return overrides


def _file_scenario(loader: ConfigLoader) -> Optional[str]:
    parsed = loader.load_scenario_file()
    if parsed is None:
        return None
    return parsed.data.get("scenario")


def list_scenarios(registry: ScenarioRegistry) -> None:
    for d in registry.definitions:
        kind = d.defaults.get("kind", "pulse")
        print(f"{d.id:<20}{kind:<13} {d.description}")


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout)],
    )
    try:
        loader = ConfigLoader(
            scenario_path=getattr(args, "config", None), catalogue_path=args.catalogue
        )
        registry = ScenarioRegistry()
        registry.load_scenarios(loader.load_catalogue())
        if args.command == "list-scenarios":
            list_scenarios(registry)
            return EXIT_OK

        definition = None
        scenario_id = args.scenario or _file_scenario(loader)
        if scenario_id:
            definition = registry.get_definition(scenario_id)
            kind = definition.defaults.get("kind", "pulse")
            if kind != args.command:
                raise ConfigError(
                    f"Scenario '{scenario_id}' is a {kind} run, not {args.command}"
                )
        cfg = loader.build_scenario(definition, cli_overrides(args))
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG

    record = registry.execute(cfg)
    for name, value in {**record.metrics, **record.fits}.items():
        logger.info(f"{name} = {value}")
    for failure in record.failures:
        logger.warning(f"Failure: {failure}")
    logger.info(f"Outputs in {cfg.output_dir.resolve()}")
    return EXIT_FAILED if record.status == "failed" else EXIT_OK


def cli() -> None:
    sys.exit(run())


if __name__ == "__main__":
    cli()
