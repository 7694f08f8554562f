import importlib
import logging
import time
from typing import Callable, Dict, List, Optional

from .. import __version__
from ..config.models import ScenarioConfig, ScenarioDefinition, ScenariosConfig
from ..errors import ConfigError, SimulationError
from ..records import RecordWriter, RunRecord, ScenarioResult, plain

logger = logging.getLogger(__name__)

# Runners for plain subcommands that do not name a catalogue scenario.
KIND_RUNNERS = {
    "pulse": "pulse_scenario",
    "sweep": "sweep_scenario",
    "steady": "steady_scenario",
    "spectrum": "spectrum_scenario",
    "oracle-check": "oracle_scenario",
}
BUILT_IN_MODULE = "superradiant_raman.scenarios.built_in_scenarios"

Runner = Callable[[ScenarioConfig], ScenarioResult]


class ScenarioRegistry:
    """
    Manages the scenarios defined in the catalogue.
    Runners are Python functions that are dynamically loaded and called with a
    validated ScenarioConfig.
    """

    def __init__(self):
        self._runners: Dict[str, Runner] = {}
        self._definitions: Dict[str, ScenarioDefinition] = {}
        logger.debug("ScenarioRegistry initialized.")

    def load_scenarios(self, catalogue: Optional[ScenariosConfig]):
        """
        Imports the module of every catalogue entry and registers its runner.
        Entries that fail to import are logged and skipped.
        """
        if not catalogue or not catalogue.scenarios:
            logger.warning("No scenarios found in the catalogue.")
            return

        logger.debug(f"Loading {len(catalogue.scenarios)} scenarios into registry...")
        for definition in catalogue.scenarios:
            try:
                func = _import_runner(definition.module, definition.function)
            except ImportError:
                logger.error(
                    f"Failed to register scenario '{definition.id}': could not "
                    f"import module '{definition.module}'.",
                    exc_info=True,
                )
                continue
            except AttributeError:
                logger.error(
                    f"Failed to register scenario '{definition.id}': no function "
                    f"'{definition.function}' in module '{definition.module}'.",
                    exc_info=True,
                )
                continue
            if not callable(func):
                logger.error(
                    f"Failed to register scenario '{definition.id}': "
                    f"{definition.module}.{definition.function} is not callable."
                )
                continue
            self._runners[definition.id] = func
            self._definitions[definition.id] = definition
            logger.debug(
                f"Registered scenario '{definition.id}' -> "
                f"{definition.module}.{definition.function}"
            )
        logger.info(f"Scenario loading complete. {len(self._runners)} registered.")

    @property
    def definitions(self) -> List[ScenarioDefinition]:
        return list(self._definitions.values())

    def get_definition(self, scenario_id: str) -> ScenarioDefinition:
        if scenario_id not in self._definitions:
            known = ", ".join(sorted(self._definitions)) or "none"
            raise ConfigError(f"Unknown scenario '{scenario_id}' (known: {known})")
        return self._definitions[scenario_id]

    def get_runner(self, cfg: ScenarioConfig) -> Runner:
        if cfg.scenario is not None:
            self.get_definition(cfg.scenario)
            return self._runners[cfg.scenario]
        return _import_runner(BUILT_IN_MODULE, KIND_RUNNERS[cfg.kind])

    def execute(self, cfg: ScenarioConfig) -> RunRecord:
        """Run a scenario and write its outputs and ``run.json``."""
        return run_scenario(cfg, self.get_runner(cfg))


def _import_runner(module_name: str, function: str) -> Runner:
    module = importlib.import_module(module_name)
    return getattr(module, function)


def run_scenario(cfg: ScenarioConfig, runner: Runner) -> RunRecord:
    """
    Executes ``runner`` and persists what it produced. A runner that raises a
    SimulationError yields a failed record rather than an exception.
    """
    name = cfg.scenario or cfg.kind
    logger.info(f"Running scenario '{name}'")
    start = time.perf_counter()
    try:
        result = runner(cfg)
    except SimulationError as e:
        logger.error(f"Scenario '{name}' failed: {e}", exc_info=True)
        result = ScenarioResult(failures=[str(e)], failed=True)
    wall_time = time.perf_counter() - start

    writer = RecordWriter(cfg.output_dir)
    for table_name, table in result.tables.items():
        writer.write_table(table_name, table)
    for text_name, text in result.texts.items():
        writer.write_text(text_name, text)
    record = RunRecord(
        scenario=name,
        kind=cfg.kind,
        config=cfg.snapshot(),
        version=__version__,
        wall_time=wall_time,
        status="failed" if result.failed else "ok",
        outputs=writer.checksums,
        metrics=plain(result.metrics),
        fits=plain(result.fits),
        failures=result.failures,
    )
    writer.write_record(record)
    logger.info(
        f"Scenario '{name}' finished in {wall_time:.2f} s with status {record.status}"
    )
    return record
