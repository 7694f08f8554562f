import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from ..cumulant.master import TWO_PI
from ..errors import ConfigError
from .models import ScenarioConfig, ScenarioDefinition, ScenariosConfig

logger = logging.getLogger(__name__)

# Project root directory, calculated relative to this file's location.
# Assuming src/superradiant_raman/config/loader.py
PROJECT_ROOT = Path(__file__).parent.parent.parent.parent

# Default directory for user-override configurations (expected at project root)
DEFAULT_USER_CONFIG_DIR = PROJECT_ROOT / "user_config"
DEFAULT_USER_SCENARIOS_FILE = DEFAULT_USER_CONFIG_DIR / "scenarios_config.yaml"
DEFAULT_USER_SCENARIO_FILE = DEFAULT_USER_CONFIG_DIR / "scenario.yaml"

# Directory for example/fallback configurations (part of the repository)
EXAMPLE_CONFIG_DIR = PROJECT_ROOT / "config_examples"
EXAMPLE_SCENARIOS_FILE = EXAMPLE_CONFIG_DIR / "scenarios_config.yaml"

ENV_PREFIX = "SRR_"
ENV_KEYS = ("threads", "output_dir")

# Frequencies written with a unit are cyclic and become rad/s.
HZ_UNITS = {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9, "THz": 1e12}
ANGULAR_SUFFIX = "_2pi"

_NUMBER = r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_NUMBER_RE = re.compile(rf"^{_NUMBER}$")
_QUANTITY_RE = re.compile(rf"^({_NUMBER})\s*([A-Za-z]+)$")

KeyPath = Tuple[Any, ...]

_SCALARS = yaml.constructor.SafeConstructor()


@dataclass
class ParsedYaml:
    """YAML content with the line of every mapping key, keyed by its path."""

    data: Any
    lines: Dict[KeyPath, int] = field(default_factory=dict)
    source: Optional[Path] = None

    def line_of(self, loc: KeyPath) -> Optional[int]:
        """Line of the deepest key along ``loc`` that came from this file."""
        for n in range(len(loc), 0, -1):
            line = self.lines.get(tuple(loc[:n]))
            if line is not None:
                return line
        return None


def _scalar(node: yaml.ScalarNode, angular: bool) -> Any:
    line = node.start_mark.line + 1
    value = _SCALARS.construct_object(node)
    if isinstance(value, str):
        if _NUMBER_RE.match(value):
            value = float(value)
        else:
            m = _QUANTITY_RE.match(value)
            if m:
                number, unit = m.groups()
                if unit not in HZ_UNITS:
                    raise ConfigError(
                        f"unknown frequency unit '{unit}' in '{value}' "
                        f"(expected one of {', '.join(HZ_UNITS)})",
                        line=line,
                    )
                return TWO_PI * float(number) * HZ_UNITS[unit]
            if angular:
                raise ConfigError(f"'{value}' is not a frequency in Hz", line=line)
            return value
    if angular:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"'{node.value}' is not a frequency in Hz", line=line)
        return TWO_PI * value
    return value


def _construct(
    node: yaml.Node, path: KeyPath, lines: Dict[KeyPath, int], angular: bool = False
) -> Any:
    if isinstance(node, yaml.MappingNode):
        out: Dict[str, Any] = {}
        for key_node, value_node in node.value:
            key = str(key_node.value)
            is_angular = key.endswith(ANGULAR_SUFFIX)
            if is_angular:
                key = key[: -len(ANGULAR_SUFFIX)]
            if key in out:
                raise ConfigError(
                    f"duplicate key '{key}'", line=key_node.start_mark.line + 1
                )
            lines[(*path, key)] = key_node.start_mark.line + 1
            out[key] = _construct(value_node, (*path, key), lines, is_angular)
        return out
    if isinstance(node, yaml.SequenceNode):
        items = []
        for i, item in enumerate(node.value):
            lines[(*path, i)] = item.start_mark.line + 1
            items.append(_construct(item, (*path, i), lines, angular))
        return items
    return _scalar(node, angular)


def parse_yaml(text: str, source: Optional[Path] = None) -> ParsedYaml:
    """Parse YAML text, converting frequencies and recording key lines."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(
            f"invalid YAML in {source or 'input'}: {e}",
            line=mark.line + 1 if mark is not None else None,
        ) from e
    lines: Dict[KeyPath, int] = {}
    data = None if node is None else _construct(node, (), lines)
    return ParsedYaml(data, lines, source)


def deep_merge(base: Mapping[str, Any], update: Mapping[str, Any]) -> Dict[str, Any]:
    """Recursive dict merge; values from ``update`` win."""
    out = dict(base)
    for k, v in update.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """``SRR_THREADS`` and ``SRR_OUTPUT_DIR`` from the environment (or a .env file)."""
    if environ is None:
        load_dotenv()
        environ = os.environ
    out: Dict[str, Any] = {}
    for key in ENV_KEYS:
        value = environ.get(ENV_PREFIX + key.upper())
        if value:
            out[key] = value
    if out:
        logger.info(f"Environment overrides: {out}")
    return out


def _format_error(e: ValidationError, parsed: Optional[ParsedYaml]) -> ConfigError:
    err = e.errors()[0]
    loc = tuple(err["loc"])
    where = ".".join(str(p) for p in loc) or "scenario"
    line = parsed.line_of(loc) if parsed is not None else None
    return ConfigError(f"{where}: {err['msg']}", line=line)


class ConfigLoader:
    """
    Handles loading of the scenario catalogue and of scenario files.
    The catalogue follows a fallback mechanism:
    1. Attempts to load from an explicitly provided path (if any).
    2. If no explicit path, attempts `user_config/scenarios_config.yaml`.
    3. If not found there, falls back to `config_examples/scenarios_config.yaml`.
    A scenario file is read from the explicit path or `user_config/scenario.yaml`;
    without either the run uses the catalogue and reference defaults.
    """

    def __init__(
        self,
        scenario_path: Optional[Path] = None,
        catalogue_path: Optional[Path] = None,
    ):
        self.explicit_scenario_path_provided = scenario_path is not None
        self.scenario_path = scenario_path or DEFAULT_USER_SCENARIO_FILE

        self.explicit_catalogue_path_provided = catalogue_path is not None
        self.primary_catalogue_path = catalogue_path or DEFAULT_USER_SCENARIOS_FILE
        self.fallback_catalogue_path = (
            None if self.explicit_catalogue_path_provided else EXAMPLE_SCENARIOS_FILE
        )

        self.catalogue: Optional[ScenariosConfig] = None

        logger.debug(
            f"Catalogue: primary path = '{self.primary_catalogue_path}'"
            + (
                f", fallback path = '{self.fallback_catalogue_path}'"
                if self.fallback_catalogue_path
                else " (no fallback due to explicit path)"
            )
        )

    def _attempt_load_yaml(self, file_path: Path) -> Optional[ParsedYaml]:
        """Parsed file content, or None when the file is missing or empty."""
        if not file_path.exists():
            logger.debug(f"Configuration file not found at {file_path}")
            return None
        parsed = parse_yaml(file_path.read_text(), source=file_path)
        if parsed.data is None:
            logger.warning(
                f"Configuration file at {file_path} is empty or contains only "
                "comments. No data loaded."
            )
            return None
        logger.debug(f"Successfully read YAML data from {file_path}")
        return parsed

    def load_catalogue(self) -> ScenariosConfig:
        parsed = self._attempt_load_yaml(self.primary_catalogue_path)
        loaded_from = self.primary_catalogue_path
        if parsed is None and self.fallback_catalogue_path:
            logger.info(
                f"No scenario catalogue at '{self.primary_catalogue_path}'. "
                f"Using '{self.fallback_catalogue_path}'."
            )
            parsed = self._attempt_load_yaml(self.fallback_catalogue_path)
            loaded_from = self.fallback_catalogue_path
        if parsed is None:
            raise ConfigError(f"Scenario catalogue not found at '{loaded_from}'")
        try:
            self.catalogue = ScenariosConfig.model_validate(parsed.data)
        except ValidationError as e:
            raise _format_error(e, parsed) from e
        logger.info(
            f"Scenario catalogue loaded from '{loaded_from}': "
            f"{len(self.catalogue.scenarios)} scenario(s)."
        )
        return self.catalogue

    def load_scenario_file(self) -> Optional[ParsedYaml]:
        parsed = self._attempt_load_yaml(self.scenario_path)
        if parsed is None and self.explicit_scenario_path_provided:
            raise ConfigError(
                f"Scenario file '{self.scenario_path}' not found or empty"
            )
        if parsed is not None and not isinstance(parsed.data, dict):
            raise ConfigError(
                f"Scenario file '{self.scenario_path}' must hold a mapping", line=1
            )
        return parsed

    def build_scenario(
        self,
        definition: Optional[ScenarioDefinition] = None,
        overrides: Optional[Mapping[str, Any]] = None,
        environ: Optional[Mapping[str, str]] = None,
    ) -> ScenarioConfig:
        """
        Merge catalogue defaults, the scenario file, environment and command-line
        overrides (in increasing priority) into a validated ScenarioConfig.
        """
        data: Dict[str, Any] = {}
        if definition is not None:
            data = deep_merge(data, definition.defaults)
            data["scenario"] = definition.id
        parsed = self.load_scenario_file()
        if parsed is not None:
            data = deep_merge(data, parsed.data)
        data = deep_merge(data, env_overrides(environ))
        data = deep_merge(data, overrides or {})
        try:
            cfg = ScenarioConfig.model_validate(data)
        except ValidationError as e:
            raise _format_error(e, parsed) from e
        logger.info(
            f"Scenario '{cfg.scenario or cfg.kind}' configured: model={cfg.model}, "
            f"regime={cfg.regime}"
        )
        return cfg
