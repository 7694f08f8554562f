from .loader import ConfigLoader, parse_yaml
from .models import (
    ParamOverrides,
    ScenarioConfig,
    ScenarioDefinition,
    ScenariosConfig,
    SweepSpec,
)

__all__ = [
    "ConfigLoader",
    "ParamOverrides",
    "ScenarioConfig",
    "ScenarioDefinition",
    "ScenariosConfig",
    "SweepSpec",
    "parse_yaml",
]
