from .registry import ScenarioRegistry, run_scenario

__all__ = ["ScenarioRegistry", "run_scenario"]
