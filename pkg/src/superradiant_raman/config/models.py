from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..cumulant.master import PhysicalParams
from ..engine import SWEEP_PSEUDO_AXES, SimConfig
from ..errors import SimulationError

# Atom numbers the two regimes are referenced at.
REGIME_ATOMS = {"crossover": 1e4, "strong": 1e6}

ScenarioKind = Literal["pulse", "sweep", "steady", "spectrum", "oracle-check"]


class ParamOverrides(BaseModel):
    """
    Physical parameters a scenario changes from the reference values.

    Frequencies are in rad/s by the time they reach this model; the loader
    converts ``_2pi`` keys and unit strings. ``detuning`` and
    ``gamma12_NGamma`` are applied after the plain fields.
    """

    model_config = ConfigDict(extra="forbid")

    N: Optional[float] = Field(default=None, ge=1, description="Number of atoms.")
    omega_c: Optional[float] = None
    omega_32: Optional[float] = None
    omega_21: Optional[float] = None
    omega_d: Optional[float] = None
    g31: Optional[float] = Field(default=None, ge=0)
    Omega: Optional[float] = Field(default=None, ge=0)
    kappa: Optional[float] = Field(default=None, ge=0)
    gamma31: Optional[float] = Field(default=None, ge=0)
    gamma12: Optional[float] = Field(default=None, ge=0)
    detuning: Optional[float] = Field(
        default=None,
        description="Drive detuning ω_d - ω_32; the cavity follows the drive.",
    )
    gamma12_NGamma: Optional[float] = Field(
        default=None, ge=0, description="Pump rate in units of NΓ."
    )

    def apply(self, base: PhysicalParams) -> PhysicalParams:
        params = base
        values = self.model_dump(exclude_none=True)
        for name in PhysicalParams.model_fields:
            if name in values:
                params = params.with_value(name, values[name])
        for name in SWEEP_PSEUDO_AXES:
            if name in values:
                params = params.with_value(name, values[name])
        return params


class SweepSpec(BaseModel):
    """Sweep axis and its grid: explicit ``values`` or ``start``/``stop``/``num``."""

    model_config = ConfigDict(extra="forbid")

    axis: str = Field(..., description="PhysicalParams field or derived axis.")
    values: Optional[List[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    num: int = Field(default=7, ge=1)
    log: bool = Field(default=True, description="Geometric spacing for start/stop.")
    metric: Literal["pulse", "steady", "spectrum"] = "pulse"
    pump_NGamma: Optional[float] = Field(
        default=None,
        ge=0,
        description="Hold the pump at this multiple of NΓ at every point.",
    )

    @model_validator(mode="after")
    def _check(self) -> "SweepSpec":
        if self.axis not in PhysicalParams.model_fields and (
            self.axis not in SWEEP_PSEUDO_AXES
        ):
            raise ValueError(f"unknown sweep axis '{self.axis}'")
        if self.values is None and (self.start is None or self.stop is None):
            raise ValueError("a sweep needs 'values' or both 'start' and 'stop'")
        if self.values is not None and len(self.values) == 0:
            raise ValueError("sweep values must not be empty")
        if self.log and self.values is None and (self.start <= 0 or self.stop <= 0):
            raise ValueError("a logarithmic sweep needs positive bounds")
        if self.pump_NGamma is not None and self.axis in ("gamma12", "gamma12_NGamma"):
            raise ValueError("pump_NGamma cannot hold the pump on a pump-rate axis")
        return self

    def grid(self) -> np.ndarray:
        if self.values is not None:
            return np.asarray(self.values, dtype=float)
        if self.log:
            return np.geomspace(self.start, self.stop, self.num)
        return np.linspace(self.start, self.stop, self.num)


class ScenarioConfig(BaseModel):
    """One run: which model, which parameters, what to compute, where to write."""

    model_config = ConfigDict(extra="forbid")

    scenario: Optional[str] = Field(
        default=None, description="Catalogue scenario the run starts from."
    )
    kind: ScenarioKind = "pulse"
    model: Literal["full", "effective"] = "full"
    regime: Literal["crossover", "strong"] = "crossover"
    params: ParamOverrides = Field(default_factory=ParamOverrides)
    sim: SimConfig = Field(default_factory=SimConfig)
    sweep: Optional[SweepSpec] = None
    observable: str = Field(default="ad*a", description="Moment the pulse is read on.")
    phase_invariant: bool = True
    output_dir: Path = Path("results")
    threads: Optional[int] = Field(default=None, ge=1)
    include_slow: bool = Field(
        default=False, description="Run the slow exact-evolution pulse comparison."
    )
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> "ScenarioConfig":
        if self.kind == "sweep" and self.sweep is None:
            raise ValueError("a sweep scenario needs a 'sweep' section")
        return self

    def physical_params(self) -> PhysicalParams:
        """Reference values for the regime with the overrides applied."""
        return self.params.apply(PhysicalParams(N=REGIME_ATOMS[self.regime]))

    def snapshot(self) -> Dict[str, Any]:
        data = self.model_dump(mode="json")
        try:
            data["physical"] = self.physical_params().model_dump()
        except SimulationError:
            data["physical"] = None
        return data


class ScenarioDefinition(BaseModel):
    """Catalogue entry mapping a scenario id to the function that runs it."""

    id: str = Field(..., description="Scenario id used on the command line.")
    module: str = Field(..., description="Python module holding the runner.")
    function: str = Field(..., description="Runner taking a ScenarioConfig.")
    description: str = ""
    defaults: Dict[str, Any] = Field(
        default_factory=dict, description="ScenarioConfig values for this scenario."
    )


class ScenariosConfig(BaseModel):
    scenarios: List[ScenarioDefinition] = Field(default_factory=list)
