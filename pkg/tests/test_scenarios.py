from pathlib import Path

import numpy as np
import pytest

from superradiant_raman.config import ConfigLoader
from superradiant_raman.config.models import ScenarioConfig, ScenariosConfig
from superradiant_raman.engine import SweepRow, SweepTable
from superradiant_raman.errors import ConfigError, NoPulseError
from superradiant_raman.main import EXIT_CONFIG, EXIT_OK, run
from superradiant_raman.records import ScenarioResult, Table, load_record, sha256_of
from superradiant_raman.scenarios import ScenarioRegistry, run_scenario
from superradiant_raman.scenarios.built_in_scenarios import (
    effective_scenario,
    oracle_scenario,
    pulse_scenario,
    steady_scenario,
    sweep_fits,
)


def _table_runner(cfg):
    return ScenarioResult(
        tables={"curve": Table(["x [1]", "y [1]"], [(1.0, 2.0), (2.0, 8.0)])},
        metrics={"peak": np.float64(8.0)},
        fits={"slope": 3.0},
    )


def _failing_runner(cfg):
    raise NoPulseError("no interior maximum")


def test_run_scenario_writes_outputs_and_record(tmp_path):
    cfg = ScenarioConfig(output_dir=tmp_path)
    record = run_scenario(cfg, _table_runner)
    assert record.status == "ok"
    assert record.metrics == {"peak": 8.0}
    assert record.outputs["curve.csv"] == sha256_of(tmp_path / "curve.csv")
    assert record.config["physical"]["N"] == 1e4
    assert load_record(tmp_path) == record


def test_reruns_reproduce_outputs(tmp_path):
    first = run_scenario(ScenarioConfig(output_dir=tmp_path / "a"), _table_runner)
    second = run_scenario(ScenarioConfig(output_dir=tmp_path / "b"), _table_runner)
    assert first.outputs == second.outputs


def test_simulation_errors_become_failed_records(tmp_path):
    record = run_scenario(ScenarioConfig(output_dir=tmp_path), _failing_runner)
    assert record.status == "failed"
    assert record.failures == ["no interior maximum"]
    assert (tmp_path / "run.json").exists()


def test_registry_skips_entries_that_do_not_import():
    catalogue = ScenariosConfig.model_validate(
        {
            "scenarios": [
                {
                    "id": "good",
                    "module": "superradiant_raman.scenarios.built_in_scenarios",
                    "function": "pulse_scenario",
                },
                {"id": "no_module", "module": "not.a.module", "function": "f"},
                {
                    "id": "no_function",
                    "module": "superradiant_raman.scenarios.built_in_scenarios",
                    "function": "missing",
                },
            ]
        }
    )
    registry = ScenarioRegistry()
    registry.load_scenarios(catalogue)
    assert [d.id for d in registry.definitions] == ["good"]
    assert registry.get_runner(ScenarioConfig(scenario="good")) is pulse_scenario
    assert registry.get_runner(ScenarioConfig(kind="oracle-check")) is oracle_scenario
    with pytest.raises(ConfigError):
        registry.get_definition("no_module")


def test_sweep_fits():
    rows = [
        SweepRow(x, {"peak": 2 * x**2, "n_ss": n, "fwhm": w})
        for x, n, w in [(1.0, 1.0, 3.0), (2.0, 5.0, 2.0), (4.0, 2.0, 4.0)]
    ]
    rows.append(SweepRow(8.0, error="failed"))
    fits = sweep_fits(SweepTable("N", rows))
    assert fits["slope_peak"] == pytest.approx(2.0)
    assert fits["argmax_n_ss"] == 2.0
    assert fits["max_n_ss"] == 5.0
    assert fits["min_fwhm"] == 2.0


def test_cli_lists_scenarios(catalogue_file, capsys):
    assert run(["list-scenarios", "--catalogue", str(catalogue_file)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "toy_pulse" in out
    assert "oracle-check" in out


@pytest.mark.parametrize(
    "argv",
    [
        ["pulse", "--scenario", "absent"],
        ["steady", "--scenario", "toy_pulse"],
        ["pulse", "--param", "Omega=5 furlongs"],
        ["pulse", "--param", "Omega"],
        ["sweep", "--axis", "Omga"],
        ["sweep"],
    ],
)
def test_cli_configuration_errors(argv, catalogue_file, tmp_path):
    args = argv + ["--catalogue", str(catalogue_file), "--out", str(tmp_path)]
    assert run(args) == EXIT_CONFIG
    assert not (tmp_path / "run.json").exists()


def test_cli_oracle_check(catalogue_file, tmp_path):
    out = tmp_path / "oracle"
    args = ["oracle-check", "--catalogue", str(catalogue_file), "--out", str(out)]
    assert run(args) == EXIT_OK
    record = load_record(out)
    assert record.kind == "oracle-check"
    assert record.status == "ok"
    assert record.metrics["trace"]["passed"] is True
    assert record.outputs["oracle_report.txt"] == sha256_of(out / "oracle_report.txt")


BUNDLED_CATALOGUE = Path(__file__).parent.parent / "config_examples" / "scenarios_config.yaml"


def test_bundled_catalogue_has_one_entry_per_reference_run():
    registry = ScenarioRegistry()
    registry.load_scenarios(ConfigLoader(catalogue_path=BUNDLED_CATALOGUE).load_catalogue())
    ids = [d.id for d in registry.definitions]
    assert len(ids) == 16
    assert registry.get_runner(ScenarioConfig(scenario="effective_model")) is effective_scenario
    assert registry.get_definition("effective_model").defaults["model"] == "effective"


@pytest.mark.parametrize("model", ["full", "effective"])
def test_pulse_scenario_keeps_the_bloch_vector_on_its_axis(model):
    cfg = ScenarioConfig(model=model, sim={"t_end": 1e-6, "n_out": 201})
    result = pulse_scenario(cfg)
    assert result.metrics["max_abs_A_x"] == 0.0
    assert result.metrics["max_abs_A_y"] == 0.0
    assert "J [1]" in result.tables["trajectory"].columns


def test_steady_scenario_converges_at_the_reference_pump_rate():
    cfg = ScenarioConfig(
        kind="steady",
        model="effective",
        params={"gamma12_NGamma": 0.5},
        sim={"t_end": 1e-3, "n_out": 201},
    )
    result = steady_scenario(cfg)
    assert not result.failed
    assert result.metrics["n_ss"] == pytest.approx(0.629, rel=0.02)
    assert result.metrics["residual"] < 1e-8
