import pytest

from superradiant_raman.cumulant.system import compile_model
from superradiant_raman.oracle import TOY_PARAMS


@pytest.fixture(scope="session")
def full_system():
    return compile_model("full")


@pytest.fixture(scope="session")
def effective_system():
    return compile_model("effective")


@pytest.fixture(scope="session")
def cavity_system():
    return compile_model("cavity")


@pytest.fixture
def toy_params():
    return dict(TOY_PARAMS)


@pytest.fixture
def catalogue_file(tmp_path):
    path = tmp_path / "scenarios_config.yaml"
    path.write_text(
        "scenarios:\n"
        "  - id: toy_pulse\n"
        "    module: superradiant_raman.scenarios.built_in_scenarios\n"
        "    function: pulse_scenario\n"
        "    description: Short pulse\n"
        "    defaults:\n"
        "      kind: pulse\n"
        "      sim:\n"
        "        t_end: 1.0e-6\n"
        "  - id: toy_oracle\n"
        "    module: superradiant_raman.scenarios.built_in_scenarios\n"
        "    function: oracle_scenario\n"
        "    description: Exact-evolution checks\n"
        "    defaults:\n"
        "      kind: oracle-check\n"
    )
    return path
