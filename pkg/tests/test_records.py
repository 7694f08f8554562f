import json

import numpy as np
import pytest

from superradiant_raman.records import (
    RecordWriter,
    RunRecord,
    Table,
    format_float,
    load_record,
    plain,
    sha256_of,
)


def test_floats_have_a_fixed_format():
    assert format_float(1.5) == "1.500000000000e+00"
    assert format_float(np.float32(0.25)) == "2.500000000000e-01"
    assert format_float(float("nan")) == "nan"
    assert format_float(-float("inf")) == "-inf"


def test_table_render_is_reproducible():
    table = Table(["t [s]", "n [photons]"], [(0.0, 1.0), (1e-3, 0.5)])
    text = table.render()
    assert text == (
        "t [s],n [photons]\n"
        "0.000000000000e+00,1.000000000000e+00\n"
        "1.000000000000e-03,5.000000000000e-01\n"
    )
    assert Table(list(table.columns), list(table.rows)).render() == text


def test_table_rows_must_match_columns():
    with pytest.raises(ValueError):
        Table(["a", "b"], [(1.0,)]).render()


def test_plain_converts_numpy_values():
    value = {"a": np.float64(1.5), "b": np.arange(2), "c": (1 + 2j), 3: [np.int64(4)]}
    converted = plain(value)
    assert converted == {"a": 1.5, "b": [0, 1], "c": {"re": 1.0, "im": 2.0}, "3": [4]}
    json.dumps(converted)


def test_writer_records_checksums(tmp_path):
    writer = RecordWriter(tmp_path / "run")
    path = writer.write_table("trajectory", Table(["x [1]"], [(1.0,)]))
    writer.write_text("notes.txt", "hello\n")
    assert path.name == "trajectory.csv"
    assert writer.checksums["trajectory.csv"] == sha256_of(path)
    assert set(writer.checksums) == {"trajectory.csv", "notes.txt"}
    assert writer.checksums["notes.txt"] == sha256_of(b"hello\n")


def test_record_round_trip(tmp_path):
    record = RunRecord(
        scenario="crossover_pulse",
        kind="pulse",
        config={"model": "full"},
        version="0.1.0",
        wall_time=1.25,
        outputs={"trajectory.csv": "abc"},
        metrics={"peak": 3.0},
    )
    RecordWriter(tmp_path).write_record(record)
    loaded = load_record(tmp_path)
    assert loaded == record
    assert loaded.status == "ok"
    assert load_record(tmp_path / "run.json") == record
