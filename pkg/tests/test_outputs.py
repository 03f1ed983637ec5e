import logging
import pathlib

import pandas as pd

from ocl.core.env import DATA_ROOT_VAR, resolve_data_root
from ocl.core.utils import dump_yaml, git_blob_sha1, load_structured, run_dir
from ocl.outputs.csv_writer import write_csv, write_json
from ocl.outputs.logger import get_logger
from ocl.outputs.telemetry import DiagnosticsWriter, read_diagnostics


def test_logger_wires_handlers_once(tmp_path):
    logs = tmp_path / "logs"
    log = get_logger("ocl.test_outputs", logs_dir=str(logs), level=logging.DEBUG)
    again = get_logger("ocl.test_outputs", logs_dir=str(logs), level=logging.DEBUG)
    assert log is again
    assert sum(isinstance(h, logging.FileHandler) for h in log.handlers) == 1
    assert sum(type(h) is logging.StreamHandler for h in log.handlers) == 1
    log.info("[test] hello")
    for h in log.handlers:
        h.flush()
    assert "[test] hello" in (logs / "ocl.test_outputs.log").read_text()


def test_diagnostics_roundtrip(tmp_path):
    path = str(tmp_path / "run" / "diagnostics.jsonl")
    writer = DiagnosticsWriter(path)
    writer.write({"step": 0, "tau": 0.1})
    writer.write(None)
    writer.write({"step": 1, "tau": 0.2, "grad_norm_ratio": 1.5})
    assert len(writer) == 2
    writer.flush()
    df = read_diagnostics(path)
    assert df["step"].tolist() == [0, 1]
    assert pd.isna(df["grad_norm_ratio"].iloc[0])

    empty = str(tmp_path / "empty.jsonl")
    DiagnosticsWriter(empty).flush()
    assert read_diagnostics(empty).empty


def test_writers_create_parents(tmp_path):
    p = write_csv(pd.DataFrame({"a": [0.1]}), str(tmp_path / "x" / "t.csv"))
    assert pathlib.Path(p).read_text().splitlines() == ["a", "0.10000000000000001"]
    j = write_json(str(tmp_path / "y" / "s.json"), {"b": 1, "a": None})
    assert pathlib.Path(j).read_text() == '{\n  "a": null,\n  "b": 1\n}\n'


def test_utils(tmp_path):
    # same value git computes for an empty blob
    assert git_blob_sha1(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"
    assert run_dir("out", "p", "ocar", 3) == pathlib.Path("out/p/ocar/seed_3")
    (tmp_path / "c.json").write_text('{"a": 1}')
    (tmp_path / "c.yaml").write_text(dump_yaml({"b": [1, 2]}))
    assert load_structured(tmp_path / "c.json") == {"a": 1}
    assert load_structured(tmp_path / "c.yaml") == {"b": [1, 2]}


def test_data_root_resolution(monkeypatch):
    monkeypatch.setenv(DATA_ROOT_VAR, "/data/mnist")
    assert resolve_data_root(None) == "/data/mnist"
    assert resolve_data_root("/other") == "/other"
    monkeypatch.setenv(DATA_ROOT_VAR, "  ")
    assert resolve_data_root(None) is None
