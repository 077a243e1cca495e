"""Tests for table and JSON output."""

import json

import pytest

from src.errors import ExportError, SpecificationError
from src.output_processor import OutputProcessor, fmt_coord, fmt_prob


def test_formatters():
    assert fmt_coord(3.14159) == "3.14"
    assert fmt_coord(2.0) == "2.00"
    assert fmt_prob(1 / 3) == "0.333333333"
    assert fmt_prob(1703478.51) == "1703478.51"


def test_csv_table(tmp_path):
    out = OutputProcessor(tmp_path)
    path = out.write_table("t", ("frame", "x", "label"), [[1, 2.5, "a"], [2, None, "b"]], {"x": fmt_coord})
    assert path.read_text(encoding="utf-8") == "frame,x,label\n1,2.50,a\n2,,b\n"
    assert out.records == {"t.csv": 2}


def test_empty_table_keeps_header(tmp_path):
    path = OutputProcessor(tmp_path).write_table("t", ("frame",), [])
    assert path.read_text(encoding="utf-8") == "frame\n"


def test_json_table(tmp_path):
    out = OutputProcessor(tmp_path, "json")
    path = out.write_table("t", ("frame", "x", "label"), [[1, 2.456, "a"], [2, None, "b"]], {"x": fmt_coord})
    assert json.loads(path.read_text(encoding="utf-8")) == [
        {"frame": 1, "x": 2.46, "label": "a"},
        {"frame": 2, "x": None, "label": "b"},
    ]


def test_manifest(tmp_path):
    out = OutputProcessor(tmp_path)
    out.write_json("b", [1, 2, 3])
    out.write_json("a.json", {"k": 1})
    out.write_table("c", ("v",), [[1]])
    out.write_manifest()
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest == {"files": [{"name": "a.json", "records": 1}, {"name": "b.json", "records": 3}, {"name": "c.csv", "records": 1}]}


def test_unknown_format(tmp_path):
    with pytest.raises(SpecificationError):
        OutputProcessor(tmp_path, "xml")


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x", encoding="utf-8")
    with pytest.raises(ExportError) as e:
        OutputProcessor(blocker / "out")
    assert isinstance(e.value, OSError)
