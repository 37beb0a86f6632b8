import pytest

from vla_services.core.file_writer import FileWriter
from vla_services.entities import DataError


@pytest.fixture
def writer():
    return FileWriter()


def test_write_creates_parents_and_leaves_no_temp(tmp_path, writer):
    target = tmp_path / "a" / "b" / "out.bin"
    writer.write_bytes(target, b"payload")
    assert target.read_bytes() == b"payload"
    assert [p.name for p in target.parent.iterdir()] == ["out.bin"]


def test_overwrite_replaces_content(tmp_path, writer):
    target = tmp_path / "out.txt"
    writer.write_text(target, "old")
    writer.write_text(target, "new")
    assert target.read_text() == "new"


def test_json_round_trip(tmp_path, writer):
    writer.write_json(tmp_path / "x.json", {"b": 1, "a": [1, 2]})
    assert writer.read_json(tmp_path / "x.json") == {"a": [1, 2], "b": 1}


def test_jsonl_appends(tmp_path, writer):
    path = tmp_path / "metrics.jsonl"
    writer.append_jsonl(path, [{"step": 0}])
    writer.append_jsonl(path, [{"step": 1}, {"step": 2}])
    assert [r["step"] for r in writer.read_jsonl(path)] == [0, 1, 2]


def test_missing_and_malformed_json(tmp_path, writer):
    with pytest.raises(DataError):
        writer.read_json(tmp_path / "absent.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(DataError):
        writer.read_json(tmp_path / "bad.json")
