import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping

from ..entities import DataError


class FileWriter:
    """Handles artifact writing with atomic replace and proper error handling."""

    def write_bytes(self, path: Path, payload: bytes) -> Path:
        """
        Write `payload` to `path` through a temporary sibling file.

        Like sealing an envelope before dropping it in the box - a reader
        either sees the old artifact or the complete new one, never half.
        """
        path.parent.mkdir(parents=True, exist_ok=True)
        handle, tmp_name = tempfile.mkstemp(dir=path.parent,
                                            prefix=f".{path.name}.")
        try:
            with os.fdopen(handle, 'wb') as file:
                file.write(payload)
            os.replace(tmp_name, path)
            return path
        except IOError as e:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise DataError(f"Failed to write artifact: {e}", path)

    def write_text(self, path: Path, text: str) -> Path:
        return self.write_bytes(path, text.encode('utf-8'))

    def write_json(self, path: Path, payload: Mapping[str, Any]) -> Path:
        text = json.dumps(payload, indent=2, sort_keys=True, default=str)
        return self.write_text(path, text + "\n")

    def append_jsonl(self, path: Path, records: Iterable[Mapping[str, Any]]) -> Path:
        """Append one JSON object per line; metric logs only ever grow."""
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            with open(path, 'a', encoding='utf-8') as file:
                for record in records:
                    file.write(json.dumps(record, sort_keys=True) + "\n")
            return path
        except IOError as e:
            raise DataError(f"Failed to append records: {e}", path)

    def read_json(self, path: Path) -> Any:
        if not path.exists():
            raise DataError("JSON file not found", path)
        try:
            return json.loads(path.read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise DataError(f"Malformed JSON: {e}", path)

    def read_jsonl(self, path: Path) -> list:
        if not path.exists():
            raise DataError("JSON-lines file not found", path)
        with open(path, 'r', encoding='utf-8') as file:
            return [json.loads(line) for line in file if line.strip()]
