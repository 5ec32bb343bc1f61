"""Atomic file output.  A run stages its files and moves them in place at
the end, so a killed or failed run leaves no partial results behind."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

__all__ = ["atomic_write_text", "dumps_json", "write_csv_rows", "StagedOutput"]


def dumps_json(obj) -> str:
    # allow_nan=False: non-finite values would make the file invalid JSON
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def atomic_write_text(path, text: str):
    """Write via a temp file in the same directory plus os.replace."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv_rows(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    width = len(header)
    for r in rows:
        if len(r) != width:
            raise ValueError("CSV rows must be rectangular")
        lines.append(",".join(repr(float(v)) if not isinstance(v, (int, str)) else str(v) for v in r))
    return "\n".join(lines) + "\n"


class StagedOutput:
    """Collect output files in memory and commit them together.

    ``commit`` writes every file atomically; if any write fails, the files
    already moved in are removed again.
    """

    def __init__(self, directory):
        self.directory = Path(directory)
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str):
        if name in self.files:
            raise ValueError(f"duplicate output {name}")
        self.files[name] = text

    def add_json(self, name: str, obj):
        self.add(name, dumps_json(obj))

    @property
    def names(self) -> list[str]:
        return sorted(self.files)

    def commit(self, last: Sequence[str] = ()):
        """Write all files; names in ``last`` are written after the rest."""
        self.directory.mkdir(parents=True, exist_ok=True)
        order = [n for n in self.names if n not in last] + [n for n in last if n in self.files]
        done = []
        try:
            for name in order:
                atomic_write_text(self.directory / name, self.files[name])
                done.append(name)
        except BaseException:
            for name in done:
                try:
                    os.unlink(self.directory / name)
                except OSError:
                    pass
            raise
