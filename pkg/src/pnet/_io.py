"""Small file helpers: atomic writes and float formatting."""
from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import DataError


def fmt_float(x: float) -> str:
    # 17 significant digits round-trips every double exactly.
    return format(float(x), ".17g")


@contextmanager
def atomic_write(path, mode: str = "w", encoding: str | None = "utf-8"):
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
    try:
        kwargs = {"encoding": encoding, "newline": ""} if "b" not in mode else {}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_square_matrix(path, sample_ids, values, comments=()) -> None:
    """Square matrix TSV: optional ``# ...`` comment lines, then an id header."""
    with atomic_write(path) as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        fh.write("\t".join(["sample_id", *sample_ids]) + "\n")
        for sid, row in zip(sample_ids, values):
            fh.write("\t".join([sid, *(fmt_float(v) for v in row)]) + "\n")


def read_square_matrix(path):
    """Inverse of :func:`write_square_matrix`; returns ``(ids, values, comments)``."""
    comments, rows, ids = [], [], []
    header = None
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if header is None and line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            cells = line.split("\t")
            if header is None:
                header = [c.strip() for c in cells[1:]]
                continue
            if len(cells) != len(header) + 1:
                raise DataError(f"{path}: line {lineno} has {len(cells) - 1} values, expected {len(header)}")
            try:
                rows.append([float(c) for c in cells[1:]])
            except ValueError:
                raise DataError(f"{path}: non-numeric value at line {lineno}") from None
            ids.append(cells[0].strip())
    if header is None or not rows:
        raise DataError(f"{path}: no matrix found")
    if ids != header:
        raise DataError(f"{path}: row ids do not match the column header")
    return ids, np.array(rows, dtype=float), comments
