"""File-format helpers: atomic writes, exact float text, JSON emission."""

from __future__ import annotations

import contextlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterator, Sequence


def fmt_float(x: float) -> str:
    """17 significant digits: enough to round-trip any float64 exactly."""
    return format(float(x), ".17g")


@contextlib.contextmanager
def atomic_write(path: str | os.PathLike, mode: str = "w") -> Iterator[Any]:
    """Write to a temporary sibling, then rename over ``path``.

    If the block raises (or the process dies) the destination is untouched.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        newline = "" if "b" not in mode else None
        with os.fdopen(fd, mode, newline=newline) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _encode(obj: Any, indent: int, level: int) -> str:
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, (int,)) and not isinstance(obj, bool):
        return str(obj)
    if hasattr(obj, "dtype") and getattr(obj, "ndim", 1) == 0:
        obj = obj.item()
        return _encode(obj, indent, level)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"cannot serialize non-finite float {obj!r} as JSON")
        return fmt_float(obj)
    if hasattr(obj, "tolist"):
        return _encode(obj.tolist(), indent, level)
    pad = "\n" + " " * (indent * (level + 1)) if indent else ""
    end = "\n" + " " * (indent * level) if indent else ""
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{" + ",".join(items) + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        # numeric leaves stay on one line
        if all(not isinstance(v, (dict, list, tuple)) and not hasattr(v, "tolist") for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        items = [f"{pad}{_encode(v, indent, level + 1)}" for v in obj]
        return "[" + ",".join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps_json(obj: Any, indent: int = 2) -> str:
    """Like :func:`json.dumps` but floats carry 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def write_json(path: str | os.PathLike, obj: Any) -> None:
    with atomic_write(path) as fh:
        fh.write(dumps_json(obj))


def write_csv(path: str | os.PathLike, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    """Write rows; floats are rendered exactly, ``None`` as ``null``."""

    def cell(v: Any) -> str:
        if v is None:
            return "null"
        if isinstance(v, (float,)) or (hasattr(v, "dtype") and v.dtype.kind == "f"):
            return fmt_float(v)
        return str(v)

    with atomic_write(path) as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(cell(v) for v in row) + "\n")
