"""CSV and JSON output with the config hash stamped into every file.

CSV files start with a ``# config_hash=<hash>`` comment line, then a header.
Floats are written with ``repr`` so write -> read -> write is byte-identical.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

HASH_PREFIX = "# config_hash="


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if hasattr(value, "item"):  # numpy scalar; np.float64 would repr as "np.float64(...)"
        return _cell(value.item())
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text):
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def csv_text(header, rows, config_hash):
    buf = io.StringIO()
    buf.write(f"{HASH_PREFIX}{config_hash}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows, config_hash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(csv_text(header, rows, config_hash))
    return path


def read_csv(path):
    """Return ``(config_hash, header, rows)`` with numeric cells parsed."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(HASH_PREFIX):
        raise ValueError(f"{path}: missing config hash line")
    config_hash = lines[0][len(HASH_PREFIX):]
    reader = csv.reader(lines[1:])
    header = next(reader)
    rows = [[_parse(c) for c in r] for r in reader]
    return config_hash, header, rows


def json_safe(obj):
    """Recursively replace non-finite floats with None and numpy types with Python ones."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if hasattr(obj, "tolist"):
        return json_safe(obj.tolist())
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    return obj


def write_json(path, payload, config_hash):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"config_hash": config_hash, **json_safe(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
