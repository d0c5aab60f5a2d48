"""
Artifact I/O shared by the estimators and the CLI.

- JSON payloads (reports, checkpoints, graphs)
- CSV tables via pandas at full float precision
- Content hashes so every artifact can be traced back to its inputs
"""
import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd


def _to_builtin(obj):
    if isinstance(obj, dict):
        return {str(k): _to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _to_builtin(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def load_json(path, default=None):
    path = Path(path)
    if not path.exists():
        return default
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_to_builtin(obj), f, indent=2, ensure_ascii=False, sort_keys=True)
        f.write("\n")
    return path


def save_frame(path, df: pd.DataFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return path


def content_hash(*parts) -> str:
    """Git-style blob SHA-1 over canonical JSON of config objects and raw file bytes."""
    payload = b""
    for part in parts:
        if isinstance(part, (bytes, bytearray)):
            payload += bytes(part)
        elif isinstance(part, Path):
            payload += part.read_bytes()
        else:
            payload += json.dumps(_to_builtin(part), sort_keys=True).encode("utf-8")
    header = f"blob {len(payload)}\0".encode("utf-8")
    return hashlib.sha1(header + payload).hexdigest()
