#!/usr/bin/python3
"""Disk formats: 8-bit PNG images, JSON sidecars and JSON-lines records."""
import json
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(grid: np.ndarray) -> np.ndarray:
    """Quantise an HxWxC image in [-1, 1] to 0..255 (round half up)."""
    grid = np.clip(np.asarray(grid, dtype=np.float64), -1.0, 1.0)
    return np.floor((grid + 1.0) * 127.5 + 0.5).astype(np.uint8)


def from_uint8(data: np.ndarray) -> np.ndarray:
    """Map 0..255 pixel values back to float32 in [-1, 1]."""
    return (np.asarray(data, dtype=np.float32) / 127.5 - 1.0)


def save_png(path, grid: np.ndarray) -> Path:
    """
    Write an HxWx3 image in [-1, 1] as a lossless 8-bit PNG.

    Parent directories are created as needed. Returns the path.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(grid)).save(path, "PNG")
    return path


def load_png(path) -> np.ndarray:
    """Read a PNG written by save_png back into an HxWx3 float array."""
    with Image.open(path) as img:
        return from_uint8(np.array(img.convert("RGB")))


def list_images(directory) -> list[Path]:
    """Return all PNG paths in a directory, sorted by file name."""
    directory = Path(directory)
    if not directory.exists():
        return []
    return sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix == ".png"
    )


def write_sidecar(path, info: dict) -> Path:
    """
    Save info as a JSON sidecar next to path (same stem, .json suffix).

    Returns the sidecar path.
    """
    json_path = Path(path).with_suffix(".json")
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(
        json.dumps(info, indent=2, sort_keys=True), encoding="utf-8"
    )
    return json_path


def read_sidecar(path) -> dict | None:
    """
    Load the JSON sidecar of path, if it exists.

    Returns a dict on success, or None if no sidecar is present.
    """
    json_path = Path(path).with_suffix(".json")
    try:
        return json.loads(json_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        return None


def write_jsonl(path, records) -> Path:
    """Write an iterable of dicts as JSON lines, replacing the file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    return path


def append_jsonl(path, record: dict):
    """Append a single record to a JSON-lines file."""
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    """Read every non-blank line of a JSON-lines file."""
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def dumps(data) -> str:
    """Stable, indented JSON text used for every JSON file we write."""
    return json.dumps(data, indent=2, sort_keys=True)
