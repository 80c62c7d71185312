"""Raster files: flat little-endian float32 data with JSON sidecars, plus viewable exports."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_raster(path, array, **meta) -> Path:
    """Write ``array`` to ``<path>.f32`` and its sidecar to ``<path>.json``.

    Returns the data file path. ``meta`` is merged into the sidecar.
    """
    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    data_path = base.with_suffix(".f32")
    arr = np.ascontiguousarray(array, dtype="<f4")
    arr.tofile(data_path)
    sidecar = {"file": data_path.name, "shape": list(arr.shape), "dtype": "<f4", **meta}
    write_json(base.with_suffix(".json"), sidecar)
    return data_path


def read_raster(path) -> tuple[np.ndarray, dict]:
    """Read a raster given either its ``.f32``/``.json`` path or the common stem."""
    base = Path(path)
    if base.suffix in (".f32", ".json"):
        base = base.with_suffix("")
    meta = read_json(base.with_suffix(".json"))
    data = np.fromfile(base.parent / meta["file"], dtype=meta.get("dtype", "<f4"))
    return data.reshape(meta["shape"]), meta


def read_f32(path, shape) -> np.ndarray:
    return np.fromfile(path, dtype="<f4").reshape(shape)


def _scaled_u16(img):
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    span = hi - lo if hi > lo else 1.0
    return np.round((img - lo) / span * 65535).astype(np.uint16), lo, hi


def export_viewable(path, img) -> dict:
    """Write 16-bit PGM and PNG views of ``img``; returns the min-max scaling used."""
    from PIL import Image

    base = Path(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    u16, lo, hi = _scaled_u16(img)
    h, w = u16.shape
    with open(base.with_suffix(".pgm"), "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(u16.astype(">u2").tobytes())
    Image.fromarray(u16).save(base.with_suffix(".png"))
    return {"view_min": lo, "view_max": hi}
