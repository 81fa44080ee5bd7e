"""Raster and label-map files.

Two formats are understood:

* netpbm PGM, plain (P2) or raw (P5), 8- or 16-bit samples;
* CSV with two header lines ``width=<int>`` and ``height=<int>`` followed
  by the row-major samples, one per line or comma/space separated.

A multiband image is described by a JSON manifest::

    {"bands": [{"path": "band1.pgm", "name": "b1"}, "band2.csv"]}

Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .core import Partition, densify_labels
from .segmenters import MultibandImage

__all__ = [
    "read_pgm",
    "write_pgm",
    "read_csv_raster",
    "write_csv_raster",
    "read_raster",
    "load_image",
    "load_label_map",
    "write_label_map",
    "write_palette",
]

_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*([^\s#]+)")


class RasterFormatError(ValueError):
    pass


def read_pgm(path):
    """Read a PGM file.

    Returns
    -------
    ndarray of shape (height, width)
        uint8 or uint16 samples.
    """
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise RasterFormatError(f"{path}: truncated PGM header")
        fields.append(m.group(2))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P2", b"P5"):
        raise RasterFormatError(f"{path}: not a PGM file (magic {magic!r})")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise RasterFormatError(f"{path}: malformed PGM header") from None
    if width < 1 or height < 1 or not 0 < maxval < 65536:
        raise RasterFormatError(f"{path}: bad PGM dimensions or maxval")
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    n = width * height
    if magic == b"P5":
        raw = data[pos + 1:pos + 1 + n * np.dtype(dtype).itemsize]
        if len(raw) < n * np.dtype(dtype).itemsize:
            raise RasterFormatError(f"{path}: truncated PGM raster")
        values = np.frombuffer(raw, dtype=dtype)
    else:
        tokens = data[pos:].split()
        if len(tokens) < n:
            raise RasterFormatError(f"{path}: truncated PGM raster")
        values = np.array([int(t) for t in tokens[:n]])
    if values.max(initial=0) > maxval:
        raise RasterFormatError(f"{path}: sample exceeds maxval")
    out_type = np.uint8 if maxval < 256 else np.uint16
    return values.astype(out_type).reshape(height, width)


def write_pgm(path, array, maxval=None, plain=False):
    """Write a 2-D non-negative integer array as PGM (raw P5 by default)."""
    array = np.asarray(array)
    if array.ndim != 2:
        raise ValueError("PGM holds a 2-D array")
    top = int(array.max(initial=0))
    if array.min(initial=0) < 0 or top > 65535:
        raise ValueError("PGM samples must lie in [0, 65535]")
    maxval = max(top, 1) if maxval is None else int(maxval)
    height, width = array.shape
    header = f"P{2 if plain else 5}\n{width} {height}\n{maxval}\n".encode()
    if plain:
        rows = [" ".join(str(int(v)) for v in row) for row in array]
        body = ("\n".join(rows) + "\n").encode()
    elif maxval < 256:
        body = array.astype(np.uint8).tobytes()
    else:
        body = array.astype(">u2").tobytes()
    Path(path).write_bytes(header + body)


def read_csv_raster(path, dtype=np.float64):
    """Read a header CSV raster as a ``(height, width)`` array."""
    text = Path(path).read_text()
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    header = {}
    while lines and "=" in lines[0] and len(header) < 2:
        key, _, value = lines.pop(0).partition("=")
        header[key.strip().lower()] = value.strip()
    try:
        width, height = int(header["width"]), int(header["height"])
    except (KeyError, ValueError):
        raise RasterFormatError(
            f"{path}: CSV raster needs 'width=' and 'height=' header lines"
        ) from None
    tokens = [t for ln in lines for t in re.split(r"[,\s]+", ln) if t]
    if not tokens:
        raise RasterFormatError(f"{path}: no samples")
    if len(tokens) != width * height:
        raise RasterFormatError(
            f"{path}: {len(tokens)} samples for a {width}x{height} grid")
    try:
        values = np.array([float(t) for t in tokens])
    except ValueError:
        raise RasterFormatError(f"{path}: non-numeric sample") from None
    if np.issubdtype(np.dtype(dtype), np.integer):
        as_int = values.astype(np.int64)
        if not np.array_equal(as_int, values):
            raise RasterFormatError(f"{path}: non-integer label")
        values = as_int
    return values.reshape(height, width)


def write_csv_raster(path, array):
    array = np.asarray(array)
    height, width = array.shape
    if np.issubdtype(array.dtype, np.integer):
        body = "\n".join(str(int(v)) for v in array.reshape(-1))
    else:
        body = "\n".join(repr(float(v)) for v in array.reshape(-1))
    Path(path).write_text(f"width={width}\nheight={height}\n{body}\n")


def read_raster(path, dtype=np.float64):
    """Read PGM or CSV, chosen by extension (``.pgm`` / ``.csv``)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix in (".csv", ".txt"):
        return read_csv_raster(path, dtype=dtype)
    raise RasterFormatError(f"{path}: unknown raster extension {suffix!r}")


def load_image(manifest_path):
    """Load a multiband image from its JSON band manifest."""
    manifest_path = Path(manifest_path)
    spec = json.loads(manifest_path.read_text())
    entries = spec["bands"] if isinstance(spec, dict) else spec
    if not entries:
        raise RasterFormatError(f"{manifest_path}: no bands listed")
    bands, names = [], []
    shape = None
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            entry = {"path": entry}
        path = manifest_path.parent / entry["path"]
        band = read_raster(path).astype(np.float64)
        if shape is None:
            shape = band.shape
        elif band.shape != shape:
            raise RasterFormatError(
                f"band {path} is {band.shape[1]}x{band.shape[0]}, expected "
                f"{shape[1]}x{shape[0]}")
        bands.append(band.reshape(-1))
        names.append(entry.get("name", f"band{i + 1}"))
    return MultibandImage(shape[1], shape[0], np.stack(bands), tuple(names))


def load_label_map(path, return_mapping=False):
    """Load a label map as a densified Partition.

    With ``return_mapping=True`` also returns the original-value -> dense
    label dictionary.
    """
    grid = read_raster(path, dtype=np.int64)
    labels, mapping = densify_labels(grid.reshape(-1))
    part = Partition(labels, grid.shape[1], grid.shape[0])
    return (part, mapping) if return_mapping else part


def write_label_map(path, partition):
    """Write a partition as PGM or CSV according to the file extension."""
    grid = partition.to_image()
    if Path(path).suffix.lower() == ".pgm":
        write_pgm(path, grid, maxval=max(partition.num_labels - 1, 1))
    else:
        write_csv_raster(path, grid)


def write_palette(path, n_labels):
    """Write a JSON palette of evenly spaced hues, ``label -> "#rrggbb"``."""
    import colorsys

    colors = {}
    for label in range(n_labels):
        r, g, b = colorsys.hsv_to_rgb(label / max(n_labels, 1), 0.65, 0.95)
        colors[str(label)] = "#{:02x}{:02x}{:02x}".format(
            round(r * 255), round(g * 255), round(b * 255))
    Path(path).write_text(json.dumps(colors, indent=2) + "\n")
