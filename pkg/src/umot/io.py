"""Reading and writing measures: CSV point clouds and PGM grids."""

from __future__ import annotations

import csv
import json
import os
import re

import numpy as np

from .errors import InputError
from .measures import DiscreteMeasure

__all__ = [
    "read_csv_measure",
    "write_csv_measure",
    "write_csv_columns",
    "read_pgm",
    "write_pgm",
    "image_to_measure",
    "write_json",
]


def read_csv_measure(path) -> DiscreteMeasure:
    """Read a ``x1,...,xd,w`` CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(header) < 2 or header[-1] != "w" or any(
                h != f"x{i + 1}" for i, h in enumerate(header[:-1])):
            raise InputError(f"{path}: expected header x1,...,xd,w, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise InputError(f"{path}: no support points")
    data = np.array(rows)
    return DiscreteMeasure(data[:, :-1], data[:, -1])


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv_measure(path, measure: DiscreteMeasure) -> None:
    d = measure.dim
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(d)] + ["w"])
        for pt, wt in zip(measure.points, measure.weights):
            w.writerow([_fmt(v) for v in pt] + [_fmt(wt)])


def write_csv_columns(path, columns: dict) -> None:
    """Write equally long named columns, shortest repr per value."""
    names = list(columns)
    cols = [np.asarray(columns[n], dtype=float).reshape(-1) for n in names]
    n = {c.shape[0] for c in cols}
    if len(n) != 1:
        raise InputError("columns must have equal length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(v) for v in row])


_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _header_tokens(data: bytes, count: int):
    pos, out = 0, []
    while len(out) < count:
        m = _TOKEN.match(data, pos)
        if m is None:
            raise InputError("truncated PGM header")
        out.append(m.group(2))
        pos = m.end()
    return out, pos


def read_pgm(path):
    """Read a P2 or P5 graymap; returns ``(image, maxval)`` as float array and int."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise InputError(f"{path}: not a PGM file (magic {magic!r})")
    (mg, w, h, maxval), pos = _header_tokens(data, 4)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise InputError(f"{path}: malformed PGM header") from None
    if not 0 < maxval < 65536:
        raise InputError(f"{path}: unsupported maxval {maxval}")
    if magic == b"P2":
        vals = data[pos:].split()
        if len(vals) < w * h:
            raise InputError(f"{path}: expected {w * h} samples, got {len(vals)}")
        img = np.array([int(v) for v in vals[: w * h]], dtype=float)
    else:
        body = data[pos + 1:]  # single whitespace after maxval
        dtype = ">u1" if maxval < 256 else ">u2"
        nbytes = w * h * np.dtype(dtype).itemsize
        if len(body) < nbytes:
            raise InputError(f"{path}: truncated raster")
        img = np.frombuffer(body[:nbytes], dtype=dtype).astype(float)
    return img.reshape(h, w), maxval


def write_pgm(path, image, maxval: int = 65535) -> float:
    """Write a binary (P5) graymap scaled so the image maximum maps to ``maxval``.

    Returns the scale factor (value per gray level) for the sidecar summary.
    """
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise InputError("PGM output needs a 2D array")
    top = float(img.max()) if img.size else 0.0
    scale = top / maxval if top > 0 else 1.0
    q = np.clip(np.rint(img / scale), 0, maxval)
    dtype = ">u1" if maxval < 256 else ">u2"
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(q.astype(dtype).tobytes())
    return scale


def image_to_measure(image, normalize: str = "sum", spacing=1.0,
                     maxval: int = 255, scale: float = 1.0) -> DiscreteMeasure:
    """Grid measure from gray values.

    ``normalize`` is ``"sum"`` (mass 1), ``"maxval"`` (divide by the file's
    max gray value) or ``"none"``; ``scale`` multiplies afterwards.
    """
    img = np.asarray(image, dtype=float)
    if np.any(img < 0):
        raise InputError("image densities must be non-negative")
    if normalize == "sum":
        total = img.sum()
        if total <= 0:
            raise InputError("cannot normalise an all-zero image")
        img = img / total
    elif normalize == "maxval":
        img = img / maxval
    elif normalize != "none":
        raise InputError(f"unknown normalisation {normalize!r}")
    return DiscreteMeasure.on_grid(img * scale, spacing=spacing)


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
