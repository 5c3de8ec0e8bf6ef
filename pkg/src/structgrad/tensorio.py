"""Persistence formats: .ten tensor files, binary PGM heatmaps, CSV reports.

Tensor file layout:
    8 magic bytes  b"SGTEN1\\n\\0"
    one ASCII header line  "f64 dims=<d1,d2,...>\\n"
    raw little-endian float64 values, row-major

Round trips are bit-exact.
"""

from __future__ import annotations

import io
import os

import numpy as np

TENSOR_MAGIC = b"SGTEN1\n\0"


class TensorFormatError(ValueError):
    pass


def save_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.float64)
    if arr.ndim == 0:
        raise TensorFormatError("0-d tensors are not supported")
    dims = ",".join(str(d) for d in arr.shape)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(f"f64 dims={dims}\n".encode("ascii"))
        fh.write(arr.astype("<f8").tobytes(order="C"))


def load_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(TENSOR_MAGIC))
        if magic != TENSOR_MAGIC:
            raise TensorFormatError(f"{path}: bad magic bytes {magic!r}")
        header = _read_line(fh, path)
        if not header.startswith("f64 dims="):
            raise TensorFormatError(f"{path}: malformed header {header!r}")
        try:
            shape = tuple(int(d) for d in header[len("f64 dims="):].split(","))
        except ValueError as exc:
            raise TensorFormatError(f"{path}: malformed dims in header {header!r}") from exc
        if not shape or any(d <= 0 for d in shape):
            raise TensorFormatError(f"{path}: invalid dims {shape}")
        count = int(np.prod(shape))
        if count > 2**31:
            raise TensorFormatError(f"{path}: dimension overflow ({count} elements)")
        payload = fh.read()
    if len(payload) != 8 * count:
        raise TensorFormatError(
            f"{path}: payload holds {len(payload)} bytes, expected {8 * count} for dims {shape}"
        )
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def _read_line(fh: io.BufferedReader, path) -> str:
    raw = bytearray()
    while True:
        ch = fh.read(1)
        if not ch:
            raise TensorFormatError(f"{path}: truncated file (unterminated header)")
        if ch == b"\n":
            break
        raw.extend(ch)
        if len(raw) > 4096:
            raise TensorFormatError(f"{path}: header line too long")
    try:
        return raw.decode("ascii")
    except UnicodeDecodeError as exc:
        raise TensorFormatError(f"{path}: non-ASCII header") from exc


def save_pgm(path: str | os.PathLike, values: np.ndarray) -> None:
    """Min-max normalize a 2-d map to [0, 255] and write binary PGM (P5).

    A constant map normalizes to all-128 by convention.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise TensorFormatError("PGM export expects a 2-d map")
    lo, hi = float(arr.min()), float(arr.max())
    if hi > lo:
        scaled = np.rint((arr - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.full_like(arr, 128.0)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(scaled.astype(np.uint8).tobytes(order="C"))


def format_float(value: float) -> str:
    """CSV number rendering: '.' decimal point, 9 significant digits."""
    return f"{float(value):.9g}"


def write_csv(path: str | os.PathLike, header: list[str], rows: list[list]) -> None:
    """Write a CSV report with LF endings and 9-significant-digit floats."""
    lines = [",".join(header)]
    for row in rows:
        cells = [format_float(c) if isinstance(c, (float, np.floating)) else str(c) for c in row]
        lines.append(",".join(cells))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
