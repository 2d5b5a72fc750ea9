"""File formats: binary PGM (P5) for label maps, images and probability maps, JSON, CSV.

Images are 16-bit PGM in fixed point: ``v = round((x + IMAGE_OFFSET) * IMAGE_SCALE)``
clipped to ``[0, 65535]``, so intensities in ``[-8, 8)`` round-trip to
within ``1 / 8192``. Label maps are 8-bit with 255 for unlabeled pixels.
Multi-channel images and probability maps are stored as one PGM per plane
plus an index JSON that names them.
"""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path

import numpy as np

from .core import Image, LabelMap, ProbMap, ScribbleSegError

SCHEMA_VERSION = 1
IMAGE_OFFSET = 8.0
IMAGE_SCALE = 4096.0
PROB_SCALE = 65535.0


class FormatError(ScribbleSegError):
    pass


# --------------------------------------------------------------------------- PGM

def write_pgm(path, data: np.ndarray, maxval: int) -> None:
    a = np.asarray(data)
    if a.ndim != 2:
        raise FormatError("PGM holds a single 2-D plane")
    h, w = a.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    body = a.astype(">u2" if maxval > 255 else np.uint8).tobytes()
    Path(path).write_bytes(header + body)


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens (comments skipped) and the body offset."""
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i:i + 1].isspace():
            i += 1
        if buf[i:i + 1] == b"#":
            while i < len(buf) and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j:j + 1].isspace():
            j += 1
        if j == i:
            raise FormatError("truncated PGM header")
        out.append(buf[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte ends the header


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Return ``(plane, maxval)``."""
    try:
        buf = Path(path).read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e}") from e
    toks, off = _tokens(buf, 4)
    if toks[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM")
    try:
        w, h, maxval = (int(t) for t in toks[1:])
    except ValueError as e:
        raise FormatError(f"{path}: bad PGM header") from e
    if not (0 < maxval < 65536) or w < 1 or h < 1:
        raise FormatError(f"{path}: bad PGM header")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    n = w * h * dtype.itemsize
    if len(buf) - off < n:
        raise FormatError(f"{path}: truncated pixel data")
    plane = np.frombuffer(buf, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return plane.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_labels(path, labels: LabelMap) -> None:
    write_pgm(path, labels.labels, 255)


def read_labels(path) -> LabelMap:
    plane, maxval = read_pgm(path)
    if maxval > 255:
        raise FormatError(f"{path}: label maps must be 8-bit")
    return LabelMap(plane)


def _encode_image(plane: np.ndarray) -> np.ndarray:
    return np.clip(np.round((plane + IMAGE_OFFSET) * IMAGE_SCALE), 0, 65535).astype(np.uint16)


def _decode_image(plane: np.ndarray) -> np.ndarray:
    return plane.astype(np.float64) / IMAGE_SCALE - IMAGE_OFFSET


def write_image(path, image: Image) -> None:
    """Single channel: one PGM at ``path``. Otherwise ``path`` is the index JSON."""
    path = Path(path)
    if image.channels == 1:
        write_pgm(path, _encode_image(image.data[..., 0]), 65535)
        return
    names = []
    for c in range(image.channels):
        name = f"{path.stem}_c{c}.pgm"
        write_pgm(path.parent / name, _encode_image(image.data[..., c]), 65535)
        names.append(name)
    write_json(path, {"kind": "image", "channels": names})


def read_image(path) -> Image:
    path = Path(path)
    if path.suffix == ".json":
        idx = read_json(path)
        if idx.get("kind") != "image":
            raise FormatError(f"{path}: not an image index")
        planes = [_decode_image(read_pgm(path.parent / n)[0]) for n in idx["channels"]]
        return Image(np.stack(planes, axis=-1))
    plane, maxval = read_pgm(path)
    if maxval <= 255:
        return Image(plane.astype(np.float64) / maxval)  # plain 8-bit image, scaled to [0, 1]
    return Image(_decode_image(plane))


def write_probs(path, probs: ProbMap, extra: dict | None = None) -> None:
    """Index JSON at ``path`` plus one 16-bit plane per class; ``extra`` keys go into the index."""
    path = Path(path)
    names = []
    for k in range(probs.m):
        name = f"{path.stem}_k{k}.pgm"
        q = np.round(probs.probs[..., k] * PROB_SCALE).astype(np.uint16)
        write_pgm(path.parent / name, q, 65535)
        names.append(name)
    write_json(path, {"kind": "probmap", "classes": names, **(extra or {})})


def read_probs(path) -> tuple[ProbMap, dict]:
    """Probability map (rows renormalized after quantization) and its index dict."""
    path = Path(path)
    idx = read_json(path)
    if idx.get("kind") != "probmap":
        raise FormatError(f"{path}: not a probability-map index")
    planes = np.stack([read_pgm(path.parent / n)[0].astype(np.float64) for n in idx["classes"]], -1)
    s = planes.sum(axis=-1, keepdims=True)
    if np.any(s == 0):
        raise FormatError(f"{path}: pixel with all-zero probabilities")
    return ProbMap(planes / s), idx


# --------------------------------------------------------------------------- JSON / CSV

def dumps_json(obj: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **obj}, indent=2, sort_keys=True) + "\n"


def write_json(path, obj: dict) -> None:
    Path(path).write_text(dumps_json(obj))


def read_json(path) -> dict:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise FormatError(f"cannot read JSON {path}: {e}") from e
    if not isinstance(d, dict):
        raise FormatError(f"{path}: expected a JSON object")
    v = d.get("schema_version")
    if v != SCHEMA_VERSION:
        raise FormatError(f"{path}: unsupported schema_version {v!r}")
    return d


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, header: list, rows: list[dict]) -> None:
    """Header row then one line per dict; floats written with ``repr`` (round-trip exact)."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r.get(h, "")) for h in header])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
