"""PGM images, the GMFACE model file, and CSV exports.

GMFACE v1 is a line-oriented text format::

    GMFACE 1
    <m> <H> <W>
    <w> <mu_x1> <mu_x2> <l11> <l21> <l22>     (m lines)

Reals are written with 17 significant digits so float64 values survive a
round trip unchanged.
"""

from __future__ import annotations

import csv
import os
import re
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import PARAMS_PER_COMPONENT, GmModel, ImageGrid, SymMatrix2
from .transform import NotPositiveDefiniteError, cholesky2

MAGIC = "GMFACE"
VERSION = 1

PathLike = os.PathLike | str


class PGMError(ValueError):
    def __init__(self, message: str, offset: int, path: Optional[PathLike] = None):
        where = f"{path}: " if path is not None else ""
        super().__init__(f"{where}{message} (byte offset {offset})")
        self.offset = offset


class ModelFormatError(ValueError):
    pass


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


# -- PGM ------------------------------------------------------------------

_TOKEN = re.compile(rb"\S+")


def _header_tokens(data: bytes, count: int, path) -> tuple[list[int], int]:
    """Read ``count`` integer header fields after the magic, skipping comments.

    Returns the values and the offset of the single whitespace byte that
    terminates the last field.
    """
    pos = 2
    values = []
    while len(values) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        match = _TOKEN.match(data, pos)
        if match is None:
            raise PGMError("unexpected end of header", pos, path)
        token = match.group()
        if not token.isdigit():
            raise PGMError(f"expected an unsigned integer, got {token[:16]!r}", pos, path)
        values.append(int(token))
        pos += len(token)
    return values, pos


def read_image(path: PathLike) -> ImageGrid:
    """Load a P2 or P5 graymap, scaling values by ``1 / maxval``."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"unsupported magic {magic!r}, expected P2 or P5", 0, path)
    (width, height, maxval), pos = _header_tokens(data, 3, path)
    if width < 1 or height < 1:
        raise PGMError(f"invalid dimensions {width}x{height}", pos, path)
    if not 1 <= maxval <= 65535:
        raise PGMError(f"maxval {maxval} outside 1..65535", pos, path)
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise PGMError("missing whitespace after header", pos, path)
    pos += 1
    n = width * height

    if magic == b"P5":
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = n * dtype.itemsize
        if len(data) - pos < need:
            raise PGMError(f"truncated raster: need {need} bytes, have {len(data) - pos}", len(data), path)
        values = np.frombuffer(data, dtype=dtype, count=n, offset=pos).astype(np.int64)
    else:
        values = []
        for match in _TOKEN.finditer(data, pos):
            token = match.group()
            if not token.isdigit():
                raise PGMError(f"bad sample {token[:16]!r}", match.start(), path)
            values.append(int(token))
            if len(values) == n:
                break
        if len(values) < n:
            raise PGMError(f"truncated raster: need {n} samples, have {len(values)}", len(data), path)
        values = np.array(values, dtype=np.int64)

    if values.max(initial=0) > maxval:
        raise PGMError(f"sample exceeds maxval {maxval}", pos, path)
    return ImageGrid((values / maxval).reshape(height, width))


def write_image(grid: ImageGrid, path: PathLike, maxval: int = 255) -> None:
    """Write a binary (P5) graymap after clamping to [0, 1]."""
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval must be in 1..65535, got {maxval}")
    levels = np.rint(np.clip(grid.pixels, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    header = f"P5\n{grid.width} {grid.height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(levels.astype(dtype).tobytes())


def load_dataset(dir_path: PathLike) -> list[ImageGrid]:
    """All ``*.pgm`` files of a directory, in sorted name order."""
    root = Path(dir_path)
    if not root.is_dir():
        raise FileNotFoundError(f"not a directory: {root}")
    files = sorted(p for p in root.iterdir() if p.suffix.lower() == ".pgm" and p.is_file())
    if not files:
        raise ValueError(f"no .pgm images in {root}")
    images = []
    for p in files:
        img = read_image(p)
        if images and img.shape != images[0].shape:
            raise ValueError(
                f"{p.name} is {img.height}x{img.width}, expected "
                f"{images[0].height}x{images[0].width} (from {files[0].name})"
            )
        images.append(img)
    return images


# -- model files ----------------------------------------------------------


def write_model(model: GmModel, path: PathLike) -> None:
    lines = [f"{MAGIC} {VERSION}", f"{model.m} {model.height} {model.width}"]
    lines += [" ".join(_fmt(v) for v in row) for row in model.params]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def _content_lines(text: str) -> list[tuple[int, str]]:
    out = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if line:
            out.append((n, line))
    return out


def read_model(path: PathLike) -> GmModel:
    """Load and validate a GMFACE file; invalid content raises ModelFormatError."""
    lines = _content_lines(Path(path).read_text(encoding="ascii"))
    if not lines:
        raise ModelFormatError(f"{path}: empty file")
    head = lines[0][1].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise ModelFormatError(f"{path}: missing {MAGIC} header")
    if head[1] != str(VERSION):
        raise ModelFormatError(f"{path}: unsupported version {head[1]!r}, expected {VERSION}")
    if len(lines) < 2:
        raise ModelFormatError(f"{path}: missing size line")
    try:
        m, height, width = (int(v) for v in lines[1][1].split())
    except ValueError:
        raise ModelFormatError(f"{path}:{lines[1][0]}: size line must hold three integers m H W") from None
    records = lines[2:]
    if len(records) != m:
        raise ModelFormatError(f"{path}: header declares {m} components, found {len(records)}")
    rows = []
    for n, line in records:
        fields = line.split()
        if len(fields) != PARAMS_PER_COMPONENT:
            raise ModelFormatError(f"{path}:{n}: expected 6 values, got {len(fields)}")
        try:
            rows.append([float(v) for v in fields])
        except ValueError:
            raise ModelFormatError(f"{path}:{n}: non-numeric value") from None
    try:
        return GmModel(np.array(rows).reshape(-1, PARAMS_PER_COMPONENT), height, width)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None


def read_precision_table(path: PathLike, height: int, width: int) -> GmModel:
    """Build a model from rows of ``w mu_x1 mu_x2 a11 a12 a22``.

    Published parameter sets usually give the precision matrix rather than
    its factor; each matrix is factored with :func:`cholesky2`.
    """
    rows = []
    for n, line in _content_lines(Path(path).read_text(encoding="utf-8")):
        fields = line.split()
        if len(fields) != 6:
            raise ModelFormatError(f"{path}:{n}: expected 6 values, got {len(fields)}")
        w, m1, m2, a11, a12, a22 = (float(v) for v in fields)
        try:
            chol = cholesky2(SymMatrix2(a11, a12, a22))
        except NotPositiveDefiniteError as exc:
            raise ModelFormatError(f"{path}:{n}: {exc}") from None
        rows.append([w, m1, m2, *chol])
    if not rows:
        raise ModelFormatError(f"{path}: no components")
    return GmModel(np.array(rows), height, width)


def common_face_model() -> GmModel:
    """The bundled 80-component common face model on a 120x120 grid."""
    ref = resources.files("gmface") / "data" / "common_face_80.txt"
    with resources.as_file(ref) as p:
        return read_precision_table(p, 120, 120)


# -- CSV exports ----------------------------------------------------------


def export_surface(grid: ImageGrid, path: PathLike, invert: bool = False) -> None:
    """One CSV row per pixel: ``r, c, x1, x2, value`` (1-based indices)."""
    values = 1.0 - grid.pixels if invert else grid.pixels
    h, w = grid.shape
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["r", "c", "x1", "x2", "value"])
        for r in range(1, h + 1):
            for c in range(1, w + 1):
                out.writerow([r, c, _fmt(r / h), _fmt(c / w), _fmt(values[r - 1, c - 1])])


def export_cross_sections(
    grid: ImageGrid,
    path: PathLike,
    rows: Iterable[int] = (),
    cols: Iterable[int] = (),
    invert: bool = False,
) -> None:
    """Write selected rows and columns as labelled series.

    Columns: ``series, index, position, value`` where ``series`` is e.g.
    ``row 40`` and ``position`` runs along the section (1-based).
    """
    values = 1.0 - grid.pixels if invert else grid.pixels
    h, w = grid.shape
    rows, cols = list(rows), list(cols)
    for r in rows:
        if not 1 <= r <= h:
            raise ValueError(f"row {r} outside 1..{h}")
    for c in cols:
        if not 1 <= c <= w:
            raise ValueError(f"column {c} outside 1..{w}")
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["series", "index", "position", "value"])
        for r in rows:
            for c in range(1, w + 1):
                out.writerow([f"row {r}", r, c, _fmt(values[r - 1, c - 1])])
        for c in cols:
            for r in range(1, h + 1):
                out.writerow([f"column {c}", c, r, _fmt(values[r - 1, c - 1])])


def export_loss_history(history: Sequence, path: PathLike) -> None:
    """CSV with columns ``epoch, l2, l_inf, total``."""
    if not history:
        raise ValueError("loss history is empty")
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["epoch", "l2", "l_inf", "total"])
        for epoch, report in history:
            out.writerow([epoch, _fmt(report.l2), _fmt(report.l_inf), _fmt(report.total)])


def read_loss_history(path: PathLike) -> list[tuple[int, float, float, float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [(int(r["epoch"]), float(r["l2"]), float(r["l_inf"]), float(r["total"])) for r in reader]
