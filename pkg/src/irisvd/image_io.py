"""Grayscale image carrier, PGM reading/writing, and basic raster transforms.

Only 8-bit PGM (P2 ASCII / P5 binary) is supported; it is simple enough to
keep golden tests bit-exact.  Rounding everywhere in this module is
round-half-away-from-zero so that expected values can be reproduced by hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PgmParseError(ValueError):
    """Malformed PGM data.  Message names the byte offset of the problem."""


def round_half_away(values):
    """Round to nearest integer, halves away from zero.

    Works on scalars and numpy arrays; returns the same kind.  Python's
    built-in round() is half-to-even, which makes hand-computed oracle
    values awkward, so every rounding step in the pipeline funnels through
    this helper instead.
    """
    arr = np.asarray(values, dtype=np.float64)
    out = np.sign(arr) * np.floor(np.abs(arr) + 0.5)
    if np.isscalar(values) or np.ndim(values) == 0:
        return int(out)
    return out.astype(np.int64)


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Rectangular grid of 8-bit intensities, shape (height, width)."""

    pixels: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.pixels)
        if raw.dtype.kind == "f" and not np.all(raw == np.floor(raw)):
            raise ValueError("GrayImage intensities must be integral")
        arr = np.array(raw, dtype=np.int64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"GrayImage needs a 2-D array, got shape {arr.shape}")
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("GrayImage intensities must lie in [0, 255]")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @classmethod
    def from_flat(cls, width: int, height: int, values) -> "GrayImage":
        """Build from a row-major flat sequence of width*height intensities."""
        arr = np.asarray(list(values), dtype=np.int64)
        if arr.size != width * height:
            raise ValueError(
                f"expected {width * height} pixels for {width}x{height}, got {arr.size}"
            )
        return cls(arr.reshape(height, width))

    def __eq__(self, other) -> bool:
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class BinaryImage:
    """Grid of {0, 1} bits, shape (height, width)."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.array(self.bits, dtype=np.int64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"BinaryImage needs a 2-D array, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ValueError("BinaryImage bits must be exactly 0 or 1")
        arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "bits", arr)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def foreground_count(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryImage) and np.array_equal(self.bits, other.bits)


# ---------------------------------------------------------------------------
# PGM parsing

_WHITESPACE = b" \t\n\r\x0b\x0c"


class _Tokenizer:
    """Pulls whitespace-separated header tokens, skipping '#' comments."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def skip_separators(self):
        d, n = self.data, len(self.data)
        while self.pos < n:
            b = self.data[self.pos : self.pos + 1]
            if b in (b"#",):
                while self.pos < n and d[self.pos : self.pos + 1] not in (b"\n", b"\r"):
                    self.pos += 1
            elif b and b in _WHITESPACE:
                self.pos += 1
            else:
                return

    def next_token(self, what: str) -> tuple[bytes, int]:
        self.skip_separators()
        if self.pos >= len(self.data):
            raise PgmParseError(
                f"truncated header: expected {what} at byte offset {self.pos}"
            )
        start = self.pos
        d, n = self.data, len(self.data)
        while self.pos < n:
            b = d[self.pos : self.pos + 1]
            if b in _WHITESPACE or b == b"#":
                break
            self.pos += 1
        return d[start : self.pos], start

    def next_int(self, what: str) -> int:
        token, offset = self.next_token(what)
        try:
            return int(token)
        except ValueError:
            raise PgmParseError(
                f"expected integer {what} at byte offset {offset}, got {token!r}"
            ) from None


def read_pgm(data: bytes) -> GrayImage:
    """Parse P5 (binary) or P2 (ASCII) PGM bytes into a GrayImage.

    Header comments ('#' to end of line) are permitted.  maxval must be at
    most 255; pixel values are kept verbatim (no maxval rescaling), so a
    write/read cycle is bit-exact.
    """
    if len(data) < 2 or data[:1] != b"P" or data[1:2] not in (b"2", b"5"):
        raise PgmParseError(
            f"not a PGM: expected magic 'P5' or 'P2' at byte offset 0, "
            f"got {bytes(data[:2])!r}"
        )
    magic = bytes(data[:2])
    tok = _Tokenizer(data)
    tok.pos = 2

    width = tok.next_int("width")
    height = tok.next_int("height")
    if width < 1 or height < 1:
        raise PgmParseError(f"invalid dimensions {width}x{height} in header")
    maxval_offset = tok.pos
    maxval = tok.next_int("maxval")
    if maxval > 255:
        raise PgmParseError(
            f"maxval {maxval} unsupported (limit 255) at byte offset {maxval_offset}"
        )
    if maxval < 1:
        raise PgmParseError(f"invalid maxval {maxval} at byte offset {maxval_offset}")

    count = width * height
    if magic == b"P5":
        # Exactly one whitespace byte separates maxval from the payload.
        if tok.pos >= len(data) or data[tok.pos : tok.pos + 1] not in _WHITESPACE:
            raise PgmParseError(
                f"expected single whitespace before payload at byte offset {tok.pos}"
            )
        payload_start = tok.pos + 1
        payload = data[payload_start:]
        if len(payload) < count:
            raise PgmParseError(
                f"truncated pixel data: expected {count} payload bytes, found "
                f"{len(payload)} (payload starts at byte offset {payload_start})"
            )
        if len(payload) > count:
            raise PgmParseError(
                f"trailing data: expected {count} payload bytes, found "
                f"{len(payload)} (payload starts at byte offset {payload_start})"
            )
        arr = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    else:
        values = np.empty(count, dtype=np.int64)
        for i in range(count):
            values[i] = tok.next_int(f"pixel {i}")
        tok.skip_separators()
        if tok.pos < len(data):
            raise PgmParseError(
                f"trailing data after {count} pixels at byte offset {tok.pos}"
            )
        arr = values

    if arr.max(initial=0) > maxval:
        bad = int(np.argmax(arr > maxval))
        raise PgmParseError(
            f"pixel {bad} has value {int(arr[bad])} exceeding maxval {maxval}"
        )
    return GrayImage(arr.reshape(height, width))


def write_pgm(img: GrayImage, ascii: bool = False) -> bytes:
    """Serialize to PGM bytes; P2 when ascii=True, else P5.

    Round-trip law: read_pgm(write_pgm(img)) == img, bit-exact.
    """
    header = f"{'P2' if ascii else 'P5'}\n{img.width} {img.height}\n255\n"
    if not ascii:
        return header.encode("ascii") + img.pixels.tobytes()
    lines = []
    for row in img.pixels:
        line: list[str] = []
        length = 0
        for v in row:
            s = str(int(v))
            if length + len(s) + (1 if line else 0) > 69:
                lines.append(" ".join(line))
                line, length = [], 0
            line.append(s)
            length += len(s) + (1 if length else 0)
        if line:
            lines.append(" ".join(line))
    return header.encode("ascii") + ("\n".join(lines) + "\n").encode("ascii")


def read_pgm_file(path) -> GrayImage:
    return read_pgm(Path(path).read_bytes())


def write_pgm_file(path, img: GrayImage, ascii: bool = False) -> None:
    Path(path).write_bytes(write_pgm(img, ascii=ascii))


# ---------------------------------------------------------------------------
# Raster transforms

def contrast_stretch(img: GrayImage, low: int, high: int) -> GrayImage:
    """Affine remap of [low, high] onto [0, 255], clamped.

    Each pixel p maps to clamp(round((p - low) * 255 / (high - low)), 0, 255)
    with round-half-away-from-zero.  Monotone in p.
    """
    if low >= high:
        raise ValueError(f"invalid contrast range: low={low} must be < high={high}")
    scaled = (img.pixels.astype(np.float64) - low) * 255.0 / (high - low)
    out = np.clip(round_half_away(scaled), 0, 255)
    return GrayImage(out)


def block_downsample(img: GrayImage, block: int) -> GrayImage:
    """Average block x block tiles into single pixels (rounded mean).

    Output size is (floor(w/block), floor(h/block)); trailing rows/columns
    that do not fill a whole tile are discarded.
    """
    if block < 1:
        raise ValueError(f"block must be a positive integer, got {block}")
    if img.width < block or img.height < block:
        raise ValueError(
            f"image {img.width}x{img.height} smaller than block {block}"
        )
    out_h = img.height // block
    out_w = img.width // block
    trimmed = img.pixels[: out_h * block, : out_w * block].astype(np.float64)
    tiles = trimmed.reshape(out_h, block, out_w, block)
    means = tiles.mean(axis=(1, 3))
    return GrayImage(round_half_away(means))
