"""Binary Netpbm image I/O (PGM P5 grayscale, PPM P6 color).

Only maxval 255 (one byte per sample) and 65535 (two bytes, big-endian) are
accepted; intensities map linearly onto [0, 1]. The formats are bit-exact and
dependency-free, which keeps experiment outputs reproducible byte for byte.
"""

import numpy as np

from .errors import FormatError
from .imaging import Image

__all__ = ["read_image", "write_image"]

_WHITESPACE = b" \t\n\r\x0b\x0c"


class _Scanner:
    """Header tokenizer that remembers byte offsets for error reporting."""

    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def skip_separators(self):
        # whitespace and '#' comments may separate header tokens
        while self.pos < len(self.blob):
            byte = self.blob[self.pos : self.pos + 1]
            if byte in (b"#",):
                end = self.blob.find(b"\n", self.pos)
                if end < 0:
                    raise FormatError("unterminated comment", self.pos)
                self.pos = end + 1
            elif byte in _WHITESPACE:
                self.pos += 1
            else:
                return

    def token(self):
        self.skip_separators()
        start = self.pos
        while self.pos < len(self.blob) and self.blob[self.pos : self.pos + 1] not in _WHITESPACE:
            if self.blob[self.pos : self.pos + 1] == b"#":
                break
            self.pos += 1
        if self.pos == start:
            raise FormatError("unexpected end of header", start)
        return self.blob[start : self.pos], start

    def integer(self, name):
        tok, start = self.token()
        try:
            value = int(tok)
        except ValueError:
            raise FormatError(f"{name} is not an integer: {tok!r}", start) from None
        return value, start


def read_image(path):
    """Read a binary PGM/PPM file into an Image with intensities in [0, 1]."""
    with open(path, "rb") as handle:
        blob = handle.read()
    scanner = _Scanner(blob)
    magic, start = scanner.token()
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"unsupported magic {magic!r}, expected P5 or P6", start)
    width, at = scanner.integer("width")
    if width < 1:
        raise FormatError(f"width must be positive, got {width}", at)
    height, at = scanner.integer("height")
    if height < 1:
        raise FormatError(f"height must be positive, got {height}", at)
    maxval, at = scanner.integer("maxval")
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}, expected 255 or 65535", at)
    # exactly one whitespace byte separates the header from the payload
    if scanner.pos >= len(blob) or blob[scanner.pos : scanner.pos + 1] not in _WHITESPACE:
        raise FormatError("missing whitespace before payload", scanner.pos)
    payload_start = scanner.pos + 1

    samples = height * width * channels
    bytes_per = 1 if maxval == 255 else 2
    expected = samples * bytes_per
    payload = blob[payload_start:]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, got {len(payload)}",
            payload_start + len(payload),
        )
    if len(payload) > expected:
        raise FormatError(
            f"{len(payload) - expected} trailing bytes after payload",
            payload_start + expected,
        )
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    values = np.frombuffer(payload, dtype=dtype).astype(float) / maxval
    return Image(height, width, channels, values)


def write_image(img, path, maxval=255):
    """Write an Image as binary PGM (1 channel) or PPM (3 channels).

    Intensities are mapped to [0, maxval] with round-to-nearest; values
    outside [0, 1] are clipped.
    """
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported maxval {maxval}, expected 255 or 65535")
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n%d\n" % (img.width, img.height, maxval)
    quantized = np.rint(np.clip(img.data, 0.0, 1.0) * maxval)
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    with open(path, "wb") as handle:
        handle.write(header)
        handle.write(quantized.astype(dtype).tobytes())
