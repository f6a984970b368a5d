"""
Little-endian binary reading and writing shared by the model file formats
"""
import os
import struct

import numpy as np

from .errors import BadMagicError, BadVersionError, CorruptionError, MissingFileError, TruncationError
from .logging_utils import debug_print

U32 = struct.Struct("<I")
U8 = struct.Struct("<B")
U32_MAX = 2 ** 32 - 1


class BinaryWriter:
    """Collects header fields, id lists and value arrays into one byte string"""

    def __init__(self):
        self.parts = []

    def magic(self, tag):
        self.parts.append(tag)
        return self

    def u32(self, value):
        value = int(value)
        if not 0 <= value <= U32_MAX:
            raise CorruptionError(f"Value {value} does not fit in u32", value=value)
        self.parts.append(U32.pack(value))
        return self

    def u8(self, value):
        self.parts.append(U8.pack(int(value)))
        return self

    def u32_array(self, values):
        self.parts.append(np.asarray(values, dtype="<u4").tobytes())
        return self

    def counted_u32_array(self, values):
        values = np.asarray(values)
        return self.u32(values.size).u32_array(values)

    def f64_array(self, values):
        self.parts.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
        return self

    def getvalue(self):
        return b"".join(self.parts)


class BinaryReader:
    """Cursor over a byte string; every failure reports the byte offset it hit"""

    def __init__(self, data):
        self.data = bytes(data)
        self.offset = 0

    def _take(self, size, what):
        if self.offset + size > len(self.data):
            raise TruncationError(f"Truncated while reading {what}: need {size} bytes, "
                                  f"{len(self.data) - self.offset} left", self.offset)
        start = self.offset
        self.offset += size
        return self.data[start:self.offset]

    def expect_magic(self, tag):
        found = self._take(len(tag), "magic")
        if found != tag:
            raise BadMagicError(f"Expected magic {tag!r}, found {found!r}", self.offset - len(tag))

    def expect_version(self, version):
        start = self.offset
        found = self.u32("version")
        if found != version:
            raise BadVersionError(f"Unsupported version {found}, expected {version}", start)

    def u32(self, what="u32"):
        return U32.unpack(self._take(4, what))[0]

    def u8(self, what="u8"):
        return U8.unpack(self._take(1, what))[0]

    def u32_array(self, count, what="ids"):
        return np.frombuffer(self._take(4 * count, what), dtype="<u4").astype(np.int64)

    def counted_u32_array(self, what="ids"):
        return self.u32_array(self.u32(f"{what} count"), what)

    def f64_array(self, count, what="values"):
        return np.frombuffer(self._take(8 * count, what), dtype="<f8").astype(np.float64)

    @property
    def remaining(self):
        return len(self.data) - self.offset

    def require(self, size, what):
        """Fail before allocating when the header promises more bytes than remain"""
        if size > self.remaining:
            raise TruncationError(f"Header promises {what} of at least {size} bytes, "
                                  f"{self.remaining} left", self.offset)

    def finish(self):
        """Raise if anything follows the structure just read"""
        if self.offset != len(self.data):
            raise CorruptionError(f"{len(self.data) - self.offset} trailing bytes after offset {self.offset}",
                                  offset=self.offset)


def read_bytes(path):
    if not os.path.isfile(path):
        raise MissingFileError(f"File not found: {path}", path=str(path))
    with open(path, 'rb') as f:
        return f.read()


def write_bytes(path, data):
    os.makedirs(os.path.dirname(os.fspath(path)) or ".", exist_ok=True)
    with open(path, 'wb') as f:
        f.write(data)
    debug_print(f"Wrote {len(data)} bytes to {path}")
