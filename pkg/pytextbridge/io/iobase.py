import struct
import zlib
import numpy as np
from .. import utils


class InputFileError(utils.TextBridgeError):
    code = "INPUT_FILE_ERROR"


class FormatError(utils.TextBridgeError):
    code = "FORMAT_ERROR"


class IOClient:
    """Base class for file import/export clients"""

    def __init__(self, verbose=False):
        """Constructor"""
        self.printer = utils.VerbosePrinter(verbose)


class BinaryWriter:
    """Assembles a little-endian binary file: magic, u16 version, payload, trailing CRC32"""

    def __init__(self, magic: bytes, version: int):
        self.chunks = [magic, struct.pack("<H", version)]

    def u32(self, value: int) -> None:
        self.chunks.append(struct.pack("<I", value))

    def u64(self, value: int) -> None:
        self.chunks.append(struct.pack("<Q", value))

    def text(self, value: str) -> None:
        """Writes a u32 length-prefixed UTF-8 string"""
        encoded = value.encode("utf-8")
        self.u32(len(encoded))
        self.chunks.append(encoded)

    def array(self, values: np.ndarray, dtype: str) -> None:
        """Writes the raw values of an array in the given little-endian dtype"""
        self.chunks.append(np.ascontiguousarray(values, dtype=dtype).tobytes())

    def content(self) -> bytes:
        body = b"".join(self.chunks)
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    def write(self, filename: str) -> None:
        utils.atomic_write_bytes(filename, self.content())


class BinaryReader:
    """Reads a file written by BinaryWriter, reporting byte offsets in every error"""

    def __init__(self, content: bytes, magic: bytes, version: int, filename=""):
        self.content = content
        self.filename = filename
        self.offset = 0
        self.end = len(content) - 4
        found = content[:len(magic)]
        if found != magic:
            raise self.error("Magic bytes " + repr(found) + " do not match expected " + repr(magic))
        self.offset = len(magic)
        found_version = self.u16()
        if found_version != version:
            raise self.error("Unsupported format version " + str(found_version), self.offset - 2)

    def error(self, message: str, offset=None) -> FormatError:
        location = self.offset if offset is None else offset
        name = "'" + self.filename + "' " if self.filename else ""
        return FormatError("File " + name + "at byte offset " + str(location) + ": " + message)

    def _take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > self.end:
            raise self.error("Truncated payload, expected " + str(size) + " more bytes")
        chunk = self.content[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u16(self) -> int:
        if self.offset + 2 > len(self.content):
            raise self.error("Truncated header")
        value = struct.unpack_from("<H", self.content, self.offset)[0]
        self.offset += 2
        return value

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def text(self) -> str:
        length = self.u32()
        start = self.offset
        try:
            return self._take(length).decode("utf-8")
        except UnicodeDecodeError:
            raise self.error("Invalid UTF-8 string", start)

    def array(self, count: int, dtype: str) -> np.ndarray:
        size = count * np.dtype(dtype).itemsize
        return np.frombuffer(self._take(size), dtype=dtype).copy()

    def finish(self) -> None:
        """Checks that the payload is fully consumed and verifies the CRC32"""
        if len(self.content) < self.offset + 4:
            raise self.error("Missing CRC32")
        if self.offset != self.end:
            raise self.error(str(self.end - self.offset) + " unexpected bytes before CRC32")
        expected = struct.unpack_from("<I", self.content, self.end)[0]
        actual = zlib.crc32(self.content[:self.end]) & 0xFFFFFFFF
        if expected != actual:
            raise self.error("CRC32 mismatch", self.end)


def read_binary(filename: str, magic: bytes, version: int) -> BinaryReader:
    """Opens a binary file for reading; missing files raise an InputFileError"""
    try:
        content = utils.read_bytes(filename)
    except FileNotFoundError as e:
        raise InputFileError(str(e), code="MISSING_INPUT")
    return BinaryReader(content, magic, version, filename)
