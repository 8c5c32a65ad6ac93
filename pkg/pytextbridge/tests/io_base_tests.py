import os
import struct
import zlib
import unittest
import tempfile
import numpy as np
from ..io import iobase


def sample_content() -> bytes:
    writer = iobase.BinaryWriter(b"TEST", 3)
    writer.u32(7)
    writer.u64(2 ** 40)
    writer.text("Grüße")
    writer.array(np.array([1.5, -2.0]), "<f8")
    return writer.content()


class TestBinaryFormat(unittest.TestCase):
    """Tests the little-endian binary container with trailing CRC32"""

    def test_layout(self):
        # Checks magic, version, payload and checksum positions
        content = sample_content()
        self.assertEqual(content[:4], b"TEST")
        self.assertEqual(struct.unpack_from("<H", content, 4)[0], 3)
        self.assertEqual(struct.unpack_from("<I", content, 6)[0], 7)
        self.assertEqual(struct.unpack_from("<I", content, len(content) - 4)[0],
                         zlib.crc32(content[:-4]) & 0xFFFFFFFF)

    def test_reader(self):
        # Reads back every value written
        reader = iobase.BinaryReader(sample_content(), b"TEST", 3)
        self.assertEqual(reader.u32(), 7)
        self.assertEqual(reader.u64(), 2 ** 40)
        self.assertEqual(reader.text(), "Grüße")
        self.assertEqual(reader.array(2, "<f8").tolist(), [1.5, -2.0])
        reader.finish()

    def test_header_errors(self):
        # Wrong magic bytes and versions are rejected
        with self.assertRaises(iobase.FormatError) as context:
            iobase.BinaryReader(sample_content(), b"XXXX", 3)
        self.assertIn("byte offset 0", str(context.exception))
        with self.assertRaises(iobase.FormatError) as context:
            iobase.BinaryReader(sample_content(), b"TEST", 4)
        self.assertIn("byte offset 4", str(context.exception))

    def test_truncation(self):
        # A truncated payload names the offset where reading stopped
        content = sample_content()
        reader = iobase.BinaryReader(content[:14], b"TEST", 3, "short.bin")
        self.assertEqual(reader.u32(), 7)
        with self.assertRaises(iobase.FormatError) as context:
            reader.u64()
        self.assertIn("'short.bin'", str(context.exception))
        self.assertIn("byte offset 10", str(context.exception))

    def test_checksum(self):
        # A flipped payload byte fails the CRC check; trailing bytes are reported
        content = bytearray(sample_content())
        content[7] ^= 0xFF
        reader = iobase.BinaryReader(bytes(content), b"TEST", 3)
        reader.u32()
        reader.u64()
        reader.text()
        reader.array(2, "<f8")
        with self.assertRaises(iobase.FormatError) as context:
            reader.finish()
        self.assertIn("CRC32", str(context.exception))

        reader = iobase.BinaryReader(sample_content(), b"TEST", 3)
        reader.u32()
        with self.assertRaises(iobase.FormatError) as context:
            reader.finish()
        self.assertIn("unexpected bytes", str(context.exception))

    def test_files(self):
        # Writes a file atomically and reads it back; missing files are reported as such
        filename = tempfile.mkstemp()[1]
        writer = iobase.BinaryWriter(b"TEST", 1)
        writer.u32(42)
        writer.write(filename)
        reader = iobase.read_binary(filename, b"TEST", 1)
        self.assertEqual(reader.u32(), 42)
        reader.finish()
        os.remove(filename)
        with self.assertRaises(iobase.InputFileError) as context:
            iobase.read_binary(filename, b"TEST", 1)
        self.assertEqual(context.exception.code, "MISSING_INPUT")


if __name__ == '__main__':
    unittest.main(verbosity=2)
