from typing import List
import numpy as np
from . import iobase
from ..graph import GraphUniverse
from ..semantic import NeighborLists

EMBEDDING_MAGIC = b"TBGE"
NEIGHBOR_MAGIC = b"TBGN"
FORMAT_VERSION = 1


class TextEmbeddingMatrix:
    """Frozen text vectors, one row per node key"""

    def __init__(self, keys: List[str], rows: np.ndarray, source_tag=""):
        rows = np.asarray(rows)
        if rows.ndim != 2 or rows.shape[0] != len(keys):
            raise iobase.FormatError("Expected one row per key, got " + str(rows.shape) + " for "
                                     + str(len(keys)) + " keys")
        if len(set(keys)) != len(keys):
            raise iobase.FormatError("Duplicate node keys in text embedding matrix")
        self.keys = list(keys)
        self.rows = rows
        self.source_tag = source_tag
        self._positions = {key: position for position, key in enumerate(self.keys)}

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.keys)

    def row(self, key: str) -> np.ndarray:
        return self.rows[self._positions[key]]

    def aligned(self, universe: GraphUniverse) -> "TextEmbeddingMatrix":
        """Reorders the rows into universe index order; every registered node needs exactly one row"""
        unknown = [key for key in self.keys if universe.get(key) is None]
        if unknown:
            raise iobase.FormatError("Unknown node key '" + unknown[0] + "' in text embedding matrix")
        missing = [key for key in universe.keys() if key not in self._positions]
        if missing:
            raise iobase.FormatError("No text embedding for node '" + missing[0] + "'")
        order = np.array([self._positions[key] for key in universe.keys()], dtype=np.int64)
        return TextEmbeddingMatrix(universe.keys(), self.rows[order], self.source_tag)

    def with_rows(self, rows: np.ndarray, source_tag=None) -> "TextEmbeddingMatrix":
        return TextEmbeddingMatrix(self.keys, rows, self.source_tag if source_tag is None else source_tag)


def write_embedding_matrix(filename: str, matrix: TextEmbeddingMatrix) -> None:
    """Writes a matrix in the TBGE format (float32 little-endian values)"""
    writer = iobase.BinaryWriter(EMBEDDING_MAGIC, FORMAT_VERSION)
    writer.u64(len(matrix))
    writer.u32(matrix.dim)
    for key in matrix.keys:
        writer.text(key)
    writer.array(matrix.rows, "<f4")
    writer.write(filename)


def read_embedding_matrix(filename: str, universe=None, source_tag=None) -> TextEmbeddingMatrix:
    """Reads a TBGE file; with a universe, rows are resolved against its registry and put in index order"""
    reader = iobase.read_binary(filename, EMBEDDING_MAGIC, FORMAT_VERSION)
    count = reader.u64()
    dim = reader.u32()
    keys = [reader.text() for _ in range(count)]
    values_offset = reader.offset
    values = reader.array(count * dim, "<f4")
    reader.finish()

    rows = values.reshape(count, dim)
    bad_rows = np.flatnonzero(~np.all(np.isfinite(rows), axis=1))
    if bad_rows.size:
        position = int(bad_rows[0])
        raise iobase.FormatError("Non-finite value in row of node '" + keys[position] + "' (byte offset "
                                 + str(values_offset + position * dim * 4) + ")")
    matrix = TextEmbeddingMatrix(keys, rows, source_tag if source_tag is not None else filename)
    return matrix.aligned(universe) if universe is not None else matrix


def write_neighbor_cache(filename: str, neighbors: NeighborLists) -> None:
    """Writes neighbor lists in the TBGN format"""
    writer = iobase.BinaryWriter(NEIGHBOR_MAGIC, FORMAT_VERSION)
    writer.u64(len(neighbors))
    writer.u32(neighbors.k)
    writer.array(neighbors.query_indices, "<i8")
    writer.array(neighbors.neighbor_indices, "<i8")
    writer.array(neighbors.similarities, "<f8")
    writer.write(filename)


def read_neighbor_cache(filename: str) -> NeighborLists:
    """Reads neighbor lists from a TBGN file"""
    reader = iobase.read_binary(filename, NEIGHBOR_MAGIC, FORMAT_VERSION)
    count = reader.u64()
    k = reader.u32()
    queries = reader.array(count, "<i8")
    indices = reader.array(count * k, "<i8").reshape(count, k)
    sims = reader.array(count * k, "<f8").reshape(count, k)
    reader.finish()
    return NeighborLists(queries, indices, sims)
