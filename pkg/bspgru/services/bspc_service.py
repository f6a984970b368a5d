"""
Block-based structured pruning compact (BSPC) storage

A BSPC matrix stores one global list of surviving rows, the kept columns of
every (row strip, column block), and for each of those a dense value grid
over (surviving rows of the strip) x (kept columns of the block). Indices
are therefore per row and per column instead of per element as in CSR.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import csr_matrix

from .pruning_service import BlockPartition, StructuredMask
from ..utils.binary_utils import BinaryReader, BinaryWriter, read_bytes, write_bytes
from ..utils.errors import CorruptionError, FormatInfeasibilityError, InvariantViolationError, ToolkitError

BSPC_MAGIC = b"BSPC"
BSPC_VERSION = 1


@dataclass
class BspcMatrix:
    rows: int
    cols: int
    partition: BlockPartition
    kept_rows: np.ndarray
    kept_cols: list
    values: list
    row_perm: np.ndarray = None

    def strip_rows(self, strip):
        r0, r1 = self.partition.row_bounds(self.rows)[strip]
        return self.kept_rows[(self.kept_rows >= r0) & (self.kept_rows < r1)]

    @property
    def nnz(self):
        """Stored entries, explicit zeros included"""
        return int(sum(grid.size for blocks in self.values for grid in blocks))

    @property
    def mask(self):
        return StructuredMask(self.rows, self.cols, self.partition, self.kept_rows.copy(),
                              [[cols.copy() for cols in blocks] for blocks in self.kept_cols])

    def with_perm(self, row_perm):
        return replace(self, row_perm=np.asarray(row_perm, dtype=np.int64))

    def blocks(self):
        """Yield (strip, block, strip rows, kept columns, value grid)"""
        for strip, (col_blocks, grids) in enumerate(zip(self.kept_cols, self.values)):
            rows = self.strip_rows(strip)
            for block, (cols, grid) in enumerate(zip(col_blocks, grids)):
                yield strip, block, rows, cols, grid

    def validate(self):
        """Raise CorruptionError on malformed index lists or value grids"""
        try:
            self.partition.validate_for(self.rows, self.cols)
            self.mask.validate()
        except ToolkitError as e:
            raise CorruptionError(f"Malformed BSPC matrix: {e.message}", **e.details)
        if len(self.values) != len(self.kept_cols):
            raise CorruptionError("Value grids must cover every strip")
        for strip, block, rows, cols, grid in self.blocks():
            if grid.shape != (rows.size, cols.size):
                raise CorruptionError(f"Value grid of block ({strip}, {block}) has shape {grid.shape}",
                                      strip=strip, block=block, expected=[rows.size, cols.size])
        if self.row_perm is not None:
            if not np.array_equal(np.sort(self.row_perm), self.kept_rows):
                raise CorruptionError("row_perm is not a permutation of kept_rows")
        return self


@dataclass
class CsrMatrix:
    """scipy CSR over a support that may hold explicit zeros"""

    matrix: csr_matrix

    @property
    def rows(self):
        return self.matrix.shape[0]

    @property
    def cols(self):
        return self.matrix.shape[1]

    @property
    def row_ptr(self):
        return self.matrix.indptr

    @property
    def col_idx(self):
        return self.matrix.indices

    @property
    def values(self):
        return self.matrix.data

    @property
    def nnz(self):
        return int(self.matrix.nnz)

    @property
    def index_entries(self):
        return int(self.row_ptr.size + self.col_idx.size)

    def to_dense(self):
        return self.matrix.toarray()


def encode(M, mask):
    """Pack M into BSPC over mask; nonzeros outside the mask are rejected"""
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (mask.rows, mask.cols):
        raise InvariantViolationError(f"Matrix shape {M.shape} does not match mask {(mask.rows, mask.cols)}",
                                      shape=list(M.shape))
    mask.validate()
    offending = np.argwhere((M != 0) & ~mask.grid)
    if offending.size:
        raise FormatInfeasibilityError(f"{len(offending)} nonzeros lie outside the structured mask",
                                       coordinates=offending)

    kept_cols, values = [], []
    for strip, blocks in enumerate(mask.kept_cols):
        rows = mask.strip_rows(strip)
        # a strip without surviving rows keeps no columns
        strip_cols = [np.asarray(cols, dtype=np.int64) if rows.size else np.zeros(0, dtype=np.int64)
                      for cols in blocks]
        kept_cols.append(strip_cols)
        values.append([M[np.ix_(rows, cols)].copy() for cols in strip_cols])
    return BspcMatrix(mask.rows, mask.cols, mask.partition, np.asarray(mask.kept_rows, dtype=np.int64),
                      kept_cols, values)


def decode(B, permuted=False):
    """Dense matrix of B; with permuted, row kept_rows[i] holds original row row_perm[i]"""
    dense = np.zeros((B.rows, B.cols))
    for _, _, rows, cols, grid in B.blocks():
        if rows.size and cols.size:
            dense[np.ix_(rows, cols)] = grid
    if permuted and B.row_perm is not None:
        reordered = np.zeros_like(dense)
        reordered[B.kept_rows] = dense[B.row_perm]
        return reordered
    return dense


def to_csr(M):
    """CSR of a dense matrix (nonzeros) or of a BspcMatrix (stored entries)"""
    if isinstance(M, BspcMatrix):
        support = M.mask.grid
        dense = decode(M)
    else:
        dense = np.asarray(M, dtype=np.float64)
        support = dense != 0
    rows, cols = dense.shape
    row_idx, col_idx = np.nonzero(support)
    row_ptr = np.zeros(rows + 1, dtype=np.int64)
    np.cumsum(np.bincount(row_idx, minlength=rows), out=row_ptr[1:])
    # built from its three arrays so explicit zeros inside the support stay stored
    return CsrMatrix(csr_matrix((dense[row_idx, col_idx], col_idx, row_ptr), shape=(rows, cols)))


def index_overhead(B):
    """Index integers needed by BSPC and by CSR for the same stored entries"""
    bspc = int(B.kept_rows.size + sum(cols.size for blocks in B.kept_cols for cols in blocks))
    return {"bspc_index_entries": bspc, "csr_index_entries": B.nnz + B.rows + 1}


def serialize(B):
    B.validate()
    writer = BinaryWriter().magic(BSPC_MAGIC).u32(BSPC_VERSION)
    writer.u32(B.rows).u32(B.cols).u32(B.partition.num_r).u32(B.partition.num_c)
    writer.counted_u32_array(B.kept_rows)
    if B.row_perm is None:
        writer.u8(0)
    else:
        writer.u8(1).u32_array(B.row_perm)
    for _, _, _, cols, grid in B.blocks():
        writer.counted_u32_array(cols).f64_array(grid.ravel())
    return writer.getvalue()


def deserialize(data):
    reader = BinaryReader(data)
    reader.expect_magic(BSPC_MAGIC)
    reader.expect_version(BSPC_VERSION)
    header_offset = reader.offset
    rows, cols = reader.u32("rows"), reader.u32("cols")
    partition = BlockPartition(reader.u32("num_r"), reader.u32("num_c"))
    try:
        partition.validate_for(rows, cols)
    except ToolkitError as e:
        raise CorruptionError(f"Bad BSPC header: {e.message}", offset=header_offset)
    strips, blocks = partition.grid_shape(rows, cols)
    # kept-row count, permutation flag and one column count per (strip, block)
    reader.require(5 + 4 * strips * blocks, "an index layout")

    kept_rows = reader.counted_u32_array("kept rows")
    if np.any(np.diff(kept_rows) <= 0) or (kept_rows.size and kept_rows[-1] >= rows):
        raise CorruptionError("kept_rows must be sorted unique ids below rows", offset=reader.offset)
    flag_offset = reader.offset
    flag = reader.u8("permutation flag")
    if flag > 1:
        raise CorruptionError(f"Permutation flag {flag} is not 0 or 1", offset=flag_offset)
    row_perm = reader.u32_array(kept_rows.size, "permutation") if flag else None

    B = BspcMatrix(rows, cols, partition, kept_rows, [], [], row_perm)
    for r0, r1 in partition.row_bounds(rows):
        strip_rows = int(np.count_nonzero((kept_rows >= r0) & (kept_rows < r1)))
        col_blocks, grids = [], []
        for _ in range(blocks):
            block_cols = reader.counted_u32_array("kept columns")
            grid = reader.f64_array(strip_rows * block_cols.size, "value grid")
            col_blocks.append(block_cols)
            grids.append(grid.reshape(strip_rows, block_cols.size))
        B.kept_cols.append(col_blocks)
        B.values.append(grids)
    reader.finish()
    return B.validate()


def save_bspc(B, path):
    write_bytes(path, serialize(B))


def load_bspc(path):
    return deserialize(read_bytes(path))
