"""
GRU checkpoints (GRUP) and structured mask files (BSPM)
"""
import numpy as np

from .gru_service import PARAM_ORDER, PRUNABLE_MATRICES, GruParams
from .pruning_service import BlockPartition, StructuredMask
from ..utils.binary_utils import BinaryReader, BinaryWriter, read_bytes, write_bytes
from ..utils.errors import CorruptionError, InvariantViolationError, ToolkitError

CHECKPOINT_MAGIC = b"GRUP"
MASK_MAGIC = b"BSPM"
FORMAT_VERSION = 1


def encode_checkpoint(params):
    params.validate()
    writer = BinaryWriter().magic(CHECKPOINT_MAGIC).u32(FORMAT_VERSION)
    writer.u32(params.input_dim).u32(params.hidden_dim).u32(params.num_classes)
    for name in PARAM_ORDER:
        value = getattr(params, name)
        writer.u32(value.size).f64_array(value.ravel())
    return writer.getvalue()


def decode_checkpoint(data):
    reader = BinaryReader(data)
    reader.expect_magic(CHECKPOINT_MAGIC)
    reader.expect_version(FORMAT_VERSION)
    I, H, C = reader.u32("input_dim"), reader.u32("hidden_dim"), reader.u32("num_classes")
    params = GruParams.zeros(I, H, C)
    shapes = params.expected_shapes()
    for name in PARAM_ORDER:
        start = reader.offset
        count = reader.u32(f"{name} size")
        if count != int(np.prod(shapes[name])):
            raise CorruptionError(f"{name} holds {count} values, expected shape {shapes[name]}",
                                  tensor=name, offset=start)
        setattr(params, name, reader.f64_array(count, name).reshape(shapes[name]))
    reader.finish()
    return params


def save_checkpoint(params, path):
    write_bytes(path, encode_checkpoint(params))


def load_checkpoint(path):
    params = decode_checkpoint(read_bytes(path))
    try:
        return params.validate()
    except ToolkitError as e:
        raise CorruptionError(f"Checkpoint {path} holds invalid weights: {e.message}", path=str(path))


def encode_masks(masks):
    """Masks keyed by matrix name, written in prunable-matrix order"""
    writer = BinaryWriter().magic(MASK_MAGIC).u32(FORMAT_VERSION)
    names = [name for name in PRUNABLE_MATRICES if name in masks]
    unknown = sorted(set(masks) - set(names))
    if unknown:
        raise InvariantViolationError(f"Masks name unknown matrices: {', '.join(unknown)}", names=unknown)
    writer.u32(len(names))
    for name in names:
        mask = masks[name].validate()
        writer.u32(PRUNABLE_MATRICES.index(name)).u32(mask.rows).u32(mask.cols)
        writer.u32(mask.partition.num_r).u32(mask.partition.num_c)
        writer.counted_u32_array(mask.kept_rows)
        for blocks in mask.kept_cols:
            for cols in blocks:
                writer.counted_u32_array(cols)
    return writer.getvalue()


def decode_masks(data):
    reader = BinaryReader(data)
    reader.expect_magic(MASK_MAGIC)
    reader.expect_version(FORMAT_VERSION)
    masks = {}
    for _ in range(reader.u32("record count")):
        start = reader.offset
        index = reader.u32("matrix id")
        if index >= len(PRUNABLE_MATRICES):
            raise CorruptionError(f"Unknown matrix id {index}", offset=start)
        name = PRUNABLE_MATRICES[index]
        if name in masks:
            raise CorruptionError(f"Duplicate mask for {name}", offset=start)
        rows, cols = reader.u32("rows"), reader.u32("cols")
        partition = BlockPartition(reader.u32("num_r"), reader.u32("num_c"))
        try:
            partition.validate_for(rows, cols)
        except ToolkitError as e:
            raise CorruptionError(f"Mask for {name}: {e.message}", offset=start)
        strips, blocks = partition.grid_shape(rows, cols)
        reader.require(4 + 4 * strips * blocks, f"a mask layout for {name}")
        kept_rows = reader.counted_u32_array("kept rows")
        kept_cols = [[reader.counted_u32_array("kept columns") for _ in range(blocks)]
                     for _ in partition.row_bounds(rows)]
        mask = StructuredMask(rows, cols, partition, kept_rows, kept_cols)
        try:
            mask.validate()
        except InvariantViolationError as e:
            raise CorruptionError(f"Mask for {name}: {e.message}", offset=start)
        masks[name] = mask
    reader.finish()
    return masks


def save_masks(masks, path):
    write_bytes(path, encode_masks(masks))


def load_masks(path):
    return decode_masks(read_bytes(path))
