import numpy as np
import pytest

from bspgru.services.checkpoint_service import (
    decode_checkpoint,
    decode_masks,
    encode_checkpoint,
    encode_masks,
    load_checkpoint,
    load_masks,
    save_checkpoint,
    save_masks,
)
from bspgru.services.pruning_service import BlockPartition, StructuredMask
from bspgru.utils.errors import (
    BadMagicError,
    BadVersionError,
    CorruptionError,
    MissingFileError,
    TruncationError,
)


def _assert_same(a, b):
    for name, value in a.tensors().items():
        np.testing.assert_array_equal(value, getattr(b, name))


def test_checkpoint_roundtrip(tmp_path, small_params):
    path = tmp_path / "model" / "checkpoint.grup"
    save_checkpoint(small_params, str(path))
    _assert_same(load_checkpoint(str(path)), small_params)
    assert path.read_bytes()[:4] == b"GRUP"


def test_checkpoint_bytes_are_stable(small_params):
    assert encode_checkpoint(small_params) == encode_checkpoint(small_params.copy())


def test_checkpoint_parse_errors(small_params):
    data = encode_checkpoint(small_params)
    with pytest.raises(BadMagicError) as info:
        decode_checkpoint(b"XRUP" + data[4:])
    assert info.value.offset == 0
    with pytest.raises(BadVersionError) as info:
        decode_checkpoint(data[:4] + (2).to_bytes(4, "little") + data[8:])
    assert info.value.offset == 4
    with pytest.raises(CorruptionError):
        decode_checkpoint(data + b"\x00")
    for cut in range(0, len(data), 7):
        with pytest.raises(TruncationError):
            decode_checkpoint(data[:cut])


def test_missing_file(tmp_path):
    with pytest.raises(MissingFileError):
        load_checkpoint(str(tmp_path / "absent.grup"))


def test_masks_roundtrip(tmp_path, make_bsp):
    _, a = make_bsp(1, 8, 6, 2, 3)
    b = StructuredMask.full(6, 6, BlockPartition(1, 1))
    path = str(tmp_path / "masks.bspm")
    save_masks({"W_h": a, "U_r": b}, path)
    loaded = load_masks(path)
    assert sorted(loaded) == ["U_r", "W_h"]
    np.testing.assert_array_equal(loaded["W_h"].grid, a.grid)
    np.testing.assert_array_equal(loaded["U_r"].grid, b.grid)
    assert loaded["W_h"].partition == BlockPartition(2, 3)


def test_mask_parse_errors(make_bsp):
    _, mask = make_bsp(2, 6, 6, 2, 2)
    data = encode_masks({"W_z": mask})
    for cut in range(len(data)):
        with pytest.raises(TruncationError):
            decode_masks(data[:cut])
    with pytest.raises(BadMagicError):
        decode_masks(b"BSPX" + data[4:])
    bad_id = bytearray(data)
    bad_id[12:16] = (9).to_bytes(4, "little")
    with pytest.raises(CorruptionError):
        decode_masks(bytes(bad_id))


def _u32(value):
    return int(value).to_bytes(4, "little")


def test_oversized_mask_header_is_rejected_before_allocating():
    data = (b"BSPM" + _u32(1) + _u32(1) + _u32(0) + _u32(1) + _u32(0xFFFFFFFF) + _u32(1) + _u32(0xFFFFFFFF)
            + _u32(0))
    with pytest.raises(TruncationError) as info:
        decode_masks(data)
    assert info.value.offset == 32
