"""Minimal NIfTI-1 reader/writer for single-file images (.nii / .nii.gz).

Covers what the pipeline needs: scalar volumes of common dtypes, the
single-file "n+1" magic, scl_slope/scl_inter intensity scaling on read,
and deterministic gzip output (mtime pinned to 0 so identical voxel data
produces identical bytes on disk).
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC_SINGLE = b"n+1\x00"

# NIfTI-1 datatype codes
_CODE_TO_DTYPE = {
    2: "u1",
    4: "i2",
    8: "i4",
    16: "f4",
    64: "f8",
    256: "i1",
    512: "u2",
}
_DTYPE_TO_CODE = {
    np.dtype(np.uint8): 2,
    np.dtype(np.int16): 4,
    np.dtype(np.int32): 8,
    np.dtype(np.float32): 16,
    np.dtype(np.float64): 64,
}


def write_nifti(path: str | Path, data: np.ndarray, pixdim=(1.0, 1.0, 1.0), descrip: str = "mmsynth") -> None:
    """Write an array as a single-file NIfTI-1 image.

    Data is stored in Fortran (column-major) voxel order as the format
    requires. Up to 7 dimensions are accepted; dtype must be one of
    uint8/int16/int32/float32/float64.
    """
    path = Path(path)
    data = np.asarray(data)
    if data.ndim < 1 or data.ndim > 7:
        raise DataError(f"cannot write {data.ndim}D array as NIfTI (1..7 dims supported)")
    code = _DTYPE_TO_CODE.get(data.dtype)
    if code is None:
        raise DataError(f"unsupported dtype {data.dtype} for NIfTI output")

    dim = [data.ndim] + list(data.shape) + [1] * (7 - data.ndim)
    pd = ([1.0] + list(pixdim) + [1.0] * 8)[:8]

    hdr = bytearray(VOX_OFFSET)  # header + 4-byte extension flag, all zeroed
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<c", hdr, 38, b"r")
    struct.pack_into("<8h", hdr, 40, *dim)
    struct.pack_into("<h", hdr, 70, code)
    struct.pack_into("<h", hdr, 72, data.dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, *pd)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<f", hdr, 116, 0.0)  # scl_inter
    struct.pack_into("<B", hdr, 123, 2)  # spatial units: mm
    desc = descrip.encode()[:79]
    struct.pack_into(f"<{len(desc)}s", hdr, 148, desc)
    struct.pack_into("<h", hdr, 254, 1)  # sform_code: scanner
    struct.pack_into("<4f", hdr, 280, pd[1], 0.0, 0.0, 0.0)
    struct.pack_into("<4f", hdr, 296, 0.0, pd[2], 0.0, 0.0)
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, pd[3], 0.0)
    struct.pack_into("<4s", hdr, 344, MAGIC_SINGLE)

    payload = bytes(hdr) + np.asfortranarray(data).tobytes(order="F")
    if path.suffix == ".gz":
        with open(path, "wb") as f:
            with gzip.GzipFile(filename="", mode="wb", fileobj=f, mtime=0) as gz:
                gz.write(payload)
    else:
        path.write_bytes(payload)


def read_nifti(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read a single-file NIfTI-1 image.

    Returns the voxel array (C-contiguous, native byte order, scl slope and
    intercept applied when nontrivial) and a small header-info dict.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                raw = f.read()
        else:
            raw = path.read_bytes()
    except (OSError, EOFError, gzip.BadGzipFile) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(raw) < VOX_OFFSET:
        raise DataError(f"truncated NIfTI file: {path}")

    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    endian = "<"
    if sizeof_hdr != HEADER_SIZE:
        (sizeof_hdr,) = struct.unpack_from(">i", raw, 0)
        if sizeof_hdr != HEADER_SIZE:
            raise DataError(f"not a NIfTI-1 file: {path}")
        endian = ">"

    magic = struct.unpack_from("4s", raw, 344)[0]
    if magic != MAGIC_SINGLE:
        raise DataError(f"unsupported NIfTI magic {magic!r} in {path} (single-file n+1 expected)")

    dim = struct.unpack_from(f"{endian}8h", raw, 40)
    ndim = dim[0]
    if ndim < 1 or ndim > 7:
        raise DataError(f"invalid dim[0]={ndim} in {path}")
    shape = tuple(int(d) for d in dim[1 : 1 + ndim])
    (datatype,) = struct.unpack_from(f"{endian}h", raw, 70)
    if datatype not in _CODE_TO_DTYPE:
        raise DataError(f"unsupported NIfTI datatype code {datatype} in {path}")
    dtype = np.dtype(endian + _CODE_TO_DTYPE[datatype])
    pixdim = struct.unpack_from(f"{endian}8f", raw, 76)
    (vox_offset,) = struct.unpack_from(f"{endian}f", raw, 108)
    (scl_slope,) = struct.unpack_from(f"{endian}f", raw, 112)
    (scl_inter,) = struct.unpack_from(f"{endian}f", raw, 116)
    descrip = struct.unpack_from("80s", raw, 148)[0].split(b"\x00", 1)[0].decode(errors="replace")

    offset = int(vox_offset) if vox_offset >= VOX_OFFSET else VOX_OFFSET
    count = int(np.prod(shape))
    nbytes = count * dtype.itemsize
    if len(raw) < offset + nbytes:
        raise DataError(f"truncated NIfTI data in {path}: expected {nbytes} bytes")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset).reshape(shape, order="F")
    data = np.ascontiguousarray(data.astype(dtype.newbyteorder("="), copy=False))

    slope, inter = float(scl_slope), float(scl_inter)
    if not np.isfinite(slope) or slope == 0.0:
        slope = 1.0
    if not np.isfinite(inter):
        inter = 0.0
    if slope != 1.0 or inter != 0.0:
        data = data.astype(np.float32) * slope + inter

    info = {"pixdim": tuple(float(p) for p in pixdim[1:4]), "descrip": descrip}
    return data, info
