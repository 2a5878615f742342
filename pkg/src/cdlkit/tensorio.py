"""CDLT binary tensor I/O and the depth-grid carrier type.

File layout (all integers little-endian):

    bytes 0..3    magic  b"CDLT"
    bytes 4..7    version, uint32 (currently 1)
    byte  8       dtype code, uint8 (0 = float32; the only defined code)
    byte  9       ndim, uint8
    then          ndim extents, uint64 each
    then          row-major float32 payload
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InputError

MAGIC = b"CDLT"
VERSION = 1
DTYPE_F32 = 0


def encode_tensor(arr: np.ndarray) -> bytes:
    """Serialize an array into CDLT bytes (values stored as float32)."""
    a = np.ascontiguousarray(arr, dtype="<f4")
    if a.ndim < 1 or a.ndim > 255:
        raise InputError(f"tensor rank {a.ndim} outside [1, 255]")
    header = MAGIC + struct.pack("<IBB", VERSION, DTYPE_F32, a.ndim)
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return header + dims + a.tobytes()


def decode_tensor(raw: bytes, check_finite: bool = True,
                  source: str = "<bytes>") -> np.ndarray:
    """Inverse of encode_tensor; validates magic, version, dtype, length."""
    if len(raw) < 10:
        raise FormatError(f"{source}: truncated header ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise FormatError(f"{source}: bad magic {raw[:4]!r}")
    version, dtype_code, ndim = struct.unpack("<IBB", raw[4:10])
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}")
    if dtype_code != DTYPE_F32:
        raise FormatError(f"{source}: unsupported dtype code {dtype_code}")
    dims_end = 10 + 8 * ndim
    if len(raw) < dims_end:
        raise FormatError(f"{source}: truncated dimension list")
    dims = struct.unpack(f"<{ndim}Q", raw[10:dims_end])
    count = 1
    for d in dims:
        count *= d
    payload = raw[dims_end:]
    if len(payload) != 4 * count:
        raise FormatError(
            f"{source}: payload holds {len(payload) // 4} floats, dims "
            f"{list(dims)} require {count}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    if check_finite and not np.isfinite(arr).all():
        raise FormatError(f"{source}: non-finite values in payload")
    # frombuffer views are read-only; hand back an owned array
    return arr.astype(np.float32, copy=True)


def write_tensor(arr: np.ndarray, path) -> None:
    """Write `arr` as a CDLT file. Values are stored as float32."""
    raw = encode_tensor(arr)
    try:
        with open(path, "wb") as fh:
            fh.write(raw)
    except OSError as exc:
        raise InputError(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor(path, check_finite: bool = True) -> np.ndarray:
    """Read a CDLT file back into a float32 array (inverse of write_tensor)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read tensor from {path}: {exc}") from exc
    return decode_tensor(raw, check_finite=check_finite, source=str(path))


@dataclass(frozen=True)
class DepthMap:
    """A 2-D grid of depths in meters with an optional {0,1} validity mask."""

    depth: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        if d.ndim != 2:
            raise InputError(f"depth must be 2-D, got shape {d.shape}")
        object.__setattr__(self, "depth", d)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=np.float64)
            if m.shape != d.shape:
                raise InputError(f"mask shape {m.shape} != depth shape {d.shape}")
            object.__setattr__(self, "mask", m)

    @property
    def rows(self) -> int:
        return self.depth.shape[0]

    @property
    def cols(self) -> int:
        return self.depth.shape[1]

    def valid_mask(self) -> np.ndarray:
        """Boolean mask of valid pixels (all pixels when no mask is set)."""
        if self.mask is None:
            return np.ones(self.depth.shape, dtype=bool)
        return self.mask > 0.5


def as_depth_array(dm) -> np.ndarray:
    """Accept a DepthMap or a bare 2-D array and return the float64 grid."""
    if isinstance(dm, DepthMap):
        return dm.depth
    a = np.asarray(dm, dtype=np.float64)
    if a.ndim != 2:
        raise InputError(f"expected a 2-D depth grid, got shape {a.shape}")
    return a
