"""Minimal codec for the engine's tensor container and PPM images.

Implements the normative byte layouts directly (magic "EFT1", u16 version,
u8 dtype 1=f32/2=u8/3=u32, u8 ndim, u32 dims, little-endian row-major
payload) so the hook talks to the engine's files without importing it.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import HookError

MAGIC = b"EFT1"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1"), 3: np.dtype("<u4")}
_CODES = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2, np.dtype(np.uint32): 3}

UNMATCHED_U32 = 0xFFFFFFFF


def encode(data: np.ndarray, with_magic: bool = True) -> bytes:
    data = np.ascontiguousarray(data)
    code = _CODES.get(data.dtype)
    if code is None:
        raise HookError(f"cannot encode dtype {data.dtype}")
    head = (MAGIC if with_magic else b"") + struct.pack("<HBB", VERSION, code, data.ndim)
    dims = struct.pack(f"<{data.ndim}I", *data.shape)
    return head + dims + data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes()


def decode(buf: bytes, offset: int = 0, with_magic: bool = True) -> tuple[np.ndarray, int]:
    if with_magic:
        if buf[offset:offset + 4] != MAGIC:
            raise HookError(f"bad tensor magic {buf[offset:offset + 4]!r}")
        offset += 4
    version, code, ndim = struct.unpack_from("<HBB", buf, offset)
    offset += 4
    if version != VERSION:
        raise HookError(f"unsupported tensor version {version}")
    dtype = _DTYPES.get(code)
    if dtype is None:
        raise HookError(f"unknown dtype code {code}")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims)
    return np.array(arr), offset + count * dtype.itemsize


def write(path, data: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode(data))


def read(path) -> np.ndarray:
    with open(path, "rb") as f:
        arr, _ = decode(f.read())
    return arr


# --- PPM (P6) -----------------------------------------------------------------

def write_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise HookError(f"PPM image must be h x w x 3, got shape {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h) + image.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    parts = buf.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P6":
        raise HookError(f"{path}: not a simple P6 PPM")
    w, h = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise HookError(f"{path}: only maxval 255 supported")
    data = parts[3][: 3 * w * h]
    if len(data) < 3 * w * h:
        raise HookError(f"{path}: truncated PPM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()
