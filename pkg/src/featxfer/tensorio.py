"""Bit-exact file formats: tensor container, PPM images, keypoints, flows.

The tensor container is deliberately minimal so every consumer can implement
it from the byte layout alone:

    magic   4 bytes  b"EFT1"
    version u16 LE   (currently 1)
    dtype   u8       1 = f32, 2 = u8, 3 = u32
    ndim    u8
    dims    ndim x u32 LE
    payload row-major values, little-endian

Protocol tensor payloads reuse the same encoding minus the magic.  Rendered
images are binary PPM (P6, maxval 255): bit-exactly specifiable without
codecs.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import UNMATCHED, CorrespondenceMap, FlowMap, KeypointSet
from .errors import (
    BadMagic,
    IndexOutOfRange,
    InvariantViolation,
    ParseError,
    TruncatedPayload,
    UnsupportedDtype,
)

TENSOR_MAGIC = b"EFT1"
TENSOR_VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2, np.dtype(np.uint32): 3}
_CODE_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1"), 3: np.dtype("<u4")}

#: On-disk sentinel for UNMATCHED correspondence entries (u32).
UNMATCHED_U32 = 0xFFFFFFFF


def encode_tensor(data: np.ndarray, with_magic: bool = True) -> bytes:
    """Serialize an array (f32/u8/u32) to the tensor container layout."""
    data = np.ascontiguousarray(data)
    code = _DTYPE_CODES.get(data.dtype)
    if code is None:
        raise UnsupportedDtype(f"cannot encode dtype {data.dtype}")
    if data.ndim < 1 or data.ndim > 255:
        raise ParseError(f"unsupported ndim {data.ndim}")
    parts = []
    if with_magic:
        parts.append(TENSOR_MAGIC)
    parts.append(struct.pack("<HBB", TENSOR_VERSION, code, data.ndim))
    parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
    parts.append(data.astype(data.dtype.newbyteorder("<"), copy=False).tobytes())
    return b"".join(parts)


def decode_tensor(buf: bytes, offset: int = 0,
                  with_magic: bool = True) -> tuple[np.ndarray, int]:
    """Parse one tensor from ``buf`` at ``offset``; returns (array, next offset).

    Self-delimiting, so several tensors can be concatenated in one buffer.
    """
    if with_magic:
        if len(buf) - offset < 4:
            raise TruncatedPayload("buffer shorter than magic")
        if buf[offset:offset + 4] != TENSOR_MAGIC:
            raise BadMagic(f"bad magic {buf[offset:offset + 4]!r}")
        offset += 4
    if len(buf) - offset < 4:
        raise TruncatedPayload("buffer shorter than tensor header")
    version, code, ndim = struct.unpack_from("<HBB", buf, offset)
    offset += 4
    if version != TENSOR_VERSION:
        raise ParseError(f"unsupported tensor version {version}")
    dtype = _CODE_DTYPES.get(code)
    if dtype is None:
        raise UnsupportedDtype(f"unknown dtype code {code}")
    if ndim < 1:
        raise ParseError(f"invalid ndim {ndim}")
    if len(buf) - offset < 4 * ndim:
        raise TruncatedPayload("buffer shorter than dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    nbytes = count * dtype.itemsize
    if len(buf) - offset < nbytes:
        raise TruncatedPayload(
            f"payload holds {len(buf) - offset} bytes, header claims {nbytes}")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset).reshape(dims)
    return np.array(arr), offset + nbytes


def write_tensor(path, data: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_tensor(data))


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    arr, end = decode_tensor(buf)
    if end != len(buf):
        raise ParseError(f"{end - len(buf):+d} trailing bytes after payload")
    return arr


# --- correspondence maps ----------------------------------------------------

def write_correspondence(path, corr: CorrespondenceMap) -> None:
    """Store a correspondence as a u32 grid with 0xFFFFFFFF for UNMATCHED."""
    entries = np.array(corr.entries)
    out = np.where(entries == UNMATCHED, UNMATCHED_U32, entries).astype(np.uint32)
    write_tensor(path, out)


def read_correspondence(path) -> CorrespondenceMap:
    arr = read_tensor(path)
    if arr.dtype != np.uint32 or arr.ndim != 2:
        raise ParseError(
            f"correspondence file must be a 2-D u32 tensor, got {arr.dtype} ndim={arr.ndim}")
    entries = arr.astype(np.int64)
    entries[arr == UNMATCHED_U32] = UNMATCHED
    return CorrespondenceMap(entries)


# --- PPM (P6) ----------------------------------------------------------------

def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise ParseError(f"PPM image must be h x w x 3 uint8, got {image.dtype} {image.shape}")
    h, w = image.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + image.tobytes()


def decode_ppm(buf: bytes) -> np.ndarray:
    pos = 0

    def token():
        nonlocal pos
        while pos < len(buf):
            if buf[pos:pos + 1].isspace():
                pos += 1
            elif buf[pos:pos + 1] == b"#":
                while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TruncatedPayload("PPM header ended early")
        return buf[start:pos]

    if token() != b"P6":
        raise BadMagic("not a P6 PPM file")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as e:
        raise ParseError(f"bad PPM header field: {e}") from e
    if maxval != 255:
        raise ParseError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    nbytes = 3 * w * h
    if len(buf) - pos < nbytes:
        raise TruncatedPayload(f"PPM payload holds {len(buf) - pos} bytes, needs {nbytes}")
    return np.frombuffer(buf, dtype=np.uint8, count=nbytes, offset=pos).reshape(h, w, 3).copy()


def write_ppm(path, image: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_ppm(image))


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_ppm(f.read())


def render_correspondence(corr: CorrespondenceMap, ref_colors: np.ndarray) -> np.ndarray:
    """Paint each matched target pixel with its reference pixel's color.

    Unmatched pixels come out black.  Returns an h x w x 3 uint8 image in the
    correspondence's grid.
    """
    ref_colors = np.asarray(ref_colors)
    if ref_colors.ndim != 3 or ref_colors.shape[2] != 3:
        raise ParseError(f"reference colors must be h x w x 3, got shape {ref_colors.shape}")
    entries = corr.entries.reshape(-1)
    matched = entries != UNMATCHED
    limit = ref_colors.shape[0] * ref_colors.shape[1]
    if matched.any() and int(entries[matched].max()) >= limit:
        raise IndexOutOfRange(
            f"matched index {int(entries[matched].max())} outside reference image of {limit} pixels")
    out = np.zeros((entries.size, 3), dtype=np.uint8)
    out[matched] = ref_colors.reshape(-1, 3)[entries[matched]]
    return out.reshape(corr.height, corr.width, 3)


# --- keypoints ----------------------------------------------------------------

def read_keypoints(path) -> KeypointSet:
    """Parse a keypoint file: header line "scale s", then "x y v kappa" lines."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines:
        raise ParseError("empty keypoint file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "scale":
        raise ParseError(f"expected 'scale s' header, got {lines[0]!r}")
    try:
        scale = float(head[1])
    except ValueError as e:
        raise ParseError(f"bad scale value {head[1]!r}") from e

    points, vis, kappas = [], [], []
    for ln in lines[1:]:
        cols = ln.split()
        if len(cols) != 4:
            raise ParseError(f"expected 'x y v kappa', got {ln!r}")
        try:
            x, y, kappa = float(cols[0]), float(cols[1]), float(cols[3])
            v = int(cols[2])
        except ValueError as e:
            raise ParseError(f"bad keypoint line {ln!r}") from e
        points.append((x, y))
        vis.append(v)
        kappas.append(kappa)
    return KeypointSet(np.array(points, dtype=np.float64).reshape(-1, 2),
                       vis, scale, kappas)


def write_keypoints(path, kps: KeypointSet) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"scale {float(kps.object_scale)!r}\n")
        for (x, y), v, k in zip(kps.points, kps.visibility, kps.kappas):
            f.write(f"{float(x)!r} {float(y)!r} {int(v)} {float(k)!r}\n")


# --- flow maps ----------------------------------------------------------------

def read_flow(displacement_path, validity_path) -> FlowMap:
    """Load a flow map from its displacement (h x w x 2 f32) and validity
    (h x w u8) tensor files."""
    disp = read_tensor(displacement_path)
    if disp.ndim != 3 or disp.shape[2] != 2 or disp.dtype != np.float32:
        raise ParseError(
            f"flow tensor must be h x w x 2 f32, got {disp.dtype} shape {disp.shape}")
    valid = read_tensor(validity_path)
    if valid.ndim != 2 or valid.dtype != np.uint8:
        raise ParseError(
            f"validity tensor must be h x w u8, got {valid.dtype} shape {valid.shape}")
    if valid.shape != disp.shape[:2]:
        raise ParseError(
            f"validity {valid.shape} does not match flow grid {disp.shape[:2]}")
    try:
        return FlowMap(disp, valid != 0)
    except InvariantViolation as e:
        raise ParseError(str(e)) from e


def write_flow(displacement_path, validity_path, flow: FlowMap) -> None:
    write_tensor(displacement_path, np.array(flow.displacement, dtype=np.float32))
    write_tensor(validity_path, flow.validity.astype(np.uint8))
