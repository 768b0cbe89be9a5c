"""Wire protocol: length-prefixed frames carrying tensors between loop and engine.

Frame layout (all integers little-endian):

    magic       4 bytes  b"EFAE"
    version     u16      (currently 1)
    msg_type    u16
    session_id  u64
    payload_len u64
    payload     payload_len bytes

Tensor payloads reuse the tensor container encoding minus its magic (see
tensorio).  Request payloads:

    INIT_SESSION   session config block (below)
    PUT_REFERENCE  u32 object_index, u32 t, u32 layer, f32 tensor, u8 mask tensor
    REARRANGE      u32 t, u32 layer, u32 n_objects, f32 target tensor,
                   n_objects x u8 mask tensors
    ADAIN          u32 t, f32 content, f32 style, u8 content mask, u8 style mask
    READOUT_FLOW   empty
    CLOSE_SESSION  empty

Response payloads: OK empty (session_id meaningful for INIT_SESSION),
TENSOR_RESULT one or more tensors, ERROR u32 code + utf-8 message.

Config block: u32 total_steps, u32 inject_lo, u32 inject_hi, u32 adain_lo,
u32 adain_hi, u32 readout_t, u32 readout_layer, f64 epsilon, u32 n_layers,
n_layers x u32 layer ids.
"""

from __future__ import annotations

import struct
from enum import IntEnum

import numpy as np

from .core import FeatureMap, FlowMap, ObjectMask, SessionConfig
from .errors import (
    ChannelMismatch,
    DimensionMismatch,
    EmptyMask,
    EngineError,
    InvalidConfig,
    MissingReference,
    NoReadoutRecorded,
    NonFiniteData,
    OverlappingTargetMasks,
    ProtocolError,
    UnknownSession,
)
from .tensorio import decode_tensor, encode_tensor

WIRE_MAGIC = b"EFAE"
WIRE_VERSION = 1

_HEADER = struct.Struct("<4sHHQQ")
HEADER_SIZE = _HEADER.size  # 24 bytes

#: Upper bound on accepted payloads; protects the server from memory bombs.
MAX_PAYLOAD = 1 << 30


class MsgType(IntEnum):
    INIT_SESSION = 1
    PUT_REFERENCE = 2
    REARRANGE = 3
    ADAIN = 4
    READOUT_FLOW = 5
    CLOSE_SESSION = 6
    OK = 100
    ERROR = 101
    TENSOR_RESULT = 102


class ErrorCode(IntEnum):
    VERSION_MISMATCH = 1
    MALFORMED_FRAME = 2
    UNKNOWN_MSG_TYPE = 3
    UNKNOWN_SESSION = 4
    INVALID_CONFIG = 5
    MISSING_REFERENCE = 6
    OVERLAPPING_TARGET_MASKS = 7
    NO_READOUT_RECORDED = 8
    CHANNEL_MISMATCH = 9
    DIMENSION_MISMATCH = 10
    EMPTY_MASK = 11
    NON_FINITE_DATA = 12
    BAD_PAYLOAD = 13
    INTERNAL = 14


_ERROR_CODES: list[tuple[type, ErrorCode]] = [
    (UnknownSession, ErrorCode.UNKNOWN_SESSION),
    (InvalidConfig, ErrorCode.INVALID_CONFIG),
    (MissingReference, ErrorCode.MISSING_REFERENCE),
    (OverlappingTargetMasks, ErrorCode.OVERLAPPING_TARGET_MASKS),
    (NoReadoutRecorded, ErrorCode.NO_READOUT_RECORDED),
    (ChannelMismatch, ErrorCode.CHANNEL_MISMATCH),
    (DimensionMismatch, ErrorCode.DIMENSION_MISMATCH),
    (EmptyMask, ErrorCode.EMPTY_MASK),
    (NonFiniteData, ErrorCode.NON_FINITE_DATA),
    (ProtocolError, ErrorCode.MALFORMED_FRAME),
    (EngineError, ErrorCode.BAD_PAYLOAD),
]


def error_code_for(exc: BaseException) -> ErrorCode:
    attached = getattr(exc, "code", None)
    if isinstance(attached, ErrorCode):
        return attached
    for cls, code in _ERROR_CODES:
        if isinstance(exc, cls):
            return code
    return ErrorCode.INTERNAL


def encode_frame(msg_type: int, session_id: int, payload: bytes = b"") -> bytes:
    return _HEADER.pack(WIRE_MAGIC, WIRE_VERSION, msg_type, session_id,
                        len(payload)) + payload


def _frame_error(message: str, code: "ErrorCode") -> ProtocolError:
    err = ProtocolError(message)
    err.code = code
    return err


def parse_header(buf: bytes) -> tuple[int, int, int]:
    """Validate a frame header; returns (msg_type, session_id, payload_len)."""
    magic, version, msg_type, session_id, payload_len = _HEADER.unpack(buf)
    if magic != WIRE_MAGIC:
        raise _frame_error(f"bad frame magic {magic!r}", ErrorCode.MALFORMED_FRAME)
    if version != WIRE_VERSION:
        raise _frame_error(f"protocol version {version} not supported",
                           ErrorCode.VERSION_MISMATCH)
    if payload_len > MAX_PAYLOAD:
        raise _frame_error(f"payload of {payload_len} bytes exceeds limit",
                           ErrorCode.MALFORMED_FRAME)
    return msg_type, session_id, payload_len


def read_exact(sock, n: int) -> bytes:
    """Read exactly n bytes from a socket; ProtocolError on early EOF."""
    chunks = []
    remaining = n
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise ProtocolError(f"connection closed with {remaining} bytes pending")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock) -> tuple[int, int, bytes]:
    """Read one frame; returns (msg_type, session_id, payload)."""
    msg_type, session_id, payload_len = parse_header(read_exact(sock, HEADER_SIZE))
    payload = read_exact(sock, payload_len) if payload_len else b""
    return msg_type, session_id, payload


# --- payload encodings -------------------------------------------------------

_CONFIG_HEAD = struct.Struct("<7IdI")


def encode_config(config: SessionConfig) -> bytes:
    layers = sorted(config.inject_layers)
    return _CONFIG_HEAD.pack(
        config.total_steps,
        config.inject_t_range[0], config.inject_t_range[1],
        config.adain_t_range[0], config.adain_t_range[1],
        config.readout_t, config.readout_layer,
        config.epsilon, len(layers),
    ) + struct.pack(f"<{len(layers)}I", *layers)


def decode_config(payload: bytes) -> SessionConfig:
    if len(payload) < _CONFIG_HEAD.size:
        raise ProtocolError("config block truncated")
    (total, ilo, ihi, alo, ahi, rt, rl, eps, n) = _CONFIG_HEAD.unpack_from(payload)
    if len(payload) != _CONFIG_HEAD.size + 4 * n:
        raise ProtocolError("config layer list truncated")
    layers = struct.unpack_from(f"<{n}I", payload, _CONFIG_HEAD.size)
    return SessionConfig(total_steps=total, inject_t_range=(ilo, ihi),
                         inject_layers=frozenset(layers), adain_t_range=(alo, ahi),
                         readout_t=rt, readout_layer=rl, epsilon=eps)


def encode_feature_map(fm: FeatureMap) -> bytes:
    return encode_tensor(fm.data, with_magic=False)


def encode_mask(mask: ObjectMask) -> bytes:
    return encode_tensor(mask.bits.astype(np.uint8), with_magic=False)


def decode_feature_map(payload: bytes, offset: int,
                       timestep: int | None = None,
                       layer: int | None = None) -> tuple[FeatureMap, int]:
    arr, offset = decode_tensor(payload, offset, with_magic=False)
    if arr.ndim != 3 or arr.dtype != np.float32:
        raise ProtocolError(f"expected f32 h x w x c tensor, got {arr.dtype} ndim={arr.ndim}")
    return FeatureMap(arr, timestep, layer), offset


def decode_mask(payload: bytes, offset: int) -> tuple[ObjectMask, int]:
    arr, offset = decode_tensor(payload, offset, with_magic=False)
    if arr.ndim != 2 or arr.dtype != np.uint8:
        raise ProtocolError(f"expected u8 h x w mask, got {arr.dtype} ndim={arr.ndim}")
    return ObjectMask(arr != 0), offset


def encode_flow(flow: FlowMap) -> bytes:
    return (encode_tensor(np.array(flow.displacement, dtype=np.float32), with_magic=False)
            + encode_tensor(flow.validity.astype(np.uint8), with_magic=False))


def decode_flow(payload: bytes, offset: int = 0) -> tuple[FlowMap, int]:
    disp, offset = decode_tensor(payload, offset, with_magic=False)
    valid, offset = decode_tensor(payload, offset, with_magic=False)
    if disp.ndim != 3 or disp.shape[2] != 2 or disp.dtype != np.float32:
        raise ProtocolError(f"expected f32 h x w x 2 flow, got {disp.dtype} {disp.shape}")
    if valid.shape != disp.shape[:2] or valid.dtype != np.uint8:
        raise ProtocolError("flow validity grid malformed")
    return FlowMap(disp, valid != 0), offset


def encode_error(code: int, message: str) -> bytes:
    return struct.pack("<I", code) + message.encode("utf-8")


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 4:
        raise ProtocolError("error payload truncated")
    (code,) = struct.unpack_from("<I", payload)
    return code, payload[4:].decode("utf-8", errors="replace")
