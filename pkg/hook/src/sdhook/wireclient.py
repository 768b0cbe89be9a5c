"""Self-contained client for the engine's wire protocol.

Speaks the protocol from its normative byte layout: frames are
magic "EFAE", u16 version (1), u16 msg_type, u64 session_id,
u64 payload_len, payload; tensors inside payloads use the tensor container
encoding without its magic.  Arrays in, arrays out — no engine imports.
"""

from __future__ import annotations

import socket
import struct

import numpy as np

from . import tensorfile
from .errors import EngineProtocolError, EngineRemoteError

MAGIC = b"EFAE"
VERSION = 1
_HEADER = struct.Struct("<4sHHQQ")

INIT_SESSION = 1
PUT_REFERENCE = 2
REARRANGE = 3
ADAIN = 4
READOUT_FLOW = 5
CLOSE_SESSION = 6
OK = 100
ERROR = 101
TENSOR_RESULT = 102


def encode_config(total_steps: int, inject_t_range: tuple[int, int],
                  inject_layers: tuple[int, ...], adain_t_range: tuple[int, int],
                  readout_t: int, readout_layer: int, epsilon: float) -> bytes:
    layers = sorted(inject_layers)
    return struct.pack("<7IdI", total_steps, inject_t_range[0], inject_t_range[1],
                       adain_t_range[0], adain_t_range[1], readout_t, readout_layer,
                       epsilon, len(layers)) + struct.pack(f"<{len(layers)}I", *layers)


def _f32(arr: np.ndarray) -> bytes:
    return tensorfile.encode(np.ascontiguousarray(arr, dtype=np.float32), with_magic=False)


def _mask(bits: np.ndarray) -> bytes:
    return tensorfile.encode(np.ascontiguousarray(bits, dtype=np.uint8), with_magic=False)


class EngineSession:
    """One connection, one session on the feature transfer engine."""

    def __init__(self, host: str, port: int, config_payload: bytes,
                 timeout: float | None = 60.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        kind, sid, _ = self._call(INIT_SESSION, 0, config_payload)
        if kind != OK:
            raise EngineProtocolError(f"expected OK to init, got message type {kind}")
        self.session_id = sid

    # --- plumbing -------------------------------------------------------------

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        while n > 0:
            chunk = self._sock.recv(min(n, 1 << 20))
            if not chunk:
                raise EngineProtocolError("engine closed the connection")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def _call(self, msg_type: int, session_id: int, payload: bytes = b"") -> tuple[int, int, bytes]:
        frame = _HEADER.pack(MAGIC, VERSION, msg_type, session_id, len(payload)) + payload
        self._sock.sendall(frame)
        magic, version, kind, sid, length = _HEADER.unpack(self._read_exact(_HEADER.size))
        if magic != MAGIC or version != VERSION:
            raise EngineProtocolError(f"bad reply header magic={magic!r} version={version}")
        reply = self._read_exact(length) if length else b""
        if kind == ERROR:
            (code,) = struct.unpack_from("<I", reply)
            raise EngineRemoteError(code, reply[4:].decode("utf-8", errors="replace"))
        return kind, sid, reply

    def _tensor_call(self, msg_type: int, payload: bytes) -> bytes:
        kind, _, reply = self._call(msg_type, self.session_id, payload)
        if kind != TENSOR_RESULT:
            raise EngineProtocolError(f"expected TENSOR_RESULT, got message type {kind}")
        return reply

    # --- protocol operations ----------------------------------------------------

    def put_reference(self, object_index: int, t: int, layer: int,
                      features: np.ndarray, ref_mask: np.ndarray) -> None:
        payload = struct.pack("<3I", object_index, t, layer) + _f32(features) + _mask(ref_mask)
        self._call(PUT_REFERENCE, self.session_id, payload)

    def rearrange(self, t: int, layer: int, features: np.ndarray,
                  target_masks: list[np.ndarray]) -> np.ndarray:
        payload = struct.pack("<3I", t, layer, len(target_masks)) + _f32(features)
        for mask in target_masks:
            payload += _mask(mask)
        reply = self._tensor_call(REARRANGE, payload)
        out, _ = tensorfile.decode(reply, with_magic=False)
        return out

    def adain(self, t: int, content: np.ndarray, style: np.ndarray,
              content_mask: np.ndarray, style_mask: np.ndarray) -> np.ndarray:
        payload = (struct.pack("<I", t) + _f32(content) + _f32(style)
                   + _mask(content_mask) + _mask(style_mask))
        reply = self._tensor_call(ADAIN, payload)
        out, _ = tensorfile.decode(reply, with_magic=False)
        return out

    def readout_flow(self) -> tuple[np.ndarray, np.ndarray]:
        """Returns (displacement h x w x 2 f32, validity h x w bool)."""
        reply = self._tensor_call(READOUT_FLOW, b"")
        disp, offset = tensorfile.decode(reply, with_magic=False)
        valid, _ = tensorfile.decode(reply, offset, with_magic=False)
        return disp, valid != 0

    def close(self) -> None:
        try:
            self._call(CLOSE_SESSION, self.session_id)
        finally:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
