"""Blocking client for the engine wire protocol.

One request/response in flight per connection, matching the strictly
sequential call pattern of a denoising loop.  ERROR frames surface as
RemoteEngineError with the server's diagnostic code.
"""

from __future__ import annotations

import socket
import struct

from .core import FeatureMap, FlowMap, ObjectMask, SessionConfig
from .errors import ProtocolError, RemoteEngineError
from . import wire
from .wire import MsgType


class EngineClient:
    def __init__(self, host: str = "127.0.0.1", port: int = 7763,
                 timeout: float | None = 30.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)

    def close(self):
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # --- request/response core ----------------------------------------------

    def _call(self, msg_type: MsgType, session_id: int, payload: bytes = b"") -> tuple[int, int, bytes]:
        self._sock.sendall(wire.encode_frame(msg_type, session_id, payload))
        reply_type, reply_sid, reply_payload = wire.read_frame(self._sock)
        if reply_type == MsgType.ERROR:
            code, message = wire.decode_error(reply_payload)
            raise RemoteEngineError(code, message)
        return reply_type, reply_sid, reply_payload

    def _expect_tensor_result(self, msg_type, session_id, payload) -> bytes:
        reply_type, _, reply_payload = self._call(msg_type, session_id, payload)
        if reply_type != MsgType.TENSOR_RESULT:
            raise ProtocolError(f"expected TENSOR_RESULT, got message type {reply_type}")
        return reply_payload

    # --- protocol operations --------------------------------------------------

    def init_session(self, config: SessionConfig | None = None) -> int:
        config = config or SessionConfig()
        reply_type, sid, _ = self._call(MsgType.INIT_SESSION, 0, wire.encode_config(config))
        if reply_type != MsgType.OK:
            raise ProtocolError(f"expected OK, got message type {reply_type}")
        return sid

    def put_reference(self, session_id: int, object_index: int, t: int, layer: int,
                      reference: FeatureMap, m_ref: ObjectMask) -> None:
        payload = (struct.pack("<3I", object_index, t, layer)
                   + wire.encode_feature_map(reference)
                   + wire.encode_mask(m_ref))
        self._call(MsgType.PUT_REFERENCE, session_id, payload)

    def rearrange(self, session_id: int, t: int, layer: int,
                  target: FeatureMap, target_masks: list[ObjectMask]) -> FeatureMap:
        payload = struct.pack("<3I", t, layer, len(target_masks))
        payload += wire.encode_feature_map(target)
        for mask in target_masks:
            payload += wire.encode_mask(mask)
        reply = self._expect_tensor_result(MsgType.REARRANGE, session_id, payload)
        fm, _ = wire.decode_feature_map(reply, 0, t, layer)
        return fm

    def adain(self, session_id: int, t: int, content: FeatureMap, style: FeatureMap,
              m_content: ObjectMask, m_style: ObjectMask) -> FeatureMap:
        payload = (struct.pack("<I", t)
                   + wire.encode_feature_map(content)
                   + wire.encode_feature_map(style)
                   + wire.encode_mask(m_content)
                   + wire.encode_mask(m_style))
        reply = self._expect_tensor_result(MsgType.ADAIN, session_id, payload)
        fm, _ = wire.decode_feature_map(reply, 0, t, None)
        return fm

    def readout_flow(self, session_id: int) -> FlowMap:
        reply = self._expect_tensor_result(MsgType.READOUT_FLOW, session_id, b"")
        flow, _ = wire.decode_flow(reply)
        return flow

    def close_session(self, session_id: int) -> None:
        self._call(MsgType.CLOSE_SESSION, session_id)
