"""Streaming engine server: per-session reference caching and per-step transfer.

One thread per connection; sessions live in a shared registry and may be
used concurrently, with a per-session lock serializing their requests.  All
computation delegates to the pure library modules, so responses are
bit-identical to direct library calls on the same decoded inputs.
"""

from __future__ import annotations

import itertools
import logging
import socketserver
import struct
import threading

import numpy as np

from .core import FeatureMap, FlowMap, ObjectMask, SessionConfig
from .errors import (
    EngineError,
    MissingReference,
    NoReadoutRecorded,
    ProtocolError,
    UnknownSession,
)
from .matching import PreparedReference, correspondence_to_flow, prepare_reference
from .transfer import ObjectPair, adain_masked, transfer_step_with_correspondences
from . import wire
from .wire import ErrorCode, MsgType

log = logging.getLogger(__name__)


class _Session:
    def __init__(self, session_id: int, config: SessionConfig):
        self.id = session_id
        self.config = config
        self.lock = threading.Lock()
        # (object_index, t, layer) -> (reference map, its mask, prepared rows)
        self.references: dict[tuple[int, int, int], tuple[FeatureMap, ObjectMask, PreparedReference]] = {}
        # per-object (correspondence, ref_height, ref_width) recorded at the readout step
        self.readout: list[tuple] | None = None


class EngineServer:
    """Threaded TCP server for the wire protocol.

    Use as a context manager or call start()/stop(); ``port`` 0 binds an
    ephemeral port, readable from ``address`` after start.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self._sessions: dict[int, _Session] = {}
        self._registry_lock = threading.Lock()
        self._ids = itertools.count(1)
        outer = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                outer._serve_connection(self.request)

        class Server(socketserver.ThreadingTCPServer):
            daemon_threads = True
            allow_reuse_address = True

        self._server = Server((host, port), Handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._server.server_address[:2]

    def start(self):
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self):
        self._server.serve_forever()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # --- connection loop ---------------------------------------------------

    def _serve_connection(self, sock):
        while True:
            try:
                head = wire.read_exact(sock, wire.HEADER_SIZE)
            except ProtocolError:
                return  # client went away between frames
            try:
                msg_type, session_id, payload_len = wire.parse_header(head)
            except ProtocolError as e:
                # framing is unrecoverable: answer once, then drop the stream
                self._send_error(sock, 0, getattr(e, "code", ErrorCode.MALFORMED_FRAME),
                                 str(e))
                return
            try:
                payload = wire.read_exact(sock, payload_len) if payload_len else b""
            except ProtocolError:
                return  # EOF mid-payload: nothing sane to answer

            try:
                reply = self._dispatch(msg_type, session_id, payload)
            except EngineError as e:
                reply = wire.encode_frame(MsgType.ERROR, session_id,
                                          wire.encode_error(wire.error_code_for(e), str(e)))
            except Exception as e:  # pragma: no cover - defensive
                log.exception("internal error handling msg_type=%s", msg_type)
                reply = wire.encode_frame(MsgType.ERROR, session_id,
                                          wire.encode_error(ErrorCode.INTERNAL, str(e)))
            try:
                sock.sendall(reply)
            except OSError:
                return

    def _send_error(self, sock, session_id, code, message):
        try:
            sock.sendall(wire.encode_frame(MsgType.ERROR, session_id,
                                           wire.encode_error(code, message)))
        except OSError:
            pass

    # --- dispatch ------------------------------------------------------------

    def _dispatch(self, msg_type: int, session_id: int, payload: bytes) -> bytes:
        if msg_type == MsgType.INIT_SESSION:
            return self._init_session(payload)
        if msg_type == MsgType.CLOSE_SESSION:
            with self._registry_lock:
                if self._sessions.pop(session_id, None) is None:
                    raise UnknownSession(f"no session {session_id}")
            return wire.encode_frame(MsgType.OK, session_id)

        session = self._get_session(session_id)
        with session.lock:
            if msg_type == MsgType.PUT_REFERENCE:
                return self._put_reference(session, payload)
            if msg_type == MsgType.REARRANGE:
                return self._rearrange(session, payload)
            if msg_type == MsgType.ADAIN:
                return self._adain(session, payload)
            if msg_type == MsgType.READOUT_FLOW:
                return self._readout_flow(session)
        raise ProtocolError(f"unknown message type {msg_type}")

    def _get_session(self, session_id: int) -> _Session:
        with self._registry_lock:
            session = self._sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"no session {session_id}")
        return session

    def _init_session(self, payload: bytes) -> bytes:
        config = wire.decode_config(payload)
        config.validate()
        with self._registry_lock:
            sid = next(self._ids)
            self._sessions[sid] = _Session(sid, config)
        return wire.encode_frame(MsgType.OK, sid)

    def _put_reference(self, session: _Session, payload: bytes) -> bytes:
        if len(payload) < 12:
            raise ProtocolError("put_reference payload truncated")
        obj, t, layer = struct.unpack_from("<3I", payload)
        reference, offset = wire.decode_feature_map(payload, 12, t, layer)
        m_ref, offset = wire.decode_mask(payload, offset)
        if offset != len(payload):
            raise ProtocolError("trailing bytes in put_reference payload")
        prepared = prepare_reference(reference, m_ref, session.config.epsilon)
        session.references[(obj, t, layer)] = (reference, m_ref, prepared)
        return wire.encode_frame(MsgType.OK, session.id)

    def _rearrange(self, session: _Session, payload: bytes) -> bytes:
        if len(payload) < 12:
            raise ProtocolError("rearrange payload truncated")
        t, layer, n_objects = struct.unpack_from("<3I", payload)
        target, offset = wire.decode_feature_map(payload, 12, t, layer)
        masks = []
        for _ in range(n_objects):
            mask, offset = wire.decode_mask(payload, offset)
            masks.append(mask)
        if offset != len(payload):
            raise ProtocolError("trailing bytes in rearrange payload")

        config = session.config
        if not config.inject_active(t, layer):
            return wire.encode_frame(MsgType.TENSOR_RESULT, session.id,
                                     wire.encode_feature_map(target))

        objects, prepared = [], []
        for i, mask in enumerate(masks):
            entry = session.references.get((i, t, layer))
            if entry is None:
                raise MissingReference(f"no reference cached for object {i} at (t={t}, l={layer})")
            reference, m_ref, prep = entry
            objects.append(ObjectPair(reference, m_ref, mask))
            prepared.append(prep)

        out, corrs = transfer_step_with_correspondences(
            target, objects, config, t, layer, prepared=prepared)
        if corrs is not None and t == config.readout_t and layer == config.readout_layer:
            session.readout = [
                (corr, obj.reference.height, obj.reference.width)
                for corr, obj in zip(corrs, objects)
            ]
        return wire.encode_frame(MsgType.TENSOR_RESULT, session.id,
                                 wire.encode_feature_map(out))

    def _adain(self, session: _Session, payload: bytes) -> bytes:
        if len(payload) < 4:
            raise ProtocolError("adain payload truncated")
        (t,) = struct.unpack_from("<I", payload)
        content, offset = wire.decode_feature_map(payload, 4, t, None)
        style, offset = wire.decode_feature_map(payload, offset, t, None)
        m_content, offset = wire.decode_mask(payload, offset)
        m_style, offset = wire.decode_mask(payload, offset)
        if offset != len(payload):
            raise ProtocolError("trailing bytes in adain payload")
        if session.config.adain_active(t):
            out = adain_masked(content, style, m_content, m_style,
                               session.config.epsilon)
        else:
            out = content
        return wire.encode_frame(MsgType.TENSOR_RESULT, session.id,
                                 wire.encode_feature_map(out))

    def _readout_flow(self, session: _Session) -> bytes:
        if not session.readout:
            raise NoReadoutRecorded(
                "no rearrange has run at the configured readout step/layer")
        flow = merge_readout_flows(session.readout)
        return wire.encode_frame(MsgType.TENSOR_RESULT, session.id,
                                 wire.encode_flow(flow))


def merge_readout_flows(readout: list[tuple]) -> FlowMap:
    """Combine per-object correspondences (disjoint target regions) into one
    flow map; each object's displacements are against its own reference grid."""
    first_corr = readout[0][0]
    h, w = first_corr.entries.shape
    disp = np.zeros((h, w, 2), dtype=np.float32)
    valid = np.zeros((h, w), dtype=bool)
    for corr, ref_h, ref_w in readout:
        flow = correspondence_to_flow(corr, ref_width=ref_w, ref_height=ref_h)
        disp[flow.validity] = flow.displacement[flow.validity]
        valid |= flow.validity
    return FlowMap(disp, valid)
