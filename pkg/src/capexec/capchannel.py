"""Capability-channel wire protocol and transports.

Frame layout (all integers little-endian):

    4 bytes   total frame length, including these 4 bytes
    1 byte    kind (0 = request, 1 = response)
    8 bytes   sequence number
    repeated attributes:
        1 byte    value tag (1 string, 2 int, 3 bytes, 4 descriptor)
        1 byte    name length
        N bytes   name (ASCII)
        4 bytes   value length
        M bytes   value

Descriptor attribute values encode a slot number; the open resources
themselves ride beside the frame (ancillary data on the native socket
transport, an object list on the in-memory simulation transport) and are
rebound to their attributes on receipt.  A frame never exceeds 1 MiB.

Every request carries a string attribute ``cmd``; a response carries
either an integer ``error`` attribute or result attributes, never both.
"""

from __future__ import annotations

import array
import enum
import os
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Union

from .errors import (
    ChannelClosed,
    ChannelTimeout,
    InvalidAttrName,
    LengthMismatch,
    MessageTooLarge,
    MalformedChannelSpec,
    ProtocolError,
    TruncatedFrame,
    UnknownValueTag,
)

MAX_FRAME_BYTES = 1 << 20
MAX_ATTR_NAME = 255
DEFAULT_CALL_TIMEOUT = 5.0

_HEADER = struct.Struct("<IBQ")
_ATTR_HEAD = struct.Struct("<BB")
_VALUE_LEN = struct.Struct("<I")
_INT64 = struct.Struct("<q")
_SLOT = struct.Struct("<I")

CHANNELS_ENV = "CAPEXEC_CHANNELS"


class Kind(enum.IntEnum):
    REQUEST = 0
    RESPONSE = 1


class Tag(enum.IntEnum):
    STRING = 1
    INT = 2
    BYTES = 3
    DESCRIPTOR = 4


class DescriptorRef:
    """A transferable handle to an open resource.

    Locally it wraps an OS file descriptor; in flight it is a slot number
    resolved by the transport on the receiving side.  Ownership moves
    with the message: after a send the sender must not touch the
    descriptor again.
    """

    __slots__ = ("fd", "slot")

    def __init__(self, fd: int | None = None, *, slot: int | None = None):
        self.fd = fd
        self.slot = slot

    def fileno(self) -> int:
        if self.fd is None:
            raise ValueError("descriptor not bound to a local resource")
        return self.fd

    def close(self) -> None:
        if self.fd is not None:
            try:
                os.close(self.fd)
            finally:
                self.fd = None

    def __eq__(self, other) -> bool:
        # Two refs are interchangeable when they name the same local fd.
        return isinstance(other, DescriptorRef) and self.fd == other.fd

    def __repr__(self) -> str:
        return f"DescriptorRef(fd={self.fd}, slot={self.slot})"


AttrValue = Union[str, int, bytes, DescriptorRef]


@dataclass
class ChannelMessage:
    kind: Kind
    sequence: int
    attrs: dict[str, AttrValue] = field(default_factory=dict)

    @property
    def cmd(self) -> str | None:
        value = self.attrs.get("cmd")
        return value if isinstance(value, str) else None

    @property
    def error(self) -> int | None:
        value = self.attrs.get("error")
        return value if isinstance(value, int) else None

    def descriptor_refs(self) -> list[DescriptorRef]:
        return [v for v in self.attrs.values() if isinstance(v, DescriptorRef)]


def request(sequence: int, cmd: str, **attrs: AttrValue) -> ChannelMessage:
    message = ChannelMessage(Kind.REQUEST, sequence, {"cmd": cmd})
    message.attrs.update(attrs)
    return message


def response(sequence: int, **attrs: AttrValue) -> ChannelMessage:
    return ChannelMessage(Kind.RESPONSE, sequence, dict(attrs))


def error_response(sequence: int, code: int) -> ChannelMessage:
    return ChannelMessage(Kind.RESPONSE, sequence, {"error": code})


def _check_invariants(msg: ChannelMessage) -> None:
    if msg.kind == Kind.REQUEST:
        if not isinstance(msg.attrs.get("cmd"), str):
            raise ProtocolError("request lacks a string 'cmd' attribute")
    else:
        if "error" in msg.attrs:
            if not isinstance(msg.attrs["error"], int):
                raise ProtocolError("'error' attribute must be an integer")
            if len(msg.attrs) > 1:
                raise ProtocolError("error response must carry no result attributes")
    if msg.kind == Kind.REQUEST and msg.descriptor_refs():
        raise ProtocolError("descriptor attributes appear only in responses")


def encode_message(msg: ChannelMessage) -> bytes:
    """Encode one message to a frame.  Descriptor attrs become slot numbers
    in the order the attributes appear."""
    _check_invariants(msg)
    body = bytearray()
    slot = 0
    for name, value in msg.attrs.items():
        name_bytes = name.encode("ascii", errors="strict") if name.isascii() else None
        if not name or name_bytes is None or len(name_bytes) > MAX_ATTR_NAME:
            raise InvalidAttrName(f"bad attribute name {name!r}")
        if isinstance(value, bool):
            raise ProtocolError(f"attribute {name!r}: bool is not a wire type")
        if isinstance(value, str):
            tag, payload = Tag.STRING, value.encode("utf-8")
        elif isinstance(value, int):
            tag, payload = Tag.INT, _INT64.pack(value)
        elif isinstance(value, (bytes, bytearray, memoryview)):
            tag, payload = Tag.BYTES, bytes(value)
        elif isinstance(value, DescriptorRef):
            tag, payload = Tag.DESCRIPTOR, _SLOT.pack(slot)
            slot += 1
        else:
            raise ProtocolError(f"attribute {name!r}: unsupported value {value!r}")
        body += _ATTR_HEAD.pack(tag, len(name_bytes))
        body += name_bytes
        body += _VALUE_LEN.pack(len(payload))
        body += payload
    total = _HEADER.size + len(body)
    if total > MAX_FRAME_BYTES:
        raise MessageTooLarge(f"frame of {total} bytes exceeds {MAX_FRAME_BYTES}")
    return _HEADER.pack(total, int(msg.kind), msg.sequence) + bytes(body)


def decode_message(data: bytes) -> ChannelMessage:
    """Decode one complete frame; inverse of :func:`encode_message`.

    Descriptor attributes come back as unbound refs carrying their slot
    number; transports rebind them to received resources.
    """
    if len(data) < _HEADER.size:
        raise TruncatedFrame(f"{len(data)} bytes is shorter than a frame header")
    total, kind_byte, sequence = _HEADER.unpack_from(data, 0)
    if total < _HEADER.size:
        raise LengthMismatch(f"declared length {total} below header size")
    if total > MAX_FRAME_BYTES:
        raise LengthMismatch(f"declared length {total} exceeds {MAX_FRAME_BYTES}")
    if len(data) < total:
        raise TruncatedFrame(f"declared length {total}, got {len(data)} bytes")
    if len(data) > total:
        raise LengthMismatch(f"{len(data) - total} trailing bytes after frame")
    try:
        kind = Kind(kind_byte)
    except ValueError:
        raise UnknownValueTag(f"unknown message kind {kind_byte}") from None

    attrs: dict[str, AttrValue] = {}
    pos = _HEADER.size
    while pos < total:
        if pos + _ATTR_HEAD.size > total:
            raise LengthMismatch("attribute header crosses frame end")
        tag_byte, name_len = _ATTR_HEAD.unpack_from(data, pos)
        pos += _ATTR_HEAD.size
        if name_len == 0:
            raise InvalidAttrName("empty attribute name")
        if pos + name_len + _VALUE_LEN.size > total:
            raise LengthMismatch("attribute name crosses frame end")
        try:
            name = data[pos : pos + name_len].decode("ascii")
        except UnicodeDecodeError:
            raise InvalidAttrName("attribute name is not ASCII") from None
        pos += name_len
        (value_len,) = _VALUE_LEN.unpack_from(data, pos)
        pos += _VALUE_LEN.size
        if pos + value_len > total:
            raise LengthMismatch(f"attribute {name!r} value crosses frame end")
        payload = data[pos : pos + value_len]
        pos += value_len
        try:
            tag = Tag(tag_byte)
        except ValueError:
            raise UnknownValueTag(f"unknown value tag 0x{tag_byte:02x}") from None
        if tag == Tag.STRING:
            attrs[name] = payload.decode("utf-8")
        elif tag == Tag.INT:
            if value_len != 8:
                raise LengthMismatch(f"attribute {name!r}: int value must be 8 bytes")
            attrs[name] = _INT64.unpack(payload)[0]
        elif tag == Tag.BYTES:
            attrs[name] = bytes(payload)
        else:
            if value_len != 4:
                raise LengthMismatch(f"attribute {name!r}: descriptor value must be 4 bytes")
            attrs[name] = DescriptorRef(slot=_SLOT.unpack(payload)[0])
    return ChannelMessage(kind, sequence, attrs)


def _bind_descriptors(msg: ChannelMessage, fds: list[int]) -> None:
    for ref in msg.descriptor_refs():
        if ref.slot is None or ref.slot >= len(fds):
            raise ProtocolError("descriptor slot without a transferred resource")
        ref.fd = fds[ref.slot]


# --- transports -------------------------------------------------------------------


class SocketTransport:
    """Native transport: a local stream socket; descriptors ride as
    ancillary data on the frame that references them."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._buffer = b""

    def fileno(self) -> int:
        return self._sock.fileno()

    def send_frame(self, frame: bytes, fds: list[int]) -> None:
        try:
            if fds:
                packed = array.array("i", fds).tobytes()
                self._sock.sendmsg(
                    [frame], [(socket.SOL_SOCKET, socket.SCM_RIGHTS, packed)]
                )
            else:
                self._sock.sendall(frame)
        except (BrokenPipeError, ConnectionResetError, OSError) as exc:
            raise ChannelClosed(f"peer gone: {exc}") from None
        finally:
            # The kernel duplicated the descriptors into flight; drop ours.
            for fd in fds:
                try:
                    os.close(fd)
                except OSError:
                    pass

    def recv_frame(self, timeout: float | None) -> tuple[bytes, list[int]]:
        deadline = None if timeout is None else time.monotonic() + timeout
        fds: list[int] = []
        # Read until the buffered bytes hold one whole frame.
        while True:
            if len(self._buffer) >= 4:
                (total,) = struct.unpack_from("<I", self._buffer, 0)
                if total > MAX_FRAME_BYTES or total < _HEADER.size:
                    raise LengthMismatch(f"bad frame length {total}")
                if len(self._buffer) >= total:
                    frame, self._buffer = self._buffer[:total], self._buffer[total:]
                    return frame, fds
            if deadline is not None:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise ChannelTimeout("no frame within timeout")
                self._sock.settimeout(remaining)
            else:
                self._sock.settimeout(None)
            try:
                data, ancdata, _flags, _addr = self._sock.recvmsg(
                    65536, socket.CMSG_SPACE(64 * 4)
                )
            except socket.timeout:
                raise ChannelTimeout("no frame within timeout") from None
            except OSError as exc:
                raise ChannelClosed(f"peer gone: {exc}") from None
            for level, ctype, cdata in ancdata:
                if level == socket.SOL_SOCKET and ctype == socket.SCM_RIGHTS:
                    received = array.array("i")
                    received.frombytes(cdata[: len(cdata) - len(cdata) % 4])
                    fds.extend(received)
            if not data:
                raise ChannelClosed("peer closed the channel")
            self._buffer += data

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class _ClosedMarker:
    pass


_CLOSED = _ClosedMarker()


class QueuePair:
    """In-memory duplex pipe used by the simulation transport."""

    def __init__(self):
        self.a_to_b: queue.Queue = queue.Queue()
        self.b_to_a: queue.Queue = queue.Queue()


class SimulationTransport:
    """Simulation transport: frames and resources pass through in-process
    queues.  The receiving side owns transferred descriptors as-is (no
    kernel duplication happens)."""

    def __init__(self, outbox: queue.Queue, inbox: queue.Queue):
        self._outbox = outbox
        self._inbox = inbox
        self._closed = False

    def send_frame(self, frame: bytes, fds: list[int]) -> None:
        if self._closed:
            raise ChannelClosed("transport closed")
        self._outbox.put((frame, fds))

    def recv_frame(self, timeout: float | None) -> tuple[bytes, list[int]]:
        if self._closed:
            raise ChannelClosed("transport closed")
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelTimeout("no frame within timeout") from None
        if item is _CLOSED:
            # Leave the marker for any later receive attempt.
            self._inbox.put(_CLOSED)
            raise ChannelClosed("peer closed the channel")
        return item

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(_CLOSED)
            self._inbox.put(_CLOSED)


def simulation_pair() -> tuple["SimulationTransport", "SimulationTransport"]:
    pair = QueuePair()
    return (
        SimulationTransport(pair.a_to_b, pair.b_to_a),
        SimulationTransport(pair.b_to_a, pair.a_to_b),
    )


# --- channel -----------------------------------------------------------------------


class Channel:
    """One capability channel endpoint.

    Messages are totally ordered; exactly one request may be outstanding
    at a time and the response's sequence must match.  A channel may move
    between threads but must be used by one thread at a time.
    """

    def __init__(self, transport, *, peer_role: str = "broker",
                 service: str | None = None, trace=None, role: str = "supervisor"):
        self.transport = transport
        self.peer_role = peer_role
        self.service = service
        self.role = role
        self._trace = trace
        self._next_sequence = 1
        self._lock = threading.Lock()

    def set_trace(self, sink, role: str) -> None:
        self._trace = sink
        self.role = role

    def _emit(self, kind: str, msg: ChannelMessage) -> None:
        if self._trace is None:
            return
        from .trace import TraceEvent  # local import to avoid a module cycle

        detail_parts = []
        for name, value in msg.attrs.items():
            if isinstance(value, DescriptorRef):
                shown = "<descriptor>"
            elif isinstance(value, bytes):
                shown = value.hex()
            else:
                shown = str(value)
            detail_parts.append(f"{name}={shown}")
        detail = f"seq={msg.sequence} " + ",".join(detail_parts)
        error = msg.error if msg.kind == Kind.RESPONSE else None
        self._trace.record(TraceEvent(
            role=self.role, kind=kind, detail=detail, error_code=error,
        ))

    def send(self, msg: ChannelMessage) -> None:
        frame = encode_message(msg)
        fds = [ref.fileno() for ref in msg.descriptor_refs()]
        self._emit("CHANNEL_SEND", msg)
        self.transport.send_frame(frame, fds)

    def recv(self, timeout: float | None = None) -> ChannelMessage:
        frame, fds = self.transport.recv_frame(timeout)
        msg = decode_message(frame)
        _bind_descriptors(msg, fds)
        self._emit("CHANNEL_RECV", msg)
        return msg

    def next_sequence(self) -> int:
        with self._lock:
            seq = self._next_sequence
            self._next_sequence += 1
            return seq

    def call(self, req: ChannelMessage, timeout: float = DEFAULT_CALL_TIMEOUT) -> ChannelMessage:
        """Send one request and block for its response.

        Raises ChannelClosed if the peer exits, ChannelTimeout after
        ``timeout`` seconds, and ProtocolError on a sequence mismatch.
        """
        if req.kind != Kind.REQUEST:
            raise ProtocolError("call() takes a request message")
        self.send(req)
        resp = self.recv(timeout)
        if resp.kind != Kind.RESPONSE:
            raise ProtocolError(f"expected a response, got kind {resp.kind}")
        if resp.sequence != req.sequence:
            raise ProtocolError(
                f"response sequence {resp.sequence} does not match request {req.sequence}"
            )
        return resp

    def close(self) -> None:
        self.transport.close()


def socket_channel_pair(service: str | None = None) -> tuple[Channel, Channel]:
    """Pre-connected local stream socket pair wrapped as two channels."""
    a, b = socket.socketpair(socket.AF_UNIX, socket.SOCK_STREAM)
    return (
        Channel(SocketTransport(a), service=service),
        Channel(SocketTransport(b), service=service),
    )


def simulation_channel_pair(service: str | None = None) -> tuple[Channel, Channel]:
    ta, tb = simulation_pair()
    return (
        Channel(ta, service=service),
        Channel(tb, service=service),
    )


def channel_from_fd(fd: int, service: str | None = None) -> Channel:
    """Wrap an inherited socket descriptor (from CAPEXEC_CHANNELS)."""
    sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM, fileno=fd)
    return Channel(SocketTransport(sock), service=service)


def format_channel_env(mapping: dict[str, int]) -> str:
    return ";".join(f"{name}={fd}" for name, fd in mapping.items())


def parse_channel_env(value: str) -> dict[str, int]:
    """Parse the ``service-name=fd;...`` channel discovery string."""
    mapping: dict[str, int] = {}
    if not value:
        return mapping
    for part in value.split(";"):
        part = part.strip()
        if not part:
            continue
        name, sep, fd_text = part.partition("=")
        if not sep or not name:
            raise MalformedChannelSpec(f"bad channel entry {part!r}")
        try:
            fd = int(fd_text)
        except ValueError:
            raise MalformedChannelSpec(f"bad descriptor number in {part!r}") from None
        if fd < 0:
            raise MalformedChannelSpec(f"negative descriptor in {part!r}")
        mapping[name.strip()] = fd
    return mapping
