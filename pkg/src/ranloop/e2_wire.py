"""E2-like wire protocol: binary framing plus string-serialized payloads.

Frame layout (all integers big-endian):

    +----------+---------+----------+--------+----------+--------+---------+
    | len (4B) | type 1B | srclen 1B| source | dstlen 1B| dest   | payload |
    +----------+---------+----------+--------+----------+--------+---------+

``len`` counts everything after the 4-byte prefix. Identifiers are
UTF-8, at most 64 bytes, and may not contain ``, ; : \\n`` so they stay
delimiter-safe inside the string payload grammars. Payloads are opaque
byte sequences of at most 2**24 bytes; in practice they carry the
KPM-report and control-directive string formats defined below.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum


class MessageType(IntEnum):
    SubscriptionRequest = 1
    SubscriptionResponse = 2
    Indication = 3
    Control = 4
    ControlAck = 5
    XAppRegister = 6
    XAppRoute = 7


SLICES = ("embb", "mtc", "urllc")
POLICIES = ("RR", "WF", "PF")

MAX_ID_BYTES = 64
MAX_PAYLOAD = 1 << 24
# type byte + two length bytes; the smallest legal frame body
MIN_BODY = 3
MAX_BODY = MIN_BODY + 2 * MAX_ID_BYTES + MAX_PAYLOAD

_FORBIDDEN_ID_CHARS = set(",;:\n")

_LEN = struct.Struct(">I")


class ProtocolError(ValueError):
    """Malformed frame or payload."""


class NeedMoreBytes(ProtocolError):
    """Raised when a buffer ends mid-frame; feed more data and retry."""


def _check_identifier(name: str, value: str) -> bytes:
    try:
        raw = value.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise ProtocolError(f"{name} is not encodable: {exc}") from exc
    if len(raw) > MAX_ID_BYTES:
        raise ProtocolError(f"{name} longer than {MAX_ID_BYTES} bytes")
    bad = _FORBIDDEN_ID_CHARS.intersection(value)
    if bad:
        raise ProtocolError(f"{name} contains forbidden character(s) {sorted(bad)!r}")
    return raw


@dataclass(frozen=True)
class E2Frame:
    msg_type: MessageType
    source_id: str
    dest_id: str
    payload: bytes = b""

    def text(self) -> str:
        return self.payload.decode("utf-8")


def encode_frame(frame: E2Frame) -> bytes:
    """Encode a frame to wire bytes (length prefix included)."""
    msg_type = MessageType(frame.msg_type)
    src = _check_identifier("source_id", frame.source_id)
    dst = _check_identifier("dest_id", frame.dest_id)
    if len(frame.payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload exceeds {MAX_PAYLOAD} bytes")
    body = bytes([msg_type, len(src)]) + src + bytes([len(dst)]) + dst + frame.payload
    return _LEN.pack(len(body)) + body


def decode_frame(buf: bytes | bytearray | memoryview) -> tuple[E2Frame, int]:
    """Decode one frame from the start of ``buf``.

    Returns ``(frame, consumed_bytes)`` so back-to-back frames on a
    stream can be peeled off one at a time. Raises ``NeedMoreBytes``
    on a truncated frame and ``ProtocolError`` on a malformed one.
    """
    buf = bytes(buf)
    if len(buf) < 4:
        raise NeedMoreBytes("incomplete length prefix")
    (body_len,) = _LEN.unpack_from(buf, 0)
    if body_len < MIN_BODY:
        raise ProtocolError(f"frame body length {body_len} below minimum {MIN_BODY}")
    if body_len > MAX_BODY:
        raise ProtocolError(f"frame body length {body_len} exceeds maximum {MAX_BODY}")
    if len(buf) < 4 + body_len:
        raise NeedMoreBytes(f"have {len(buf)} bytes, frame needs {4 + body_len}")

    body = buf[4 : 4 + body_len]
    type_code = body[0]
    try:
        msg_type = MessageType(type_code)
    except ValueError:
        raise ProtocolError(f"unknown message type {type_code}") from None

    pos = 1
    src_len = body[pos]
    pos += 1
    if pos + src_len + 1 > body_len:
        raise ProtocolError("source_id length overruns frame")
    src = body[pos : pos + src_len].decode("utf-8")
    pos += src_len
    dst_len = body[pos]
    pos += 1
    if pos + dst_len > body_len:
        raise ProtocolError("dest_id length overruns frame")
    dst = body[pos : pos + dst_len].decode("utf-8")
    pos += dst_len
    payload = body[pos:]
    frame = E2Frame(msg_type, src, dst, payload)
    return frame, 4 + body_len


class StreamDecoder:
    """Reassembles frames from an arbitrarily chunked byte stream.

    Single-owner: create one per connection and call :meth:`feed` from
    that connection's reader only.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[E2Frame]:
        self._buf.extend(data)
        frames = []
        while True:
            try:
                frame, used = decode_frame(self._buf)
            except NeedMoreBytes:
                break
            del self._buf[:used]
            frames.append(frame)
        return frames

    def pending(self) -> int:
        return len(self._buf)


# --------------------------------------------------------------------------
# KPM report payload: one CSV row per (base station, slice) metric record.
# --------------------------------------------------------------------------

KPM_FIELDS = (
    "timestamp_ms",
    "bs_id",
    "slice_id",
    "dl_throughput_mbps",
    "tx_packets",
    "buffer_bytes",
    "prb_alloc",
    "offered_load_mbps",
)


@dataclass(frozen=True)
class KpmRecord:
    timestamp_ms: int
    bs_id: str
    slice_id: str
    dl_throughput_mbps: float
    tx_packets: int
    buffer_bytes: int
    prb_alloc: int
    offered_load_mbps: float

    def __post_init__(self):
        if self.slice_id not in SLICES:
            raise ProtocolError(f"unknown slice_id {self.slice_id!r}")


def _format_record(r: KpmRecord) -> str:
    _check_identifier("bs_id", r.bs_id)
    return (
        f"{r.timestamp_ms},{r.bs_id},{r.slice_id},"
        f"{r.dl_throughput_mbps:.3f},{r.tx_packets},{r.buffer_bytes},"
        f"{r.prb_alloc},{r.offered_load_mbps:.3f}"
    )


def serialize_kpm_payload(records: list[KpmRecord]) -> str:
    """Render records as newline-separated rows; reals get exactly 3 decimals."""
    return "\n".join(_format_record(r) for r in records)


def parse_kpm_payload(s: str) -> list[KpmRecord]:
    """Inverse of :func:`serialize_kpm_payload`; empty string yields []."""
    if s == "":
        return []
    records = []
    for row_no, row in enumerate(s.split("\n"), start=1):
        parts = row.split(",")
        if len(parts) != len(KPM_FIELDS):
            raise ProtocolError(
                f"row {row_no}: expected {len(KPM_FIELDS)} fields, got {len(parts)}"
            )

        def num(idx: int, conv):
            try:
                value = conv(parts[idx])
            except ValueError:
                raise ProtocolError(
                    f"row {row_no}, field {idx + 1} ({KPM_FIELDS[idx]}): "
                    f"bad value {parts[idx]!r}"
                ) from None
            if value < 0:
                raise ProtocolError(
                    f"row {row_no}, field {idx + 1} ({KPM_FIELDS[idx]}): negative"
                )
            return value

        slice_id = parts[2]
        if slice_id not in SLICES:
            raise ProtocolError(f"row {row_no}, field 3: unknown slice {slice_id!r}")
        records.append(
            KpmRecord(
                timestamp_ms=num(0, int),
                bs_id=parts[1],
                slice_id=slice_id,
                dl_throughput_mbps=num(3, float),
                tx_packets=num(4, int),
                buffer_bytes=num(5, int),
                prb_alloc=num(6, int),
                offered_load_mbps=num(7, float),
            )
        )
    return records


# --------------------------------------------------------------------------
# Control payload: bs_id;embb:prb:policy;mtc:prb:policy;urllc:prb:policy
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlDirective:
    bs_id: str
    slices: tuple  # ((slice_id, prb_count, policy), ...) one triple per slice

    def __post_init__(self):
        seen = [s for s, _, _ in self.slices]
        if sorted(seen) != sorted(SLICES):
            raise ProtocolError(f"directive must cover each slice exactly once, got {seen}")
        for slice_id, prb, policy in self.slices:
            if prb < 0:
                raise ProtocolError(f"negative prb_count for {slice_id}")
            if policy not in POLICIES:
                raise ProtocolError(f"unknown policy {policy!r}")

    def prb_sum(self) -> int:
        return sum(prb for _, prb, _ in self.slices)

    def as_dict(self) -> dict:
        return {s: (prb, pol) for s, prb, pol in self.slices}


def make_directive(bs_id: str, embb: tuple, mtc: tuple, urllc: tuple) -> ControlDirective:
    """Build a directive from per-slice (prb_count, policy) pairs."""
    return ControlDirective(
        bs_id=bs_id,
        slices=(
            ("embb", embb[0], embb[1]),
            ("mtc", mtc[0], mtc[1]),
            ("urllc", urllc[0], urllc[1]),
        ),
    )


def serialize_control_payload(d: ControlDirective) -> str:
    _check_identifier("bs_id", d.bs_id)
    by_slice = d.as_dict()
    parts = [d.bs_id]
    for slice_id in SLICES:
        prb, policy = by_slice[slice_id]
        parts.append(f"{slice_id}:{prb}:{policy}")
    return ";".join(parts)


def parse_control_payload(s: str) -> ControlDirective:
    parts = s.split(";")
    if len(parts) != 1 + len(SLICES):
        raise ProtocolError(
            f"control payload needs bs_id plus {len(SLICES)} slice entries, got {len(parts)} part(s)"
        )
    bs_id = parts[0]
    triples = []
    for expected, entry in zip(SLICES, parts[1:]):
        fields = entry.split(":")
        if len(fields) != 3:
            raise ProtocolError(f"malformed slice entry {entry!r}")
        slice_id, prb_s, policy = fields
        if slice_id != expected:
            raise ProtocolError(f"expected slice {expected!r}, got {slice_id!r}")
        try:
            prb = int(prb_s)
        except ValueError:
            raise ProtocolError(f"bad prb count {prb_s!r} for {slice_id}") from None
        if prb < 0:
            raise ProtocolError(f"negative prb count for {slice_id}")
        if policy not in POLICIES:
            raise ProtocolError(f"unknown policy {policy!r} for {slice_id}")
        triples.append((slice_id, prb, policy))
    return ControlDirective(bs_id=bs_id, slices=tuple(triples))
