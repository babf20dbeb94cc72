"""OSC 1.0 encoding and decoding for pose messages.

A pose travels as one message::

    /pose  ,sdfffffff  source_id  t  x y z  qw qx qy qz

``t`` is a big-endian float64 in seconds, the seven remaining values are
float32 in meters and unit-quaternion components. Messages with any other
address or type tags decode to :class:`OscMessage`. Bundles are flattened
to their messages in packet order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from trackbench.errors import ProtocolError

POSE_ADDRESS = "/pose"
POSE_TYPETAGS = ",sdfffffff"
BUNDLE_TAG = b"#bundle\x00"


def _f32(values):
    return tuple(float(v) for v in np.asarray(values, dtype=np.float32).reshape(-1))


@dataclass(frozen=True)
class OscPoseMessage:
    source_id: str
    t: float
    position: Tuple[float, float, float]
    orientation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    address: str = POSE_ADDRESS

    def __post_init__(self):
        # Values are stored at wire precision so decode(encode(m)) == m.
        pos = _f32(self.position)
        quat = _f32(self.orientation)
        if len(pos) != 3 or len(quat) != 4:
            raise ValueError("position needs 3 values and orientation 4")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", quat)


@dataclass(frozen=True)
class OscMessage:
    """Any message that is not a pose message."""

    address: str
    typetags: str
    args: tuple


@dataclass(frozen=True)
class OscBundle:
    timetag: int
    elements: tuple


Message = Union[OscPoseMessage, OscMessage]


def _pad_string(s: str) -> bytes:
    b = s.encode("utf-8") + b"\x00"
    return b + b"\x00" * (-len(b) % 4)


def _pad_blob(b: bytes) -> bytes:
    return struct.pack(">i", len(b)) + b + b"\x00" * (-len(b) % 4)


def encode_osc(msg: Message) -> bytes:
    if isinstance(msg, OscPoseMessage):
        return (
            _pad_string(msg.address)
            + _pad_string(POSE_TYPETAGS)
            + _pad_string(msg.source_id)
            + struct.pack(">d", msg.t)
            + struct.pack(">7f", *msg.position, *msg.orientation)
        )
    return _pad_string(msg.address) + _pad_string(msg.typetags) + _encode_args(msg.typetags[1:], msg.args)


def encode_bundle(bundle: OscBundle) -> bytes:
    out = BUNDLE_TAG + struct.pack(">Q", bundle.timetag)
    for el in bundle.elements:
        body = encode_bundle(el) if isinstance(el, OscBundle) else encode_osc(el)
        out += struct.pack(">i", len(body)) + body
    return out


def _encode_args(tags, args):
    out = b""
    it = iter(args)
    for tag in tags:
        v = next(it)  # T, F, N and I occupy an argument slot but no bytes
        if tag in "TFNI":
            continue
        if tag == "i":
            out += struct.pack(">i", v)
        elif tag == "f":
            out += struct.pack(">f", v)
        elif tag == "d":
            out += struct.pack(">d", v)
        elif tag in "ht":
            out += struct.pack(">q" if tag == "h" else ">Q", v)
        elif tag in "sS":
            out += _pad_string(v)
        elif tag == "b":
            out += _pad_blob(v)
        elif tag == "c":
            out += struct.pack(">i", ord(v))
        elif tag in "rm":
            out += struct.pack(">I", v)
        else:
            raise ValueError(f"cannot encode type tag {tag!r}")
    return out


class _Reader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base

    def fail(self, message, at=None):
        raise ProtocolError(message, self.base + (self.pos if at is None else at))

    def take(self, n):
        if self.pos + n > len(self.data):
            self.fail(f"truncated: need {n} bytes, {len(self.data) - self.pos} left")
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def string(self):
        start = self.pos
        end = self.data.find(b"\x00", start)
        if end < 0:
            self.fail("unterminated string")
        stop = end + 1 + (-(end + 1 - start) % 4)
        if stop > len(self.data):
            self.fail("truncated string padding", start)
        if any(self.data[end + 1 : stop]):
            self.fail("non-zero string padding", end + 1)
        self.pos = stop
        try:
            return self.data[start:end].decode("utf-8")
        except UnicodeDecodeError:
            self.fail("string is not valid UTF-8", start)

    def unpack(self, fmt_, n):
        return struct.unpack(fmt_, self.take(n))[0]


def _parse_message(data: bytes, base: int = 0) -> Message:
    if len(data) % 4:
        raise ProtocolError(f"message length {len(data)} is not a multiple of 4", base)
    if len(data) < 4:
        raise ProtocolError("packet too short", base)
    r = _Reader(data, base)
    if data[:1] != b"/":
        r.fail("address must start with '/'")
    address = r.string()
    if r.pos == len(data):
        return OscMessage(address, ",", ())  # pre-1.0 senders may omit tags
    tag_at = r.pos
    tags = r.string()
    if not tags.startswith(","):
        r.fail("type tag string must start with ','", tag_at)
    args = []
    for i, tag in enumerate(tags[1:]):
        if tag == "i":
            args.append(r.unpack(">i", 4))
        elif tag == "f":
            args.append(r.unpack(">f", 4))
        elif tag == "d":
            args.append(r.unpack(">d", 8))
        elif tag == "h":
            args.append(r.unpack(">q", 8))
        elif tag == "t":
            args.append(r.unpack(">Q", 8))
        elif tag in "sS":
            args.append(r.string())
        elif tag == "b":
            n = r.unpack(">i", 4)
            if n < 0:
                r.fail("negative blob size", r.pos - 4)
            args.append(r.take(n))
            pad = r.take(-n % 4)
            if any(pad):
                r.fail("non-zero blob padding", r.pos - len(pad))
        elif tag == "c":
            args.append(chr(r.unpack(">i", 4)))
        elif tag in "rm":
            args.append(r.unpack(">I", 4))
        elif tag in "TFNI":
            args.append({"T": True, "F": False, "N": None, "I": float("inf")}[tag])
        else:
            r.fail(f"unknown type tag {tag!r}", tag_at + 1 + i)
    if r.pos != len(data):
        r.fail("trailing bytes after arguments")
    if address == POSE_ADDRESS and tags == POSE_TYPETAGS:
        return OscPoseMessage(args[0], args[1], tuple(args[2:5]), tuple(args[5:9]))
    return OscMessage(address, tags, tuple(args))


def parse_osc(data: bytes) -> Message:
    """Decode a single (non-bundle) OSC message."""
    if data[:8] == BUNDLE_TAG:
        raise ProtocolError("expected a message, got a bundle", 0)
    return _parse_message(bytes(data))


def _parse_bundle(data: bytes, base: int, out: list):
    r = _Reader(data, base)
    r.take(8)
    timetag = r.unpack(">Q", 8)
    while r.pos < len(data):
        size = r.unpack(">i", 4)
        if size <= 0 or size % 4:
            r.fail(f"bad bundle element size {size}", r.pos - 4)
        at = r.pos
        body = r.take(size)
        if body[:8] == BUNDLE_TAG:
            _parse_bundle(body, base + at, out)
        else:
            out.append(_parse_message(body, base + at))
    return timetag


def parse_packet(data: bytes):
    """Decode a UDP payload into ``(messages, bundle_timetag_or_None)``."""
    data = bytes(data)
    if data[:8] == BUNDLE_TAG:
        out = []
        if len(data) % 4:
            raise ProtocolError(f"bundle length {len(data)} is not a multiple of 4", 0)
        timetag = _parse_bundle(data, 0, out)
        return out, timetag
    return [_parse_message(data)], None
