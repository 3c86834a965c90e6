"""Binary real-time state/command protocol for the simulated robot nodes.

Framing, little-endian throughout:

    magic "RTDX" | kind u8 | payload_len u32 | payload

The codec is pure; `ServerSession` holds per-connection protocol state and is
driven explicitly with message and timer events, so it never reads a clock
itself and every timing test is deterministic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FramingError, ProtocolError

MAGIC = b"RTDX"
HEADER = struct.Struct("<4sBI")
MAX_PAYLOAD = 1 << 20

PROTOCOL_VERSION = 1
DEFAULT_STATE_HZ = 125.0
DEFAULT_WATCHDOG_TIMEOUT = 0.1

SUBSCRIBE_FIELDS = ("q", "qd", "ee_pose", "gripper")


class Kind:
    HELLO = 0x01
    HELLO_ACK = 0x02
    SUBSCRIBE = 0x03
    START = 0x04
    STATE = 0x05
    CMD_SPEEDJ = 0x06
    CMD_GRIPPER = 0x07
    STOP = 0x08
    ERROR = 0x7F


@dataclass(frozen=True)
class Hello:
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class HelloAck:
    version: int = PROTOCOL_VERSION


@dataclass(frozen=True)
class Subscribe:
    frequency_hz: float
    fields: tuple = SUBSCRIBE_FIELDS

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not (0.0 < self.frequency_hz <= 1000.0):
            raise ValueError(f"frequency {self.frequency_hz} outside (0, 1000] Hz")
        if not self.fields:
            raise ValueError("field list must be non-empty")
        if len(set(self.fields)) != len(self.fields):
            raise ValueError("duplicate field names")
        for f in self.fields:
            if f not in SUBSCRIBE_FIELDS:
                raise ValueError(f"unknown field {f!r}")


@dataclass(frozen=True)
class Start:
    pass


@dataclass(frozen=True)
class Stop:
    pass


@dataclass(frozen=True)
class StatePacket:
    seq: int
    timestamp: float  # seconds since session start
    q: tuple
    qd: tuple
    ee_pose: tuple  # x, y, z, qw, qx, qy, qz
    gripper: float

    def __post_init__(self):
        object.__setattr__(self, "q", tuple(float(x) for x in self.q))
        object.__setattr__(self, "qd", tuple(float(x) for x in self.qd))
        object.__setattr__(self, "ee_pose", tuple(float(x) for x in self.ee_pose))
        if len(self.q) != len(self.qd):
            raise ValueError("q and qd lengths differ")
        if len(self.ee_pose) != 7:
            raise ValueError("ee_pose must have 7 entries")

    @property
    def dof(self) -> int:
        return len(self.q)


@dataclass(frozen=True)
class SpeedJCommand:
    qd_target: tuple
    accel: float
    valid_for: float

    def __post_init__(self):
        object.__setattr__(self, "qd_target", tuple(float(x) for x in self.qd_target))
        vals = self.qd_target + (self.accel, self.valid_for)
        if not all(np.isfinite(vals)):
            raise ValueError("command fields must be finite")
        if self.accel <= 0.0:
            raise ValueError("accel must be positive")
        if self.valid_for <= 0.0:
            raise ValueError("valid_for must be positive")


@dataclass(frozen=True)
class GripperCommand:
    target: str  # "open" | "close"

    def __post_init__(self):
        if self.target not in ("open", "close"):
            raise ValueError(f"gripper target {self.target!r}")


@dataclass(frozen=True)
class ErrorMessage:
    message: str


class NeedMoreBytes:
    """Sentinel: the buffer does not yet hold one complete frame."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance


NEED_MORE = NeedMoreBytes()


def _frame(kind: int, payload: bytes) -> bytes:
    return HEADER.pack(MAGIC, kind, len(payload)) + payload


def encode(msg) -> bytes:
    """Serialize one message into a single wire frame."""
    if isinstance(msg, Hello):
        return _frame(Kind.HELLO, struct.pack("<H", msg.version))
    if isinstance(msg, HelloAck):
        return _frame(Kind.HELLO_ACK, struct.pack("<H", msg.version))
    if isinstance(msg, Subscribe):
        payload = struct.pack("<dB", msg.frequency_hz, len(msg.fields))
        for f in msg.fields:
            raw = f.encode("ascii")
            payload += struct.pack("<B", len(raw)) + raw
        return _frame(Kind.SUBSCRIBE, payload)
    if isinstance(msg, Start):
        return _frame(Kind.START, b"")
    if isinstance(msg, Stop):
        return _frame(Kind.STOP, b"")
    if isinstance(msg, StatePacket):
        n = msg.dof
        payload = struct.pack(
            "<Qd%dd%dd7dd" % (n, n),
            msg.seq, msg.timestamp, *msg.q, *msg.qd, *msg.ee_pose, msg.gripper,
        )
        return _frame(Kind.STATE, payload)
    if isinstance(msg, SpeedJCommand):
        n = len(msg.qd_target)
        payload = struct.pack("<%dddd" % n, *msg.qd_target, msg.accel, msg.valid_for)
        return _frame(Kind.CMD_SPEEDJ, payload)
    if isinstance(msg, GripperCommand):
        return _frame(Kind.CMD_GRIPPER, struct.pack("<B", 1 if msg.target == "open" else 0))
    if isinstance(msg, ErrorMessage):
        return _frame(Kind.ERROR, msg.message.encode("utf-8"))
    raise TypeError(f"not a wire message: {msg!r}")


def _decode_payload(kind: int, payload: bytes):
    if kind == Kind.HELLO:
        return Hello(struct.unpack("<H", payload)[0])
    if kind == Kind.HELLO_ACK:
        return HelloAck(struct.unpack("<H", payload)[0])
    if kind == Kind.SUBSCRIBE:
        freq, n = struct.unpack_from("<dB", payload, 0)
        off = 9
        fields = []
        for _ in range(n):
            (ln,) = struct.unpack_from("<B", payload, off)
            off += 1
            fields.append(payload[off:off + ln].decode("ascii"))
            off += ln
        if off != len(payload):
            raise ProtocolError("trailing bytes in SUBSCRIBE payload")
        return Subscribe(freq, tuple(fields))
    if kind == Kind.START:
        return Start()
    if kind == Kind.STOP:
        return Stop()
    if kind == Kind.STATE:
        if (len(payload) - 80) % 16 != 0 or len(payload) < 80:
            raise ProtocolError(f"STATE payload length {len(payload)} is not 80 + 16*dof")
        n = (len(payload) - 80) // 16
        vals = struct.unpack("<Qd%dd%dd7dd" % (n, n), payload)
        return StatePacket(
            seq=vals[0], timestamp=vals[1],
            q=vals[2:2 + n], qd=vals[2 + n:2 + 2 * n],
            ee_pose=vals[2 + 2 * n:9 + 2 * n], gripper=vals[9 + 2 * n],
        )
    if kind == Kind.CMD_SPEEDJ:
        if len(payload) % 8 != 0 or len(payload) < 24:
            raise ProtocolError(f"CMD_SPEEDJ payload length {len(payload)}")
        n = len(payload) // 8 - 2
        vals = struct.unpack("<%dd" % (n + 2), payload)
        return SpeedJCommand(vals[:n], vals[n], vals[n + 1])
    if kind == Kind.CMD_GRIPPER:
        (b,) = struct.unpack("<B", payload)
        return GripperCommand("open" if b else "close")
    if kind == Kind.ERROR:
        return ErrorMessage(payload.decode("utf-8"))
    raise ProtocolError(f"unknown message kind 0x{kind:02x}")


def decode(buf: bytes):
    """Decode one frame from the head of buf.

    Returns (message, bytes_consumed), or NEED_MORE if the buffer does not yet
    contain a full frame. Never consumes a partial frame.
    """
    if len(buf) < HEADER.size:
        if buf and not MAGIC.startswith(bytes(buf[:4])):
            raise FramingError("bad magic")
        return NEED_MORE
    magic, kind, plen = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FramingError(f"bad magic {magic!r}")
    if plen > MAX_PAYLOAD:
        raise ProtocolError(f"payload length {plen} exceeds {MAX_PAYLOAD}")
    total = HEADER.size + plen
    if len(buf) < total:
        return NEED_MORE
    try:
        msg = _decode_payload(kind, bytes(buf[HEADER.size:total]))
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, ProtocolError):
            raise
        raise ProtocolError(f"malformed payload for kind 0x{kind:02x}: {exc}") from exc
    return msg, total


class StreamDecoder:
    """Buffers a byte stream and yields complete messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes):
        self._buf.extend(data)
        out = []
        while True:
            res = decode(self._buf)
            if res is NEED_MORE:
                return out
            msg, consumed = res
            del self._buf[:consumed]
            out.append(msg)


# --- session state machine -------------------------------------------------

class Phase(Enum):
    CLOSED = "closed"
    HANDSHAKEN = "handshaken"
    SUBSCRIBED = "subscribed"
    STREAMING = "streaming"


@dataclass
class MessageEvent:
    msg: object
    now: float


@dataclass
class TickEvent:
    now: float
    snapshot: object = None  # object with q, qd, ee_pose, gripper


@dataclass
class SessionState:
    """Server-side protocol session; exactly one context drives it."""

    phase: Phase = Phase.CLOSED
    subscription: Subscribe | None = None
    started_at: float | None = None
    next_k: int = 1  # next state-emission index since start
    seq: int = 0
    last_timestamp: float = -1.0


def session_step(state: SessionState, event):
    """Advance a session by one event.

    Returns (state, outgoing_messages, actions). Actions are tuples the
    owning node interprets: ("command", msg), ("gripper", msg),
    ("protocol_error", reason), ("stopped",).
    """
    out, actions = [], []

    if isinstance(event, TickEvent):
        if state.phase is Phase.STREAMING and event.snapshot is not None:
            f = state.subscription.frequency_hz
            while state.started_at + state.next_k / f <= event.now + 1e-12:
                t = state.started_at + state.next_k / f
                snap = event.snapshot
                ts = t - state.started_at
                if ts < state.last_timestamp:
                    ts = state.last_timestamp
                pkt = StatePacket(
                    seq=state.seq, timestamp=ts,
                    q=snap.q, qd=snap.qd, ee_pose=snap.ee_pose, gripper=snap.gripper,
                )
                state.seq += 1
                state.next_k += 1
                state.last_timestamp = ts
                out.append(pkt)
        return state, out, actions

    msg = event.msg
    if isinstance(msg, Hello):
        if state.phase is not Phase.CLOSED:
            return _protocol_error(state, out, actions, "HELLO out of order")
        state.phase = Phase.HANDSHAKEN
        out.append(HelloAck(PROTOCOL_VERSION))
    elif isinstance(msg, Subscribe):
        if state.phase is not Phase.HANDSHAKEN:
            return _protocol_error(state, out, actions, "SUBSCRIBE out of order")
        state.subscription = msg
        state.phase = Phase.SUBSCRIBED
    elif isinstance(msg, Start):
        if state.phase is not Phase.SUBSCRIBED:
            return _protocol_error(state, out, actions, "START out of order")
        state.phase = Phase.STREAMING
        state.started_at = event.now
        state.next_k = 1
    elif isinstance(msg, (SpeedJCommand, GripperCommand)):
        if state.phase is not Phase.STREAMING:
            return _protocol_error(state, out, actions, "command before START")
        actions.append(("gripper" if isinstance(msg, GripperCommand) else "command", msg))
    elif isinstance(msg, Stop):
        state.phase = Phase.CLOSED
        actions.append(("stopped",))
    elif isinstance(msg, ErrorMessage):
        state.phase = Phase.CLOSED
        actions.append(("peer_error", msg.message))
    else:
        return _protocol_error(state, out, actions, f"unexpected {type(msg).__name__}")
    return state, out, actions


def _protocol_error(state, out, actions, reason):
    state.phase = Phase.CLOSED
    out.append(ErrorMessage(reason))
    actions.append(("protocol_error", reason))
    return state, out, actions


# --- watchdog --------------------------------------------------------------

class WatchdogVerdict(Enum):
    OK = "ok"
    SAFE_STOP = "safe_stop"


def watchdog_check(last_cmd_time: float, now: float, timeout: float) -> WatchdogVerdict:
    """SAFE_STOP iff the command gap exceeds the timeout."""
    if timeout <= 0.0:
        raise ValueError("timeout must be positive")
    if now - last_cmd_time > timeout:
        return WatchdogVerdict.SAFE_STOP
    return WatchdogVerdict.OK


class Watchdog:
    """Latched watchdog: fires once per gap, rearms on the next command."""

    def __init__(self, timeout: float = DEFAULT_WATCHDOG_TIMEOUT, now: float = 0.0):
        self.timeout = timeout
        self.last_cmd_time = now
        self.tripped = False
        self.fire_count = 0

    def command_received(self, now: float):
        self.last_cmd_time = now
        self.tripped = False

    def check(self, now: float) -> WatchdogVerdict:
        verdict = watchdog_check(self.last_cmd_time, now, self.timeout)
        if verdict is WatchdogVerdict.SAFE_STOP:
            if not self.tripped:
                self.tripped = True
                self.fire_count += 1
            return WatchdogVerdict.SAFE_STOP
        return WatchdogVerdict.OK
