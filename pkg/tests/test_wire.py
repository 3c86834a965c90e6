import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from workcell.errors import FramingError, ProtocolError
from workcell import wire
from workcell.wire import (
    NEED_MORE,
    ErrorMessage,
    GripperCommand,
    Hello,
    HelloAck,
    MessageEvent,
    Phase,
    SessionState,
    SpeedJCommand,
    Start,
    StatePacket,
    Stop,
    StreamDecoder,
    Subscribe,
    TickEvent,
    Watchdog,
    WatchdogVerdict,
    decode,
    encode,
    session_step,
    watchdog_check,
)

GOLDEN_DIR = Path(__file__).parent / "golden" / "rtdx"


def state_packet(seq=42, ts=0.336, dof=6):
    return StatePacket(
        seq=seq,
        timestamp=ts,
        q=[0.0, -np.pi / 2, np.pi / 2, -np.pi / 2, -np.pi / 2, 0.0][:dof] + [0.0] * max(0, dof - 6),
        qd=[0.1, 0.0, -0.1, 0.0, 0.0, 0.0][:dof] + [0.0] * max(0, dof - 6),
        ee_pose=[0.4, -0.1, 0.3, 1.0, 0.0, 0.0, 0.0],
        gripper=0.75,
    )


class TestCodec:
    def test_hello_bytes_are_fixed(self):
        assert encode(Hello(1)) == bytes.fromhex("52544458" "01" "02000000" "0100")

    def test_state_dof6_payload_len(self):
        data = encode(state_packet())
        _, _, plen = struct.unpack_from("<4sBI", data)
        assert plen == 176
        assert len(data) == 9 + 176

    @pytest.mark.parametrize("msg", [
        Hello(1),
        HelloAck(1),
        Subscribe(125.0, ("q", "qd", "ee_pose", "gripper")),
        Subscribe(30.0, ("q",)),
        Start(),
        Stop(),
        state_packet(),
        state_packet(dof=12),
        SpeedJCommand((0.05, 0, 0, 0, 0, -0.05), 5.0, 0.2),
        GripperCommand("open"),
        GripperCommand("close"),
        ErrorMessage("nope"),
    ])
    def test_round_trip(self, msg):
        decoded, consumed = decode(encode(msg))
        assert decoded == msg
        assert consumed == len(encode(msg))

    def test_incomplete_header(self):
        data = encode(state_packet())
        assert decode(data[:8]) is NEED_MORE

    def test_incomplete_payload(self):
        data = encode(state_packet())
        assert decode(data[:-1]) is NEED_MORE

    def test_bad_magic(self):
        with pytest.raises(FramingError):
            decode(b"\x00\x00\x00\x00" + b"\x00" * 20)

    def test_bad_magic_short_buffer(self):
        with pytest.raises(FramingError):
            decode(b"\x00\x00\x00\x00")

    def test_unknown_kind(self):
        bad = b"RTDX" + struct.pack("<BI", 0x55, 0)
        with pytest.raises(ProtocolError):
            decode(bad)

    def test_oversized_payload_rejected(self):
        bad = b"RTDX" + struct.pack("<BI", 0x05, (1 << 20) + 1)
        with pytest.raises(ProtocolError):
            decode(bad)

    def test_two_concatenated_frames(self):
        a = encode(Hello(1))
        b = encode(state_packet())
        msg, consumed = decode(a + b)
        assert msg == Hello(1)
        assert consumed == len(a)
        msg2, consumed2 = decode((a + b)[consumed:])
        assert msg2 == state_packet()
        assert consumed2 == len(b)

    def test_stream_decoder_byte_at_a_time(self):
        msgs = [Hello(1), Subscribe(125.0), Start(), state_packet(seq=0)]
        blob = b"".join(encode(m) for m in msgs)
        dec = StreamDecoder()
        seen = []
        for i in range(len(blob)):
            seen.extend(dec.feed(blob[i:i + 1]))
        assert seen == msgs


class TestGoldenFrames:
    def test_goldens_exist(self):
        assert sorted(p.name for p in GOLDEN_DIR.glob("*.bin")), "run tests/golden/make_goldens.py"

    @pytest.mark.parametrize("name,msg", [
        ("hello.bin", Hello(1)),
        ("hello_ack.bin", HelloAck(1)),
        ("subscribe_125hz.bin", Subscribe(125.0, ("q", "qd", "ee_pose", "gripper"))),
        ("start.bin", Start()),
        ("stop.bin", Stop()),
        ("state_dof6.bin", state_packet()),
        ("speedj_dof6.bin", SpeedJCommand((0.05, 0, 0, 0, 0, -0.05), 5.0, 0.2)),
        ("gripper_close.bin", GripperCommand("close")),
        ("gripper_open.bin", GripperCommand("open")),
        ("error.bin", ErrorMessage("command before START")),
    ])
    def test_byte_exact(self, name, msg):
        golden = (GOLDEN_DIR / name).read_bytes()
        assert encode(msg) == golden
        decoded, consumed = decode(golden)
        assert decoded == msg and consumed == len(golden)


message_strategy = st.one_of(
    st.builds(Hello, st.integers(0, 65535)),
    st.builds(HelloAck, st.integers(0, 65535)),
    st.builds(
        Subscribe,
        st.floats(min_value=0.001, max_value=1000.0, allow_nan=False),
        st.permutations(list(wire.SUBSCRIBE_FIELDS)).flatmap(
            lambda p: st.integers(1, 4).map(lambda n: tuple(p[:n]))
        ),
    ),
    st.just(Start()),
    st.just(Stop()),
    st.tuples(
        st.integers(0, 2**64 - 1),
        st.floats(0, 1e6, allow_nan=False),
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=16),
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=7, max_size=7),
        st.floats(0, 1, allow_nan=False),
    ).map(lambda t: StatePacket(t[0], t[1], tuple(t[2]), (0.0,) * len(t[2]), tuple(t[3]), t[4])),
    st.builds(
        SpeedJCommand,
        st.lists(st.floats(-5, 5, allow_nan=False), min_size=1, max_size=16).map(tuple),
        st.floats(min_value=0.001, max_value=100, allow_nan=False),
        st.floats(min_value=0.001, max_value=100, allow_nan=False),
    ),
    st.builds(GripperCommand, st.sampled_from(["open", "close"])),
    st.builds(ErrorMessage, st.text(max_size=200)),
)


@given(message_strategy)
@settings(max_examples=500, deadline=None)
def test_codec_totality_property(msg):
    decoded, consumed = decode(encode(msg))
    assert decoded == msg
    assert consumed == len(encode(msg))


class Snap:
    q = (0.0,) * 6
    qd = (0.0,) * 6
    ee_pose = (0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0)
    gripper = 1.0


def handshake(freq=125.0, t0=0.0):
    s = SessionState()
    s, out, _ = session_step(s, MessageEvent(Hello(1), t0))
    assert out == [HelloAck(1)]
    s, _, _ = session_step(s, MessageEvent(Subscribe(freq), t0))
    s, _, _ = session_step(s, MessageEvent(Start(), t0))
    assert s.phase is Phase.STREAMING
    return s


class TestSession:
    def test_hello_from_closed(self):
        s = SessionState()
        s, out, actions = session_step(s, MessageEvent(Hello(1), 0.0))
        assert s.phase is Phase.HANDSHAKEN
        assert out == [HelloAck(1)]
        assert actions == []

    def test_subscribe_before_hello_is_protocol_error(self):
        s = SessionState()
        s, out, actions = session_step(s, MessageEvent(Subscribe(125.0), 0.0))
        assert s.phase is Phase.CLOSED
        assert any(isinstance(m, ErrorMessage) for m in out)
        assert ("protocol_error" in [a[0] for a in actions])

    def test_command_before_start_is_protocol_error(self):
        s = SessionState()
        s, _, _ = session_step(s, MessageEvent(Hello(1), 0.0))
        s, _, actions = session_step(s, MessageEvent(SpeedJCommand((0.0,) * 6, 1.0, 0.1), 0.0))
        assert s.phase is Phase.CLOSED
        assert ("protocol_error" in [a[0] for a in actions])

    def test_streaming_125hz_2s_emits_250_packets(self):
        s = handshake(125.0)
        pkts = []
        dt = 1.0 / 125.0
        for i in range(1, 251):
            s, out, _ = session_step(s, TickEvent(i * dt, Snap()))
            pkts.extend(out)
        assert len(pkts) == 250
        assert [p.seq for p in pkts] == list(range(250))

    def test_streaming_30s_count_and_gapless_seq(self):
        s = handshake(125.0)
        pkts = []
        # Irregular tick cadence must not change the emitted count.
        rng = np.random.default_rng(7)
        t = 0.0
        while t < 30.0:
            t = min(30.0, t + rng.uniform(0.001, 0.02))
            s, out, _ = session_step(s, TickEvent(t, Snap()))
            pkts.extend(out)
        assert len(pkts) == 3750
        seqs = [p.seq for p in pkts]
        assert seqs == list(range(3750))
        ts = [p.timestamp for p in pkts]
        assert all(b >= a for a, b in zip(ts, ts[1:]))

    def test_command_routed_while_streaming(self):
        s = handshake()
        cmd = SpeedJCommand((0.1,) * 6, 5.0, 0.2)
        s, out, actions = session_step(s, MessageEvent(cmd, 0.1))
        assert actions == [("command", cmd)]
        assert s.phase is Phase.STREAMING

    def test_stop_closes(self):
        s = handshake()
        s, _, actions = session_step(s, MessageEvent(Stop(), 0.5))
        assert s.phase is Phase.CLOSED
        assert ("stopped",) in actions


class TestWatchdog:
    def test_within_timeout(self):
        assert watchdog_check(0.0, 0.05, 0.1) is WatchdogVerdict.OK

    def test_past_timeout(self):
        assert watchdog_check(0.0, 0.11, 0.1) is WatchdogVerdict.SAFE_STOP

    def test_625hz_commands_never_trip(self):
        wd = Watchdog(timeout=0.1)
        t = 0.0
        for _ in range(625):  # 10 s at 62.5 Hz
            t += 0.016
            assert wd.check(t) is WatchdogVerdict.OK
            wd.command_received(t)
        assert wd.fire_count == 0

    def test_single_gap_fires_exactly_once(self):
        wd = Watchdog(timeout=0.1)
        t = 0.0
        tick = 0.002
        # Commands at 62.5 Hz, one 110 ms gap in the middle, then resume.
        next_cmd = 0.016
        gap_until = None
        while t < 2.0:
            t += tick
            if 0.9 <= t < 0.9 + 0.11:
                pass  # the gap
            elif t >= next_cmd:
                wd.command_received(t)
                next_cmd = t + 0.016
            wd.check(t)
        assert wd.fire_count == 1
