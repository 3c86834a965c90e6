"""Regenerate the golden wire frames from the frozen byte layout.

Deliberately packs bytes with struct directly instead of going through the
codec, so the files stay an independent check on the framing.
"""

import struct
from pathlib import Path

OUT = Path(__file__).parent / "rtdx"


def frame(kind, payload):
    return b"RTDX" + struct.pack("<BI", kind, len(payload)) + payload


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    goldens = {}

    goldens["hello.bin"] = frame(0x01, struct.pack("<H", 1))
    goldens["hello_ack.bin"] = frame(0x02, struct.pack("<H", 1))

    fields = [b"q", b"qd", b"ee_pose", b"gripper"]
    sub = struct.pack("<dB", 125.0, len(fields))
    for f in fields:
        sub += struct.pack("<B", len(f)) + f
    goldens["subscribe_125hz.bin"] = frame(0x03, sub)

    goldens["start.bin"] = frame(0x04, b"")
    goldens["stop.bin"] = frame(0x08, b"")

    q = [0.0, -1.5707963267948966, 1.5707963267948966, -1.5707963267948966, -1.5707963267948966, 0.0]
    qd = [0.1, 0.0, -0.1, 0.0, 0.0, 0.0]
    ee = [0.4, -0.1, 0.3, 1.0, 0.0, 0.0, 0.0]
    state = struct.pack("<Qd", 42, 0.336)
    state += struct.pack("<6d", *q) + struct.pack("<6d", *qd)
    state += struct.pack("<7d", *ee) + struct.pack("<d", 0.75)
    assert len(state) == 176
    goldens["state_dof6.bin"] = frame(0x05, state)

    cmd = struct.pack("<6d", 0.05, 0.0, 0.0, 0.0, 0.0, -0.05)
    cmd += struct.pack("<dd", 5.0, 0.2)
    goldens["speedj_dof6.bin"] = frame(0x06, cmd)

    goldens["gripper_close.bin"] = frame(0x07, struct.pack("<B", 0))
    goldens["gripper_open.bin"] = frame(0x07, struct.pack("<B", 1))
    goldens["error.bin"] = frame(0x7F, "command before START".encode("utf-8"))

    for name, data in goldens.items():
        (OUT / name).write_bytes(data)
        print(f"wrote {name} ({len(data)} bytes)")


if __name__ == "__main__":
    main()
