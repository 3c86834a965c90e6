import { describe, expect, it } from "vitest";

import { parseServerMessage } from "../src/messages.js";

const welcome = {
  type: "welcome",
  role: "operator",
  workcell: "bench",
  dof: 6,
  cameras: ["cam0", "cam1"],
  spawn_region: [-0.75, -0.21, -0.55, -0.01],
  fps: 30.0,
};

const state = {
  type: "state",
  t: 1.234,
  q: [0, 0, 0, 0, 0, 0],
  qd: [0, 0, 0, 0, 0, 0],
  ee_pose: [0.1, 0.2, 0.3, 1, 0, 0, 0],
  gripper: 1.0,
  recording: { active: false, episode_id: null, frameset_count: 0 },
};

describe("parseServerMessage", () => {
  it("accepts every documented server message", () => {
    expect(parseServerMessage(JSON.stringify(welcome))?.type).toBe("welcome");
    expect(parseServerMessage(JSON.stringify(state))?.type).toBe("state");
    expect(
      parseServerMessage(
        JSON.stringify({
          type: "thumb",
          camera_id: "cam0",
          trigger_seq: 12,
          width: 2,
          height: 1,
          data: Buffer.from([1, 2, 3, 4, 5, 6]).toString("base64"),
        }),
      )?.type,
    ).toBe("thumb");
    expect(
      parseServerMessage(
        JSON.stringify({
          type: "record_status",
          active: true,
          episode_id: "ep0000",
          frameset_count: 7,
          episode_count: 0,
        }),
      )?.type,
    ).toBe("record_status");
    expect(
      parseServerMessage(
        JSON.stringify({
          type: "record_status",
          active: false,
          episode_id: null,
          frameset_count: 0,
          episode_count: 1,
          last_episode: { episode_id: "ep0000", frameset_count: 150, dropped_framesets: 0 },
        }),
      )?.type,
    ).toBe("record_status");
    expect(parseServerMessage(JSON.stringify({ type: "error", error: "busy" }))?.type).toBe(
      "error",
    );
  });

  it("returns null for malformed JSON", () => {
    expect(parseServerMessage("{nope")).toBeNull();
  });

  it("returns null for unknown message types instead of throwing", () => {
    expect(parseServerMessage(JSON.stringify({ type: "telemetry_v2", x: 1 }))).toBeNull();
  });

  it("returns null when a known type fails its schema", () => {
    const bad = { ...state, ee_pose: [1, 2, 3] };
    expect(parseServerMessage(JSON.stringify(bad))).toBeNull();
    expect(parseServerMessage(JSON.stringify({ ...welcome, dof: -1 }))).toBeNull();
  });
});
