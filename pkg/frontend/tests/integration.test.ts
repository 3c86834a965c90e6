/**
 * Headless console session against a live gateway: start recording, drive
 * 5 seconds of keyboard twists through the real input sampler, stop, then
 * check the episode with the command line validator.
 */

import { execFile, spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { promisify } from "node:util";
import { WebSocket } from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { InputSampler } from "../src/input.js";
import { parseServerMessage, type ClientMessage } from "../src/messages.js";
import { initialState, reduce, showDisconnectedBanner } from "../src/state.js";

const execFileP = promisify(execFile);

const ROOT = resolve(__dirname, "..", "..");
const CONFIG = join(ROOT, "configs", "ur5_kinect4.json");
const PORT = 8931;
const URL = `ws://127.0.0.1:${PORT}/teleop`;

let server: ChildProcess;
let episodesDir: string;

function sleep(ms: number): Promise<void> {
  return new Promise((r) => setTimeout(r, ms));
}

async function waitForGateway(timeoutMs = 30000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    const ok = await new Promise<boolean>((resolveTry) => {
      const ws = new WebSocket(URL);
      ws.on("open", () => {
        ws.close();
        resolveTry(true);
      });
      ws.on("error", () => resolveTry(false));
    });
    if (ok) return;
    await sleep(250);
  }
  throw new Error("gateway did not come up");
}

beforeAll(async () => {
  episodesDir = mkdtempSync(join(tmpdir(), "console-episodes-"));
  server = spawn(
    "python3",
    ["-m", "workcell.cli", "serve", "--config", CONFIG, "--port", String(PORT),
     "--episodes-dir", episodesDir],
    { cwd: ROOT, stdio: ["ignore", "pipe", "pipe"] },
  );
  server.stderr?.on("data", (d) => process.stderr.write(`[serve] ${d}`));
  await waitForGateway();
}, 45000);

afterAll(async () => {
  server?.kill("SIGTERM");
  await sleep(500);
  server?.kill("SIGKILL");
});

describe("console against a live gateway", () => {
  it("records a valid episode from a scripted teleop session", async () => {
    const state = initialState();
    const ws = new WebSocket(URL);
    const send = (msg: ClientMessage) => ws.send(JSON.stringify(msg));
    let stateCount = 0;
    ws.on("message", (data) => {
      const msg = parseServerMessage(data.toString());
      if (msg) {
        if (msg.type === "state") stateCount++;
        reduce(state, msg, Date.now());
      }
    });
    await new Promise<void>((r) => ws.on("open", () => r()));
    state.connected = true;

    send({ type: "hello", role: "operator" });
    const t0 = Date.now();
    while (!state.welcome && Date.now() - t0 < 5000) await sleep(50);
    expect(state.welcome?.role).toBe("operator");
    expect(state.welcome?.dof).toBe(6);
    expect(state.welcome?.cameras.length).toBeGreaterThan(0);

    // The sampler keeps the command stream alive, zeros included.
    const sampler = new InputSampler(send);
    sampler.start();

    send({ type: "record_start", episode_id: "console0" });
    const sessionStart = Date.now();
    stateCount = 0;

    // 5 s of keyboard twists: alternating directions, then a pause.
    const script: Array<[string[], number]> = [
      [["w"], 900],
      [["s", "d"], 900],
      [["a"], 900],
      [["f"], 700],
      [["r"], 700],
      [[], 900],
    ];
    for (const [keys, ms] of script) {
      for (const k of keys) sampler.keyDown(k);
      await sleep(ms);
      for (const k of keys) sampler.keyUp(k);
    }

    const sessionRateHz = (1000 * stateCount) / (Date.now() - sessionStart);
    send({ type: "record_stop" });
    const t1 = Date.now();
    while (!state.recordStatus?.last_episode && Date.now() - t1 < 10000) await sleep(50);
    sampler.stop();
    ws.close();

    // Live stream health over the whole driving session.
    expect(sessionRateHz).toBeGreaterThanOrEqual(10);
    expect(showDisconnectedBanner(state, state.lastStateAtMs! + 100)).toBe(false);
    expect(state.thumbs.size).toBeGreaterThan(0);
    const anyThumb = [...state.thumbs.values()][0];
    expect(anyThumb.width).toBe(40);
    expect(anyThumb.height).toBe(30);

    // The gateway finalized the episode we asked for.
    const last = state.recordStatus!.last_episode!;
    expect(last.episode_id).toBe("console0");
    expect(last.frameset_count).toBeGreaterThan(100);
    expect(last.dropped_framesets).toBe(0);

    // And the on-disk episode passes the command line validator.
    const { stdout } = await execFileP(
      "python3",
      ["-m", "workcell.cli", "validate", join(episodesDir, "console0")],
      { cwd: ROOT },
    );
    expect(stdout).toContain("episode ok");
    expect(stdout).toContain("console0");
  }, 60000);
});
