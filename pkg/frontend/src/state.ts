/** Console model: a pure reducer over server messages plus a clock. */

import type { RecordStatus, ServerMessage, State, Thumb, Welcome } from "./messages.js";

export const DISCONNECT_BANNER_AFTER_MS = 1000;

export interface ThumbView {
  cameraId: string;
  triggerSeq: number;
  width: number;
  height: number;
  /** Row-major RGB bytes, decoded from base64. */
  rgb: Uint8Array;
}

export interface ConsoleState {
  connected: boolean;
  welcome: Welcome | null;
  state: State | null;
  /** Wall-clock ms of the last state message, for staleness detection. */
  lastStateAtMs: number | null;
  /** Measured state-message rate over the last second, Hz. */
  stateRateHz: number;
  stateTimesMs: number[];
  thumbs: Map<string, ThumbView>;
  recordStatus: RecordStatus | null;
  lastError: string | null;
}

export function initialState(): ConsoleState {
  return {
    connected: false,
    welcome: null,
    state: null,
    lastStateAtMs: null,
    stateRateHz: 0,
    stateTimesMs: [],
    thumbs: new Map(),
    recordStatus: null,
    lastError: null,
  };
}

function decodeBase64(data: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(data);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  return new Uint8Array(Buffer.from(data, "base64"));
}

function pushStateTime(s: ConsoleState, nowMs: number): void {
  s.stateTimesMs.push(nowMs);
  while (s.stateTimesMs.length > 0 && s.stateTimesMs[0] < nowMs - 1000) {
    s.stateTimesMs.shift();
  }
  s.stateRateHz = s.stateTimesMs.length;
}

/** Apply one parsed server message; mutates and returns the state. */
export function reduce(s: ConsoleState, msg: ServerMessage, nowMs: number): ConsoleState {
  switch (msg.type) {
    case "welcome":
      s.welcome = msg;
      s.connected = true;
      break;
    case "state":
      s.state = msg;
      s.lastStateAtMs = nowMs;
      pushStateTime(s, nowMs);
      break;
    case "thumb": {
      const t: Thumb = msg;
      const rgb = decodeBase64(t.data);
      if (rgb.length === t.width * t.height * 3) {
        s.thumbs.set(t.camera_id, {
          cameraId: t.camera_id,
          triggerSeq: t.trigger_seq,
          width: t.width,
          height: t.height,
          rgb,
        });
      }
      break;
    }
    case "record_status":
      s.recordStatus = msg;
      break;
    case "error":
      s.lastError = msg.error;
      break;
  }
  return s;
}

export function markDisconnected(s: ConsoleState): ConsoleState {
  s.connected = false;
  return s;
}

/** True when the stream is live but stale, or the socket dropped. */
export function showDisconnectedBanner(s: ConsoleState, nowMs: number): boolean {
  if (!s.connected) return true;
  if (s.lastStateAtMs === null) return false;
  return nowMs - s.lastStateAtMs > DISCONNECT_BANNER_AFTER_MS;
}
