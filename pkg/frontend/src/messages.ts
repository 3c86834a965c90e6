/** Gateway websocket message schemas (see docs/teleop_messages.md). */

import { z } from "zod";

export const WelcomeMsg = z.object({
  type: z.literal("welcome"),
  role: z.enum(["operator", "observer"]),
  workcell: z.string(),
  dof: z.number().int().positive(),
  cameras: z.array(z.string()),
  spawn_region: z.tuple([z.number(), z.number(), z.number(), z.number()]),
  fps: z.number().positive(),
});

export const StateMsg = z.object({
  type: z.literal("state"),
  t: z.number(),
  q: z.array(z.number()),
  qd: z.array(z.number()),
  ee_pose: z.array(z.number()).length(7),
  gripper: z.number(),
  recording: z.object({
    active: z.boolean(),
    episode_id: z.string().nullable(),
    frameset_count: z.number().int(),
  }),
});

export const ThumbMsg = z.object({
  type: z.literal("thumb"),
  camera_id: z.string(),
  trigger_seq: z.number().int(),
  width: z.number().int().positive(),
  height: z.number().int().positive(),
  data: z.string(), // base64 row-major RGB bytes
});

export const RecordStatusMsg = z.object({
  type: z.literal("record_status"),
  active: z.boolean(),
  episode_id: z.string().nullable(),
  frameset_count: z.number().int(),
  episode_count: z.number().int(),
  last_episode: z
    .object({
      episode_id: z.string(),
      frameset_count: z.number().int(),
      dropped_framesets: z.number().int(),
    })
    .optional(),
});

export const ErrorMsg = z.object({
  type: z.literal("error"),
  error: z.string(),
});

export const ServerMsg = z.discriminatedUnion("type", [
  WelcomeMsg,
  StateMsg,
  ThumbMsg,
  RecordStatusMsg,
  ErrorMsg,
]);

export type Welcome = z.infer<typeof WelcomeMsg>;
export type State = z.infer<typeof StateMsg>;
export type Thumb = z.infer<typeof ThumbMsg>;
export type RecordStatus = z.infer<typeof RecordStatusMsg>;
export type ServerMessage = z.infer<typeof ServerMsg>;

export interface InputMsg {
  type: "input";
  axes: [number, number, number, number, number, number];
  gripper_toggle?: boolean;
  estop?: boolean;
}

export type ClientMessage =
  | { type: "hello"; role: "operator" | "observer" }
  | InputMsg
  | { type: "record_start"; episode_id?: string }
  | { type: "record_stop" }
  | { type: "record_status" };

/**
 * Parse one incoming frame. Returns null for malformed JSON, documents
 * failing their schema, and unknown message types: the console ignores
 * anything it does not understand instead of breaking.
 */
export function parseServerMessage(raw: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch {
    return null;
  }
  const res = ServerMsg.safeParse(doc);
  return res.success ? res.data : null;
}
