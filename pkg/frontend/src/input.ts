/** Keyboard twist input, sampled on a fixed cadence.
 *
 * The gateway treats a silent operator as a watchdog condition, so the
 * sampler keeps sending (including all-zero axes) at SAMPLE_HZ while
 * enabled. Key map, world frame:
 *
 *   a/d  -x/+x      w/s  +y/-y      r/f  +z/-z
 *   q/e  yaw -z/+z rotation         g    gripper toggle
 *   space  emergency stop
 */

import type { InputMsg } from "./messages.js";

export const SAMPLE_HZ = 15;
export const SAMPLE_PERIOD_MS = 1000 / SAMPLE_HZ;

export type Axes = [number, number, number, number, number, number];

const AXIS_KEYS: Record<string, { axis: number; sign: number }> = {
  d: { axis: 0, sign: +1 },
  a: { axis: 0, sign: -1 },
  w: { axis: 1, sign: +1 },
  s: { axis: 1, sign: -1 },
  r: { axis: 2, sign: +1 },
  f: { axis: 2, sign: -1 },
  e: { axis: 5, sign: +1 },
  q: { axis: 5, sign: -1 },
};

export function axesFromKeys(held: ReadonlySet<string>): Axes {
  const axes: Axes = [0, 0, 0, 0, 0, 0];
  for (const key of held) {
    const m = AXIS_KEYS[key];
    if (m) axes[m.axis] = Math.max(-1, Math.min(1, axes[m.axis] + m.sign));
  }
  return axes;
}

type Timer = ReturnType<typeof setInterval>;

export class InputSampler {
  private held = new Set<string>();
  private gripperToggle = false;
  private estop = false;
  private timer: Timer | null = null;

  constructor(private send: (msg: InputMsg) => void) {}

  keyDown(key: string): void {
    const k = key.toLowerCase();
    if (k === "g") this.gripperToggle = true;
    else if (k === " ") this.estop = true;
    else if (k in AXIS_KEYS) this.held.add(k);
  }

  keyUp(key: string): void {
    this.held.delete(key.toLowerCase());
  }

  /** Drop all held keys (window blur, tab switch). */
  clear(): void {
    this.held.clear();
  }

  start(): void {
    if (this.timer !== null) return;
    this.timer = setInterval(() => this.sample(), SAMPLE_PERIOD_MS);
  }

  stop(): void {
    if (this.timer !== null) clearInterval(this.timer);
    this.timer = null;
  }

  /** Build and send one input message; one-shot flags reset after sending. */
  sample(): InputMsg {
    const msg: InputMsg = { type: "input", axes: axesFromKeys(this.held) };
    if (this.gripperToggle) msg.gripper_toggle = true;
    if (this.estop) msg.estop = true;
    this.gripperToggle = false;
    this.estop = false;
    this.send(msg);
    return msg;
  }
}
