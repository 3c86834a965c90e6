/** Drawing helpers. The coordinate math is pure and unit-tested; the
 * canvas calls live in thin wrappers. */

import type { ConsoleState, ThumbView } from "./state.js";

export interface Viewport {
  width: number;
  height: number;
}

/**
 * Map a world xy position into canvas pixels, fitting the spawn region
 * (padded by `margin` of its span on every side) into the viewport while
 * preserving aspect ratio. Canvas y grows downward, world y upward.
 */
export function worldToCanvas(
  xy: [number, number],
  region: [number, number, number, number],
  vp: Viewport,
  margin = 0.75,
): [number, number] {
  const [x0, y0, x1, y1] = region;
  const spanX = Math.max(x1 - x0, 1e-6);
  const spanY = Math.max(y1 - y0, 1e-6);
  const lox = x0 - margin * spanX;
  const hix = x1 + margin * spanX;
  const loy = y0 - margin * spanY;
  const hiy = y1 + margin * spanY;
  const scale = Math.min(vp.width / (hix - lox), vp.height / (hiy - loy));
  const cx = (lox + hix) / 2;
  const cy = (loy + hiy) / 2;
  return [
    vp.width / 2 + (xy[0] - cx) * scale,
    vp.height / 2 - (xy[1] - cy) * scale,
  ];
}

/** Fraction of a vertical bar for a z height within [lo, hi], clamped. */
export function zBarFraction(z: number, lo = 0.0, hi = 0.4): number {
  return Math.max(0, Math.min(1, (z - lo) / (hi - lo)));
}

/** Per-joint bar fractions in [-1, 1], clamped, from angles in radians. */
export function jointBarFractions(q: number[], limit = Math.PI): number[] {
  return q.map((v) => Math.max(-1, Math.min(1, v / limit)));
}

/** Expand packed RGB bytes to RGBA for ImageData. */
export function rgbToRgba(
  rgb: Uint8Array,
  width: number,
  height: number,
): Uint8ClampedArray<ArrayBuffer> {
  const out = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  for (let i = 0, j = 0; i < width * height; i++) {
    out[j++] = rgb[3 * i];
    out[j++] = rgb[3 * i + 1];
    out[j++] = rgb[3 * i + 2];
    out[j++] = 255;
  }
  return out;
}

function drawThumb(canvas: HTMLCanvasElement, t: ThumbView): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const img = new ImageData(rgbToRgba(t.rgb, t.width, t.height), t.width, t.height);
  canvas.width = t.width;
  canvas.height = t.height;
  ctx.putImageData(img, 0, 0);
}

export function drawScene(canvas: HTMLCanvasElement, s: ConsoleState): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || !s.welcome) return;
  const vp = { width: canvas.width, height: canvas.height };
  const region = s.welcome.spawn_region;
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, vp.width, vp.height);

  const [rx0, ry0] = worldToCanvas([region[0], region[3]], region, vp);
  const [rx1, ry1] = worldToCanvas([region[2], region[1]], region, vp);
  ctx.strokeStyle = "#3a6ea5";
  ctx.strokeRect(rx0, ry0, rx1 - rx0, ry1 - ry0);

  if (s.state) {
    const ee = s.state.ee_pose;
    const [px, py] = worldToCanvas([ee[0], ee[1]], region, vp);
    ctx.fillStyle = s.state.gripper < 0.5 ? "#e0a030" : "#4fc46a";
    ctx.beginPath();
    ctx.arc(px, py, 6, 0, 2 * Math.PI);
    ctx.fill();

    const zf = zBarFraction(ee[2]);
    ctx.fillStyle = "#30343a";
    ctx.fillRect(vp.width - 18, 8, 10, vp.height - 16);
    ctx.fillStyle = "#4fc46a";
    const h = (vp.height - 16) * zf;
    ctx.fillRect(vp.width - 18, 8 + (vp.height - 16) - h, 10, h);
  }
}

export function drawJointBars(canvas: HTMLCanvasElement, q: number[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.fillStyle = "#101418";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  const fr = jointBarFractions(q);
  const w = canvas.width / fr.length;
  const mid = canvas.height / 2;
  ctx.fillStyle = "#3a6ea5";
  fr.forEach((f, i) => {
    const h = f * mid;
    ctx.fillRect(i * w + 2, h >= 0 ? mid - h : mid, w - 4, Math.abs(h));
  });
  ctx.strokeStyle = "#555";
  ctx.beginPath();
  ctx.moveTo(0, mid);
  ctx.lineTo(canvas.width, mid);
  ctx.stroke();
}

export function drawThumbs(container: HTMLElement, s: ConsoleState): void {
  for (const [cid, t] of s.thumbs) {
    let canvas = container.querySelector<HTMLCanvasElement>(`canvas[data-cam="${cid}"]`);
    if (!canvas) {
      const label = document.createElement("div");
      label.className = "thumb";
      label.innerHTML = `<span>${cid}</span>`;
      canvas = document.createElement("canvas");
      canvas.dataset.cam = cid;
      label.appendChild(canvas);
      container.appendChild(label);
    }
    drawThumb(canvas, t);
  }
}
