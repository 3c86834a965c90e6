/** Browser entry point: socket wiring, input plumbing, render loop. */

import { InputSampler } from "./input.js";
import { parseServerMessage, type ClientMessage } from "./messages.js";
import {
  initialState,
  markDisconnected,
  reduce,
  showDisconnectedBanner,
} from "./state.js";
import { drawJointBars, drawScene, drawThumbs } from "./render.js";

const state = initialState();

const sceneCanvas = document.getElementById("scene") as HTMLCanvasElement;
const jointCanvas = document.getElementById("joints") as HTMLCanvasElement;
const thumbsDiv = document.getElementById("thumbs") as HTMLElement;
const banner = document.getElementById("banner") as HTMLElement;
const statusLine = document.getElementById("status") as HTMLElement;
const recordBtn = document.getElementById("record") as HTMLButtonElement;

const url = `ws://${location.host}/teleop`;
const ws = new WebSocket(url);

function send(msg: ClientMessage): void {
  if (ws.readyState === WebSocket.OPEN) ws.send(JSON.stringify(msg));
}

const sampler = new InputSampler(send);

ws.onopen = () => {
  send({ type: "hello", role: "operator" });
  sampler.start();
};
ws.onclose = () => {
  markDisconnected(state);
  sampler.stop();
};
ws.onmessage = (ev) => {
  const msg = parseServerMessage(String(ev.data));
  if (msg) reduce(state, msg, Date.now());
};

window.addEventListener("keydown", (e) => {
  if (e.repeat) return;
  sampler.keyDown(e.key);
});
window.addEventListener("keyup", (e) => sampler.keyUp(e.key));
window.addEventListener("blur", () => sampler.clear());

recordBtn.addEventListener("click", () => {
  const active = state.recordStatus?.active ?? state.state?.recording.active ?? false;
  send({ type: active ? "record_stop" : "record_start" });
});

function frame(): void {
  banner.style.display = showDisconnectedBanner(state, Date.now()) ? "block" : "none";
  if (state.welcome) {
    drawScene(sceneCanvas, state);
    if (state.state) drawJointBars(jointCanvas, state.state.q);
    drawThumbs(thumbsDiv, state);
    const rec = state.state?.recording;
    recordBtn.textContent = rec?.active
      ? `stop (${rec.episode_id}, ${rec.frameset_count} framesets)`
      : "start recording";
    statusLine.textContent =
      `${state.welcome.workcell} | ${state.stateRateHz} Hz | ` +
      `gripper ${state.state ? state.state.gripper.toFixed(2) : "-"}` +
      (state.lastError ? ` | error: ${state.lastError}` : "");
  }
  requestAnimationFrame(frame);
}
requestAnimationFrame(frame);
