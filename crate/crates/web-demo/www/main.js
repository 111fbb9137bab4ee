// Built by `wasm-bindgen --target web --out-dir www/pkg`.
import init, { Demo } from "./pkg/vfi_web_demo.js";

const SIZE = 144;
const RADIUS = 4;
const SIDE = 2 * RADIUS + 1;
const $ = (id) => document.getElementById(id);

let demo;
let picked = [SIZE / 2, SIZE / 2];

function blit(canvas, rgba, w, h) {
  canvas.width = w;
  canvas.height = h;
  canvas.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(rgba), w, h), 0, 0);
}

function drawCorrelation() {
  const [x, y] = picked;
  const costs = demo.correlation(x, y);
  let lo = Infinity, hi = -Infinity, best = 0;
  costs.forEach((v, i) => {
    lo = Math.min(lo, v);
    if (v > hi) { hi = v; best = i; }
  });
  const rgba = new Uint8Array(4 * SIDE * SIDE);
  costs.forEach((v, i) => {
    const g = Math.round((255 * (v - lo)) / (hi - lo || 1));
    rgba.set([g, g, g, 255], 4 * i);
  });
  rgba.set([255, 60, 0, 255], 4 * best);
  blit($("corr"), rgba, SIDE, SIDE);
  const [fx, fy] = demo.flow_at(x, y);
  const bx = (best % SIDE) - RADIUS, by = Math.floor(best / SIDE) - RADIUS;
  $("corrcap").textContent =
    `correlation at (${x}, ${y}): peak (${bx}, ${by}), flow (${fx.toFixed(2)}, ${fy.toFixed(2)})`;
}

function drawSplat() {
  const t = Number($("t").value);
  blit($("mid"), demo.splat(t, $("holes").checked), SIZE, SIZE);
}

function update() {
  for (const el of document.querySelectorAll("output")) el.textContent = $(el.htmlFor).value;
  demo.set_motion(Number($("dx").value), Number($("dy").value), Number($("spin").value));
  blit($("f0"), demo.frame0(), SIZE, SIZE);
  blit($("f1"), demo.frame1(), SIZE, SIZE);
  drawSplat();
  drawCorrelation();
  const [p, s] = demo.metrics();
  $("metrics").textContent = `frame average vs true middle frame: PSNR ${p.toFixed(2)} dB, SSIM ${s.toFixed(4)}`;
}

function newScene() {
  demo = new Demo(SIZE, SIZE, Number($("seed").value) >>> 0);
  update();
}

await init();
for (const id of ["dx", "dy", "spin"]) $(id).addEventListener("input", update);
$("t").addEventListener("input", () => {
  $("t").nextElementSibling.textContent = $("t").value;
  drawSplat();
});
$("holes").addEventListener("change", drawSplat);
$("seed").addEventListener("change", newScene);
$("f0").addEventListener("click", (e) => {
  const r = e.target.getBoundingClientRect();
  picked = [Math.floor(((e.clientX - r.left) / r.width) * SIZE), Math.floor(((e.clientY - r.top) / r.height) * SIZE)];
  drawCorrelation();
});
newScene();
