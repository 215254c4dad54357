// Build the wasm package into ./pkg first:
//   cargo build -p fishbone-web --release --target wasm32-unknown-unknown
//   wasm-bindgen --target web --out-dir crates/web/www/pkg target/wasm32-unknown-unknown/release/fishbone_web.wasm
import init, { Demo } from "./pkg/fishbone_web.js";

const $ = (id) => document.getElementById(id);
const canvas = $("canvas");
const ctx = canvas.getContext("2d");
const view = { yaw: 0.6, pitch: 0.35, zoom: 1 };
let demo = null;
let faces = null;
let blowing = false;

function project(x, y, z) {
  const cy = Math.cos(view.yaw), sy = Math.sin(view.yaw);
  const cp = Math.cos(view.pitch), sp = Math.sin(view.pitch);
  const x1 = cy * x + sy * z, z1 = -sy * x + cy * z;
  const y2 = cp * y - sp * z1, z2 = sp * y + cp * z1;
  const s = 0.8 * Math.min(canvas.width, canvas.height) * view.zoom;
  return [canvas.width / 2 + s * x1, canvas.height / 2 - s * y2, z2];
}

function polyline(pts, closed, style, width) {
  if (pts.length < 6) return;
  ctx.strokeStyle = style;
  ctx.lineWidth = width;
  ctx.beginPath();
  for (let i = 0; i < pts.length; i += 3) {
    const [u, v] = project(pts[i], pts[i + 1], pts[i + 2]);
    i === 0 ? ctx.moveTo(u, v) : ctx.lineTo(u, v);
  }
  if (closed) ctx.closePath();
  ctx.stroke();
}

function draw() {
  canvas.width = canvas.clientWidth * devicePixelRatio;
  canvas.height = canvas.clientHeight * devicePixelRatio;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!demo) return;
  const pos = demo.positions();
  const p = [];
  for (let i = 0; i < pos.length; i += 3) p.push(project(pos[i], pos[i + 1], pos[i + 2]));
  // back-to-front flat shading by depth
  const tris = [];
  for (let f = 0; f < faces.length; f += 3) {
    const a = p[faces[f]], b = p[faces[f + 1]], c = p[faces[f + 2]];
    tris.push([a, b, c, (a[2] + b[2] + c[2]) / 3]);
  }
  tris.sort((s, t) => s[3] - t[3]);
  for (const [a, b, c, z] of tris) {
    const shade = Math.round(170 + 60 * Math.tanh(z));
    ctx.fillStyle = `rgb(${shade},${shade},${Math.min(255, shade + 20)})`;
    ctx.strokeStyle = "rgba(60,60,80,0.25)";
    ctx.lineWidth = 0.5;
    ctx.beginPath();
    ctx.moveTo(a[0], a[1]);
    ctx.lineTo(b[0], b[1]);
    ctx.lineTo(c[0], c[1]);
    ctx.closePath();
    ctx.fill();
    ctx.stroke();
  }
  if ($("show-ribs").checked) {
    const sel = Number($("rib").value);
    for (let r = 0; r < demo.rib_count(); r++) {
      polyline(demo.rib(r), demo.rib_closed(r), r === sel ? "#d0402b" : "#2b7bd0", r === sel ? 3 : 1.5);
    }
    const keys = demo.spine();
    const parents = demo.spine_parents();
    ctx.strokeStyle = "#1a1a1a";
    ctx.lineWidth = 2;
    parents.forEach((q, k) => {
      if (q < 0) return;
      const [u0, v0] = project(keys[3 * q], keys[3 * q + 1], keys[3 * q + 2]);
      const [u1, v1] = project(keys[3 * k], keys[3 * k + 1], keys[3 * k + 2]);
      ctx.beginPath();
      ctx.moveTo(u0, v0);
      ctx.lineTo(u1, v1);
      ctx.stroke();
    });
  }
}

function status(text) {
  $("status").textContent = text;
}

function applyPose() {
  for (const id of ["rib", "scale", "bend", "twist", "wind"]) $(`${id}-v`).textContent = $(id).value;
  if (!demo) return;
  blowing = false;
  const t0 = performance.now();
  try {
    demo.set_pose(Number($("rib").value), Number($("scale").value), Number($("bend").value), Number($("twist").value));
    status(`${demo.vertex_count()} vertices, ${demo.rib_count()} ribs\nedit ${(performance.now() - t0).toFixed(1)} ms`);
  } catch (e) {
    status(String(e));
  }
  draw();
}

function load() {
  blowing = false;
  status("extracting…");
  setTimeout(() => {
    const t0 = performance.now();
    try {
      demo = new Demo($("shape").value);
    } catch (e) {
      status(String(e));
      return;
    }
    faces = demo.indices();
    $("rib").max = demo.rib_count() - 1;
    $("rib").value = Math.min(Number($("rib").value), demo.rib_count() - 1);
    status(`${demo.vertex_count()} vertices, ${demo.rib_count()} ribs\nextracted in ${(performance.now() - t0).toFixed(0)} ms`);
    applyPose();
  }, 10);
}

function tick() {
  if (!blowing || !demo) return;
  try {
    const t = demo.wind_step(Number($("wind").value), 1);
    status(`wind t = ${t.toFixed(2)} s`);
  } catch (e) {
    status(String(e));
    blowing = false;
  }
  draw();
  requestAnimationFrame(tick);
}

let drag = null;
canvas.addEventListener("pointerdown", (e) => (drag = [e.clientX, e.clientY]));
window.addEventListener("pointerup", () => (drag = null));
window.addEventListener("pointermove", (e) => {
  if (!drag) return;
  view.yaw += (e.clientX - drag[0]) * 0.01;
  view.pitch = Math.max(-1.5, Math.min(1.5, view.pitch + (e.clientY - drag[1]) * 0.01));
  drag = [e.clientX, e.clientY];
  draw();
});
canvas.addEventListener("wheel", (e) => {
  e.preventDefault();
  view.zoom *= Math.exp(-e.deltaY * 0.001);
  draw();
});
for (const id of ["rib", "scale", "bend", "twist"]) $(id).addEventListener("input", applyPose);
$("wind").addEventListener("input", () => ($("wind-v").textContent = $("wind").value));
$("show-ribs").addEventListener("change", draw);
$("shape").addEventListener("change", load);
$("blow").addEventListener("click", () => {
  blowing = !blowing;
  $("blow").textContent = blowing ? "Stop wind" : "Blow wind";
  requestAnimationFrame(tick);
});
$("reset").addEventListener("click", () => {
  for (const [id, v] of [["scale", 1], ["bend", 0], ["twist", 0]]) $(id).value = v;
  demo?.reset();
  applyPose();
});
window.addEventListener("resize", draw);

await init();
load();
