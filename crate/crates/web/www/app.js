import init, { pbc_correct, ema_trajectory, frontdoor_trial, frontdoor_suite, attention_purity } from "./pkg/pemv_web.js";

await init();

const $ = (id) => document.getElementById(id);
const fmt = (v) => v.toFixed(4);

// prototype correction

const points = { a: [-1.0, 0.5], same: [1.5, 1.5], other: [-2.0, -1.5] };
const colors = { a: "#1f5fbf", same: "#1a8a3a", other: "#c0392b" };
const canvas = $("pbc");
const ctx = canvas.getContext("2d");
const scale = 60;
const toPx = ([x, y]) => [canvas.width / 2 + x * scale, canvas.height / 2 - y * scale];
const fromPx = (px, py) => [(px - canvas.width / 2) / scale, (canvas.height / 2 - py) / scale];
let dragging = null;

function dot(p, color, r = 6) {
  const [x, y] = toPx(p);
  ctx.fillStyle = color;
  ctx.beginPath();
  ctx.arc(x, y, r, 0, 2 * Math.PI);
  ctx.fill();
}

function line(p, q, color, dash = []) {
  ctx.strokeStyle = color;
  ctx.setLineDash(dash);
  ctx.beginPath();
  ctx.moveTo(...toPx(p));
  ctx.lineTo(...toPx(q));
  ctx.stroke();
  ctx.setLineDash([]);
}

function drawPbc() {
  const ga = +$("ga").value, gc = +$("gc").value, m = +$("m").value;
  $("ga-v").textContent = ga.toFixed(2);
  $("gc-v").textContent = gc.toFixed(2);
  $("m-v").textContent = m.toFixed(2);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  line([-5, 0], [5, 0], "#ddd");
  line([0, -4], [0, 4], "#ddd");
  const hat = Array.from(pbc_correct(points.a, points.same, points.other, ga, gc));
  const traj = Array.from(ema_trajectory(points.same, points.a, m, 30));
  for (let i = 2; i < traj.length; i += 2) {
    line([traj[i - 2], traj[i - 1]], [traj[i], traj[i + 1]], "#1a8a3a", [3, 3]);
  }
  line(points.a, hat, "#000");
  for (const k of Object.keys(points)) dot(points[k], colors[k]);
  dot(hat, "#000", 5);
  const jac = 1 - ga + gc;
  $("pbc-out").textContent =
    `A = (${points.a.map(fmt)})  corrected = (${hat.map(fmt)})  dÂ/dA = ${jac.toFixed(2)} I`;
}

canvas.addEventListener("mousedown", (e) => {
  const p = fromPx(e.offsetX, e.offsetY);
  dragging = Object.keys(points).find((k) => Math.hypot(points[k][0] - p[0], points[k][1] - p[1]) < 0.2) ?? null;
});
canvas.addEventListener("mousemove", (e) => {
  if (!dragging) return;
  points[dragging] = fromPx(e.offsetX, e.offsetY);
  drawPbc();
});
window.addEventListener("mouseup", () => (dragging = null));
for (const id of ["ga", "gc", "m"]) $(id).addEventListener("input", drawPbc);
drawPbc();

// front-door explorer

function showTrial() {
  const view = JSON.parse(frontdoor_trial(+$("fd-seed").value, +$("fd-trial").value));
  const [nu, nx, na, ny] = view.sizes;
  let html = `<p>|U| = ${nu}, |X| = ${nx}, |A| = ${na}, |Y| = ${ny}</p><table><tr><th>x</th><th>y</th>` +
    "<th>p(y | x)</th><th>p(y | do(x))</th><th>front-door</th><th>|gap|</th></tr>";
  for (const row of view.rows) {
    for (let y = 0; y < ny; y++) {
      const obs = row.observational ? row.observational[y] : NaN;
      const truth = row.interventional[y];
      html += `<tr><td>${row.x}</td><td>${y}</td><td>${fmt(obs)}</td><td>${fmt(truth)}</td>` +
        `<td>${fmt(row.frontdoor[y])}</td><td>${fmt(Math.abs(obs - truth))}</td></tr>`;
    }
  }
  $("fd-out").innerHTML = html + "</table>";
}

$("fd-seed").addEventListener("change", showTrial);
$("fd-trial").addEventListener("change", showTrial);
$("fd-next").addEventListener("click", () => {
  $("fd-trial").value = +$("fd-trial").value + 1;
  showTrial();
});
$("fd-suite").addEventListener("click", () => {
  $("fd-suite-out").textContent = frontdoor_suite(1000, +$("fd-seed").value);
});
showTrial();

// attention

const POSITIONS = 16;

function randomScores() {
  const rows = [];
  for (let k = 0; k < 3; k++) {
    rows.push(Array.from({ length: POSITIONS }, () => (Math.random() * 6 - 3).toFixed(1)).join(" "));
  }
  $("att-in").value = rows.join("\n");
}

function heatmap(weights) {
  const c = document.createElement("canvas");
  c.width = c.height = 120;
  const g = c.getContext("2d");
  const max = Math.max(...weights);
  weights.forEach((w, i) => {
    const v = Math.round(255 * (1 - w / max));
    g.fillStyle = `rgb(${v},${v},255)`;
    g.fillRect((i % 4) * 30, Math.floor(i / 4) * 30, 30, 30);
  });
  return c;
}

function runAttention() {
  const rows = $("att-in").value.trim().split("\n").map((r) => r.trim().split(/[\s,]+/).map(Number));
  const views = rows.length;
  try {
    const out = JSON.parse(attention_purity(new Float64Array(rows.flat()), views, POSITIONS));
    const maps = $("att-maps");
    maps.replaceChildren();
    const sums = [];
    for (let k = 0; k < views; k++) {
      const w = out.weights.slice(k * POSITIONS, (k + 1) * POSITIONS);
      sums.push(w.reduce((a, b) => a + b, 0));
      maps.appendChild(heatmap(w));
    }
    $("att-out").textContent = `purity ${fmt(out.purity)}; row sums ${sums.map((s) => s.toFixed(6)).join(", ")}`;
  } catch (e) {
    $("att-out").textContent = String(e);
  }
}

$("att-run").addEventListener("click", runAttention);
$("att-rand").addEventListener("click", () => {
  randomScores();
  runAttention();
});
randomScores();
runAttention();
