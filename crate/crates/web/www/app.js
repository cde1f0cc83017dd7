// Built with: wasm-bindgen --target web --out-dir crates/web/www/pkg <fewshot_web.wasm>
import init, { clean_probability_curve, manifold_demo, contrastive_loss_curve } from "./pkg/fewshot_web.js";

const PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"];
const $ = (id) => document.getElementById(id);

function call(fn, outId, ...args) {
  try {
    return JSON.parse(fn(...args));
  } catch (e) {
    const out = $(outId);
    out.textContent = String(e);
    out.classList.add("err");
    return null;
  }
}

// Axes with a linear map from data coordinates to the canvas.
function frame(canvas, xr, yr, xlabel, ylabel) {
  const ctx = canvas.getContext("2d");
  const pad = { l: 48, r: 12, t: 10, b: 34 };
  const w = canvas.width - pad.l - pad.r;
  const h = canvas.height - pad.t - pad.b;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const sx = (x) => pad.l + ((x - xr[0]) / (xr[1] - xr[0])) * w;
  const sy = (y) => pad.t + h - ((y - yr[0]) / (yr[1] - yr[0])) * h;
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad.l, pad.t, w, h);
  ctx.fillStyle = "#444";
  ctx.font = "11px system-ui";
  for (let i = 0; i <= 4; i++) {
    const x = xr[0] + ((xr[1] - xr[0]) * i) / 4;
    const y = yr[0] + ((yr[1] - yr[0]) * i) / 4;
    ctx.fillText(x.toFixed(2), sx(x) - 12, pad.t + h + 14);
    ctx.fillText(y.toFixed(2), 4, sy(y) + 4);
  }
  ctx.fillText(xlabel, pad.l + w / 2 - 20, canvas.height - 4);
  ctx.save();
  ctx.translate(10, pad.t + h / 2 + 20);
  ctx.rotate(-Math.PI / 2);
  ctx.fillText(ylabel, 0, 0);
  ctx.restore();
  return { ctx, sx, sy };
}

function polyline(ctx, pts, color, width = 2) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  pts.forEach(([x, y], i) => (i ? ctx.lineTo(x, y) : ctx.moveTo(x, y)));
  ctx.stroke();
  ctx.lineWidth = 1;
}

function runProb() {
  $("prob-out").classList.remove("err");
  const ways = Number($("prob-ways").value);
  const trials = Number($("prob-trials").value);
  const curve = call(clean_probability_curve, "prob-out", ways, 21, trials, 7);
  if (!curve) return;
  const { ctx, sx, sy } = frame($("prob-canvas"), [0, 1], [0, 1], "noise rate", "P(clean)");
  polyline(ctx, curve.map((p) => [sx(p.epsilon), sy(p.analytic)]), "#1f77b4");
  ctx.fillStyle = "#d62728";
  for (const p of curve) {
    ctx.beginPath();
    ctx.arc(sx(p.epsilon), sy(p.monte_carlo), 3, 0, 2 * Math.PI);
    ctx.fill();
  }
  const at = (e) => curve.find((p) => Math.abs(p.epsilon - e) < 1e-9);
  $("prob-out").textContent = [0.3, 0.6]
    .map((e) => `N=${ways}, noise ${e}: exact ${at(e).analytic.toFixed(4)}, simulated ${at(e).monte_carlo.toFixed(4)} ± ${at(e).stderr.toFixed(4)}`)
    .join("\n");
}

function runManifold() {
  $("man-out").classList.remove("err");
  const eps = Number($("man-eps").value);
  const v = Number($("man-v").value);
  const seed = Number($("man-seed").value);
  const demo = call(manifold_demo, "man-out", eps, seed, v);
  if (!demo) return;
  const xs = demo.points.map((p) => p.x);
  const ys = demo.points.map((p) => p.y);
  const margin = 1.5;
  const xr = [Math.min(...xs) - margin, Math.max(...xs) + margin];
  const yr = [Math.min(...ys) - margin, Math.max(...ys) + margin];
  const { ctx, sx, sy } = frame($("man-canvas"), xr, yr, "x1", "x2");

  for (const p of demo.points) {
    ctx.fillStyle = PALETTE[p.label % PALETTE.length];
    ctx.globalAlpha = 0.55;
    ctx.beginPath();
    ctx.arc(sx(p.x), sy(p.y), 4, 0, 2 * Math.PI);
    ctx.fill();
    ctx.globalAlpha = 1;
    if (p.label !== p.truth) {
      ctx.strokeStyle = "#d00";
      ctx.beginPath();
      ctx.arc(sx(p.x), sy(p.y), 6.5, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }
  demo.samples.forEach((s, k) => {
    ctx.setLineDash(s.clean ? [] : [5, 4]);
    s.views.forEach(([a, b], j) => {
      polyline(ctx, [[sx(a[0]), sy(a[1])], [sx(b[0]), sy(b[1])]], PALETTE[j % PALETTE.length], 2);
      ctx.fillStyle = "#000";
      ctx.fillText(String(k), sx(a[0]) + 4, sy(a[1]) - 4);
    });
  });
  ctx.setLineDash([]);
  const lines = demo.samples.map(
    (s, k) => `sample ${k}: true classes [${s.truths.join(", ")}] ${s.clean ? "clean" : "NOT clean"}`,
  );
  lines.push(
    `${demo.corrupted} of ${demo.points.length} labels corrupted; clean samples ${(100 * demo.clean_fraction).toFixed(0)}% ` +
      `(expected ${(100 * demo.analytic_clean).toFixed(1)}%)`,
  );
  $("man-out").textContent = lines.join("\n");
}

function runLoss() {
  $("loss-out").classList.remove("err");
  const tau = Number($("loss-tau").value);
  const sep = Number($("loss-sep").value);
  $("loss-tau-val").textContent = tau.toFixed(2);
  $("loss-sep-val").textContent = sep.toFixed(2);
  const curve = call(contrastive_loss_curve, "loss-out", tau, sep, 61);
  if (!curve) return;
  const losses = curve.map((p) => p.loss);
  const lo = Math.min(...losses);
  const hi = Math.max(...losses);
  const pad = (hi - lo) * 0.05 || 1;
  const { ctx, sx, sy } = frame($("loss-canvas"), [0, Math.PI], [lo - pad, hi + pad], "angle between positives (rad)", "loss");
  polyline(ctx, curve.map((p) => [sx(p.angle), sy(p.loss)]), "#2ca02c");
  $("loss-out").textContent = `aligned positives: ${curve[0].loss.toFixed(4)}   opposite positives: ${curve[curve.length - 1].loss.toFixed(4)}`;
}

await init();
$("prob-run").addEventListener("click", runProb);
$("man-run").addEventListener("click", runManifold);
$("man-eps").addEventListener("input", () => {
  $("man-eps-val").textContent = Number($("man-eps").value).toFixed(2);
  runManifold();
});
$("loss-tau").addEventListener("input", runLoss);
$("loss-sep").addEventListener("input", runLoss);
runProb();
runManifold();
runLoss();
