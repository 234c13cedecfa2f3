import init, { starvationCurve, startupCurve, countDistribution } from "./pkg/fluidqoe_web.js";

const num = (id) => parseFloat(document.getElementById(id).value);

function source() {
  return [num("alpha"), num("beta"), num("lambda1"), num("lambda2"), num("mu")];
}

// xs, ys: arrays of equal length; bars draws a histogram instead of a line
function draw(canvas, xs, ys, { bars = false, xlabel = "", ylabel = "" } = {}) {
  const ctx = canvas.getContext("2d");
  const w = canvas.width, h = canvas.height, pad = 40;
  ctx.clearRect(0, 0, w, h);
  const x0 = Math.min(...xs), x1 = Math.max(...xs);
  const y1 = Math.max(1e-12, ...ys);
  const sx = (x) => pad + (x1 > x0 ? (x - x0) / (x1 - x0) : 0.5) * (w - 2 * pad);
  const sy = (y) => h - pad - (y / y1) * (h - 2 * pad);

  ctx.strokeStyle = "#888";
  ctx.beginPath();
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, h - pad);
  ctx.lineTo(w - pad, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#333";
  ctx.fillText(y1.toPrecision(3), 2, pad);
  ctx.fillText("0", pad - 12, h - pad);
  ctx.fillText(String(x0), pad, h - pad + 14);
  ctx.fillText(String(x1), w - pad - 20, h - pad + 14);
  ctx.fillText(xlabel, w / 2, h - 8);
  ctx.fillText(ylabel, 2, 14);

  ctx.strokeStyle = "#1f5fa8";
  ctx.fillStyle = "#1f5fa8";
  if (bars) {
    const bw = (w - 2 * pad) / xs.length * 0.7;
    xs.forEach((x, i) => ctx.fillRect(sx(x) - bw / 2, sy(ys[i]), bw, h - pad - sy(ys[i])));
  } else {
    ctx.beginPath();
    xs.forEach((x, i) => (i ? ctx.lineTo(sx(x), sy(ys[i])) : ctx.moveTo(sx(x), sy(ys[i]))));
    ctx.stroke();
  }
}

function guarded(errId, f) {
  return () => {
    const err = document.getElementById(errId);
    err.textContent = "";
    try {
      f();
    } catch (e) {
      err.textContent = e.message ?? String(e);
    }
  };
}

function linspace(a, b, n) {
  return Array.from({ length: n }, (_, i) => (n > 1 ? a + (b - a) * i / (n - 1) : a));
}

await init();

const plotStarvation = guarded("err1", () => {
  const z = num("z1"), n = 40;
  const xmax = z * 0.95;
  const ys = starvationCurve(...source(), z, 1, xmax, n);
  draw(document.getElementById("plot1"), linspace(1, xmax, n), Array.from(ys), { xlabel: "x (frames)", ylabel: "P_s" });
});

const plotStartup = guarded("err2", () => {
  const t = num("t2"), n = 80;
  const ys = startupCurve(...source(), num("x2"), t, n);
  draw(document.getElementById("plot2"), linspace(0, t, n), Array.from(ys), { xlabel: "t (s)", ylabel: "P(delay <= t)" });
});

const plotCounts = guarded("err3", () => {
  const j = Math.max(1, Math.round(num("j3")));
  const v = Array.from(countDistribution(...source(), num("x3"), num("z3"), j));
  const p = v.slice(0, j + 1);
  draw(document.getElementById("plot3"), p.map((_, i) => i), p, { bars: true, xlabel: "starvations", ylabel: "probability" });
  document.getElementById("err3").textContent = `mass beyond ${j}: ${v[j + 1].toExponential(2)}`;
});

document.getElementById("run1").onclick = plotStarvation;
document.getElementById("run2").onclick = plotStartup;
document.getElementById("run3").onclick = plotCounts;
plotStarvation();
plotStartup();
plotCounts();
