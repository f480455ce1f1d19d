import init, { tilePlan, stitchDemo, prDemo } from "./pkg/tilewise_wasm.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function fail(outId, e) {
  const out = $(outId);
  out.textContent = String(e && e.message ? e.message : e);
  out.classList.add("err");
}

function ok(outId, text) {
  const out = $(outId);
  out.textContent = text;
  out.classList.remove("err");
}

function fit(canvas, w, h) {
  const s = Math.min(canvas.width / w, canvas.height / h);
  const ctx = canvas.getContext("2d");
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.setTransform(s, 0, 0, s, 0, 0);
  return [ctx, s];
}

function strokeRect(ctx, r, color, width) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.strokeRect(r.x, r.y, r.w, r.h);
}

function drawPlan() {
  try {
    const plan = JSON.parse(tilePlan(num("plan-w"), num("plan-h"), num("plan-win"), num("plan-ov")));
    const [ctx, s] = fit($("plan-canvas"), plan.width, plan.height);
    ctx.fillStyle = "#e4e4dc";
    ctx.fillRect(0, 0, plan.width, plan.height);
    plan.tiles.forEach((t, i) => {
      ctx.fillStyle = `hsla(${(i * 47) % 360}, 70%, 50%, 0.12)`;
      ctx.fillRect(t.rect.x, t.rect.y, t.rect.w, t.rect.h);
      strokeRect(ctx, t.rect, "#335", 1 / s);
    });
    const names = plan.tiles.slice(0, 4).map((t) => t.name);
    if (plan.tiles.length > 4) names.push("...");
    ok("plan-out", `${plan.tiles.length} tiles, stride ${plan.stride} px\n${names.join("\n")}`);
  } catch (e) {
    fail("plan-out", e);
  }
}

function drawStitch() {
  try {
    const d = JSON.parse(stitchDemo(num("st-size"), 416, 0.15, num("st-cars"), BigInt(num("st-seed")), num("st-iou")));
    const [ctx, s] = fit($("st-canvas"), d.width, d.height);
    d.tiles.forEach((r) => strokeRect(ctx, r, "rgba(40,40,90,0.5)", 1 / s));
    ctx.fillStyle = "rgba(0,0,0,0.15)";
    d.truth.forEach((r) => ctx.fillRect(r.x, r.y, r.w, r.h));
    if ($("st-raw").checked) {
      d.raw.forEach((b) => strokeRect(ctx, b.rect, "rgba(220,120,0,0.8)", 3 / s));
    }
    d.merged.forEach((b) => strokeRect(ctx, b.rect, "#0a7", 1.5 / s));
    ok("st-out", `${d.truth.length} objects, ${d.raw.length} per-tile reports, ${d.merged.length} after merging`);
  } catch (e) {
    fail("st-out", e);
  }
}

function drawPr() {
  try {
    const d = JSON.parse(prDemo(BigInt(num("pr-seed")), num("pr-drop"), num("pr-fp"), num("pr-jit")));
    const canvas = $("pr-canvas");
    const [ctx] = fit(canvas, 1, 1);
    const W = canvas.width;
    ctx.setTransform(W * 0.9, 0, 0, -W * 0.9, W * 0.07, W * 0.95);
    ctx.strokeStyle = "#999";
    ctx.lineWidth = 1 / W;
    ctx.strokeRect(0, 0, 1, 1);
    ctx.strokeStyle = "#c33";
    ctx.lineWidth = 2.5 / W;
    ctx.beginPath();
    d.curve.forEach((p, i) => (i ? ctx.lineTo(p.recall, p.precision) : ctx.moveTo(p.recall, p.precision)));
    ctx.stroke();
    ctx.fillStyle = "#c33";
    d.curve.forEach((p) => ctx.fillRect(p.recall - 0.006, p.precision - 0.006, 0.012, 0.012));
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.fillStyle = "#444";
    ctx.fillText("recall", W * 0.48, W - 2);
    ctx.fillText("precision", 2, 12);
    ok(
      "pr-out",
      `${d.objects} cars, ${d.detections} detections, IoU >= ${d.iou_threshold}\n` +
        `AP = ${d.ap.toFixed(4)}, best F1 = ${d.best_f1.toFixed(4)} at ${d.best_threshold.toFixed(3)}`,
    );
  } catch (e) {
    fail("pr-out", e);
  }
}

await init();
for (const [section, draw] of [["plan", drawPlan], ["stitch", drawStitch], ["pr", drawPr]]) {
  $(section).querySelectorAll("input").forEach((el) => el.addEventListener("input", draw));
  draw();
}
