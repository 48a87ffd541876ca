import init, { render_scene, pseudo_aerial, conditioning_plan, alpha_bar_curve, strategies } from "./pkg/aerial_web.js";

const SIZE = 64;
const $ = (id) => document.getElementById(id);
let uploaded = null;

function show(err) {
  $("error").textContent = err ? String(err) : "";
}

function paint(canvas, rgba, size) {
  canvas.width = size;
  canvas.height = size;
  const img = new ImageData(new Uint8ClampedArray(rgba), size, size);
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function scene(view) {
  return render_scene($("shape").value, $("color").value, +$("u").value, +$("scale").value, +$("floor").value, view, SIZE);
}

function updateScene() {
  try {
    const fill = +$("fill").value;
    if (uploaded) {
      paint($("front"), uploaded, SIZE);
      paint($("warped"), pseudo_aerial(uploaded, SIZE, SIZE, SIZE, fill), SIZE);
      $("aerial").getContext("2d").clearRect(0, 0, SIZE, SIZE);
    } else {
      const front = scene("front");
      paint($("front"), front, SIZE);
      paint($("warped"), pseudo_aerial(front, SIZE, SIZE, SIZE, fill), SIZE);
      paint($("aerial"), scene("aerial"), SIZE);
    }
    show(null);
  } catch (e) {
    show(e);
  }
}

function updatePlan() {
  $("alpha-val").textContent = $("alpha").value;
  try {
    const plan = conditioning_plan($("strategy").value, +$("steps").value, +$("alpha").value);
    $("plan").innerHTML = [...plan].map((c) => `<span class="e${c}">${c}</span>`).join("");
    show(null);
  } catch (e) {
    show(e);
  }
}

function updateSchedule() {
  const c = $("schedule");
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  try {
    const curve = alpha_bar_curve($("kind").value, +$("T").value, 1e-4, 0.02);
    ctx.strokeStyle = "#26c";
    ctx.beginPath();
    curve.forEach((v, i) => {
      const x = curve.length > 1 ? (i / (curve.length - 1)) * (c.width - 1) : 0;
      const y = (1 - v) * (c.height - 1);
      i ? ctx.lineTo(x, y) : ctx.moveTo(x, y);
    });
    ctx.stroke();
    show(null);
  } catch (e) {
    show(e);
  }
}

async function loadFile(file) {
  const bitmap = await createImageBitmap(file);
  const c = new OffscreenCanvas(SIZE, SIZE);
  const ctx = c.getContext("2d");
  ctx.drawImage(bitmap, 0, 0, SIZE, SIZE);
  uploaded = new Uint8Array(ctx.getImageData(0, 0, SIZE, SIZE).data.buffer);
  updateScene();
}

await init();
for (const name of strategies()) {
  $("strategy").add(new Option(name, name));
}
for (const id of ["shape", "color", "u", "scale", "floor", "fill"]) {
  $(id).addEventListener("input", () => {
    if (id !== "fill") uploaded = null;
    updateScene();
  });
}
for (const id of ["strategy", "steps", "alpha"]) $(id).addEventListener("input", updatePlan);
for (const id of ["kind", "T"]) $(id).addEventListener("input", updateSchedule);
$("file").addEventListener("change", (e) => e.target.files[0] && loadFile(e.target.files[0]));

updateScene();
updatePlan();
updateSchedule();
