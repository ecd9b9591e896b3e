import init, { Studio } from "./pkg/gausslayer_web.js";

const $ = (id) => document.getElementById(id);

await init();
const studio = new Studio(1, 192);
const canvas = $("view");
const ctx = canvas.getContext("2d");
$("frame").max = studio.frameCount - 1;

function draw() {
  const frame = Number($("frame").value);
  const amount = Number($("amount").value);
  const yaw = Number($("yaw").value);
  const alpha = Number($("alpha").value);
  const mode = $("mode").value;
  $("alpha-out").textContent = alpha.toFixed(2);
  const t0 = performance.now();
  try {
    const px = $("op").value === "transfer"
      ? studio.transfer(frame, amount, yaw, alpha, mode)
      : studio.render(frame, amount, yaw, mode, $("resolve").checked);
    const n = studio.size;
    ctx.putImageData(new ImageData(new Uint8ClampedArray(px), n, n), 0, 0);
    const ms = (performance.now() - t0).toFixed(0);
    $("status").textContent = `${ms} ms\n${JSON.stringify(JSON.parse(studio.report), null, 1)}`;
  } catch (e) {
    $("status").textContent = `error: ${e.message ?? e}`;
  }
}

function refine() {
  const alpha = Number($("alpha").value);
  const iters = Number($("iters").value);
  $("table").innerHTML = "<tr><td>running...</td></tr>";
  setTimeout(() => {
    try {
      const r = JSON.parse(studio.sphereRefinement(alpha, iters));
      const rows = r.reports.map((x) =>
        `<tr><td>${x.iteration}</td><td>${x.violations}</td><td>${(100 * x.satisfied).toFixed(2)}%</td>` +
        `<td>${(1000 * x.max_penetration).toFixed(2)}</td><td>${(1000 * x.min_distance).toFixed(2)}</td></tr>`);
      $("table").innerHTML =
        `<tr><th>iteration</th><th>violations</th><th>satisfied</th><th>max pen. (mm)</th><th>min dist. (mm)</th></tr>` +
        rows.join("") + `<tr><td colspan="5">alpha ${alpha}, ${r.points} points</td></tr>`;
    } catch (e) {
      $("table").innerHTML = `<tr><td>error: ${e.message ?? e}</td></tr>`;
    }
  }, 0);
}

for (const id of ["op", "frame", "amount", "yaw", "alpha", "mode", "resolve"]) {
  $(id).addEventListener("input", draw);
}
$("run").addEventListener("click", refine);
draw();
