import init, { explore_mappings, planted_demo, scan_spans } from "./pkg/alertlab_web.js";

const $ = (id) => document.getElementById(id);
const fmt = (v) => (v === null || v === undefined ? "n/a" : v.toFixed(3));

function table(headers, rows) {
  const head = `<tr>${headers.map((h) => `<th>${h}</th>`).join("")}</tr>`;
  const body = rows.map(({ cells, cls }) =>
    `<tr class="${cls || ""}">${cells.map((c) => `<td>${c}</td>`).join("")}</tr>`).join("");
  return `<table>${head}${body}</table>`;
}

function guard(target, fn) {
  try {
    fn();
  } catch (e) {
    $(target).innerHTML = `<p class="err">${e.message || e}</p>`;
  }
}

function renderExplorer() {
  $("tval").textContent = $("threshold").value;
  guard("explorer", () => {
    const view = JSON.parse(explore_mappings($("counts").value, $("direction").value, Number($("threshold").value)));
    $("explorer").innerHTML = `<p>${view.selected} pair(s) kept</p>` + table(
      ["checker", "cwe", "count", "forward %", "backward %"],
      view.rows.map((r) => ({
        cls: r.selected ? "selected" : "",
        cells: [r.checker, r.cwe, r.count, r.forward_pct.toFixed(1), r.backward_pct.toFixed(1)],
      })),
    );
  });
}

function drawRoc(points) {
  const ctx = $("roc").getContext("2d");
  const s = $("roc").width;
  ctx.clearRect(0, 0, s, s);
  ctx.strokeStyle = "#bbb";
  ctx.beginPath();
  ctx.moveTo(0, s);
  ctx.lineTo(s, 0);
  ctx.stroke();
  ctx.strokeStyle = "#06c";
  ctx.beginPath();
  points.forEach((p, i) => (i ? ctx.lineTo : ctx.moveTo).call(ctx, p.fpr * s, s - p.tpr * s));
  ctx.stroke();
}

function runPlanted() {
  $("planted").textContent = "training...";
  setTimeout(() => guard("planted", () => {
    const view = JSON.parse(planted_demo(
      BigInt($("seed").value), Number($("testcases").value), Number($("strength").value),
      $("kind").value, $("shuffle").checked,
    ));
    $("planted").innerHTML =
      `<p>train ${view.n_train}, test ${view.n_test}, AUROC ${fmt(view.auroc)}, accuracy ${fmt(view.accuracy)}, ` +
      `planted feature rank ${view.planted_rank ?? "not used"}</p>` +
      table(["feature", "score"], view.importance.map(([f, s]) => ({ cells: [f, s.toFixed(3)] })));
    drawRoc(view.roc);
  }), 0);
}

function renderSpans() {
  const view = JSON.parse(scan_spans($("source").value, $("filepath").value));
  $("spans").innerHTML = table(
    ["function", "start", "end", "polarity", "cwe"],
    view.spans.map((s) => ({ cells: [s.function, s.start, s.end, s.polarity, s.cwe ?? ""] })),
  ) + view.warnings.map((w) => `<p class="err">${w}</p>`).join("");
}

await init();
["counts", "direction", "threshold"].forEach((id) => $(id).addEventListener("input", renderExplorer));
["source", "filepath"].forEach((id) => $(id).addEventListener("input", renderSpans));
$("train").addEventListener("click", runPlanted);
renderExplorer();
renderSpans();
