import init, { render_prompt, validate, rank } from "./pkg/seedforge_web.js";

const $ = (id) => document.getElementById(id);
const seed = () => $("seed").value;
const mode = () => $("mode").value;

function guarded(fn) {
  return () => {
    $("error").textContent = "";
    try { fn(); } catch (e) { $("error").textContent = String(e); }
  };
}

function row(cells, cls) {
  const tr = document.createElement("tr");
  if (cls) tr.className = cls;
  for (const c of cells) {
    const td = document.createElement("td");
    if (c instanceof Node) td.appendChild(c); else td.textContent = c;
    tr.appendChild(td);
  }
  return tr;
}

function renderPrompt() {
  const out = JSON.parse(render_prompt(seed(), mode(), Number($("batch").value)));
  $("instruction").textContent = out.instruction;
  $("format").textContent = out.format_prompt;
}

function runValidation() {
  const out = JSON.parse(validate(seed(), mode(), $("raw").value));
  const table = $("decisions");
  table.replaceChildren(row(["#", "decision", "question / fragment"]));
  for (const d of out.decisions) {
    table.appendChild(row(
      [d.index, d.accepted ? "accept" : d.reason, d.question ?? d.fragment],
      d.accepted ? "accept" : "reject",
    ));
  }
}

function runRanking() {
  const seedQuestion = JSON.parse(seed()).question;
  const candidates = $("candidates").value.split("\n");
  const out = JSON.parse(rank(JSON.stringify({ seed_question: seedQuestion, candidates })));
  const table = $("ranking");
  table.replaceChildren(row(["candidate", "cosine", "", "pick"]));
  out.similarities.forEach((s, i) => {
    const bar = document.createElement("span");
    bar.className = "bar";
    bar.style.width = `${Math.max(0, (s + 1) / 2) * 12}rem`;
    const picks = [];
    if (i === out.contrastive) picks.push("contrastive");
    if (i === out.similar) picks.push("similar");
    table.appendChild(row([candidates.filter((c) => c.trim())[i], s.toFixed(4), bar, picks.join(", ")]));
  });
}

await init();
$("render").onclick = guarded(renderPrompt);
$("validate").onclick = guarded(runValidation);
$("rank").onclick = guarded(runRanking);
guarded(renderPrompt)();
