// DOM wiring for the composition studio. State lives in this module;
// rendering is re-done from scratch after every change (the payloads are
// small enough that diffing would be overkill).

import { ApiClient, ApiError, AttributeSchema, GenerateResponse } from "./api.js";
import { blockedToggles, composeCaption } from "./compose.js";
import { SessionHistory } from "./history.js";

const api = new ApiClient();
const history = new SessionHistory();

let schema: AttributeSchema | null = null;
const toggles = new Set<string>();
let freeText: string | null = null; // non-null once the operator edits the caption
let inFlight = false;
let queued = false;

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function currentCaption(): string {
  if (freeText !== null) return freeText;
  return schema ? composeCaption(schema, toggles) : "";
}

function setBanner(text: string, kind: "error" | "info" | "") {
  const banner = $("banner");
  banner.textContent = text;
  banner.className = kind ? `banner ${kind}` : "banner hidden";
}

function renderToggles() {
  if (!schema) return;
  const blocked = blockedToggles(schema, toggles);
  const box = $("toggles");
  box.innerHTML = "";
  for (const entry of schema.attributes) {
    const label = document.createElement("label");
    label.className = "toggle";
    const input = document.createElement("input");
    input.type = "checkbox";
    input.checked = toggles.has(entry.name);
    input.disabled = blocked.has(entry.name) && !toggles.has(entry.name);
    input.addEventListener("change", () => {
      if (input.checked) toggles.add(entry.name);
      else toggles.delete(entry.name);
      freeText = null; // toggling returns to composed mode
      syncCaption();
      renderToggles();
    });
    label.appendChild(input);
    label.appendChild(document.createTextNode(entry.name.replace(/_/g, " ")));
    if (input.disabled) label.classList.add("blocked");
    box.appendChild(label);
  }
}

function syncCaption() {
  ($("caption") as HTMLTextAreaElement).value = currentCaption();
}

function diffChips(requested: Record<string, boolean>,
                   recovered: Record<string, boolean>,
                   diff: Record<string, boolean>): HTMLElement {
  const row = document.createElement("div");
  row.className = "chips";
  for (const name of Object.keys(requested)) {
    if (!requested[name] && !recovered[name]) continue;
    const chip = document.createElement("span");
    chip.textContent = name.replace(/_/g, " ");
    chip.className = diff[name] ? "chip miss" : "chip match";
    chip.title = diff[name]
      ? `requested=${requested[name]} recovered=${recovered[name]}`
      : "requested and recovered agree";
    row.appendChild(chip);
  }
  return row;
}

function renderResult(caption: string, res: GenerateResponse) {
  const grid = $("results");
  grid.innerHTML = "";
  for (const sample of res.samples) {
    const card = document.createElement("div");
    card.className = "card";
    const img = document.createElement("img");
    img.src = `data:image/png;base64,${sample.png_base64}`;
    img.width = 128;
    img.height = 128;
    img.alt = caption;
    const recon = document.createElement("p");
    recon.className = "recon";
    recon.textContent = sample.reconstructed_caption;
    card.appendChild(img);
    card.appendChild(recon);
    card.appendChild(diffChips(res.requested_attributes,
                               sample.recovered_attributes,
                               sample.attribute_diff));
    grid.appendChild(card);
  }
  $("meta").textContent =
    `seed ${res.seed} · embedding norm ${res.embedding_norm.toFixed(2)} · ` +
    `model ${res.model_hash.slice(0, 12)}`;
}

function renderHistory() {
  const list = $("history");
  list.innerHTML = "";
  for (const entry of [...history.all()].reverse()) {
    const item = document.createElement("li");
    const replay = document.createElement("button");
    replay.textContent = "replay";
    replay.addEventListener("click", () => {
      freeText = entry.caption;
      ($("seed") as HTMLInputElement).value = String(entry.seed);
      ($("seed-lock") as HTMLInputElement).checked = true;
      syncCaption();
      void generate();
    });
    const text = document.createElement("span");
    text.textContent =
      `[seed ${entry.seed}] ${entry.caption.slice(0, 80)}` +
      (entry.caption.length > 80 ? "…" : "");
    item.appendChild(text);
    item.appendChild(replay);
    list.appendChild(item);
  }
}

async function generate(): Promise<void> {
  if (inFlight) {
    queued = true; // one in-flight request; latest intent wins
    return;
  }
  inFlight = true;
  ($("generate") as HTMLButtonElement).disabled = true;
  setBanner("", "");
  const caption = currentCaption();
  const lock = ($("seed-lock") as HTMLInputElement).checked;
  const seedField = ($("seed") as HTMLInputElement).value.trim();
  const samples = Number(($("samples") as HTMLInputElement).value) || 1;
  try {
    const res = await api.generate({
      caption,
      seed: lock && seedField !== "" ? Number(seedField) : null,
      samples,
    });
    ($("seed") as HTMLInputElement).value = String(res.seed);
    history.append(caption, samples, res);
    renderResult(caption, res);
    renderHistory();
  } catch (err) {
    if (err instanceof ApiError && err.status < 500) {
      const fields = err.detail.map((d) => `${d.field}: ${d.message}`).join("; ");
      setBanner(fields || err.message, "error");
    } else {
      setBanner(`service error, try again (${String(err)})`, "error");
    }
  } finally {
    inFlight = false;
    ($("generate") as HTMLButtonElement).disabled = false;
    if (queued) {
      queued = false;
      void generate();
    }
  }
}

async function init(): Promise<void> {
  ($("caption") as HTMLTextAreaElement).addEventListener("input", (e) => {
    freeText = (e.target as HTMLTextAreaElement).value;
  });
  $("generate").addEventListener("click", () => void generate());
  try {
    schema = await api.attributes();
    renderToggles();
    syncCaption();
  } catch {
    setBanner("could not load the attribute schema; toggles disabled", "error");
    ($("generate") as HTMLButtonElement).disabled = false;
  }
}

void init();
