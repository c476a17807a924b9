/**
 * DOM painting. No model math happens here; everything comes from the
 * snapshot and the pure view-model builders.
 */

import { GridSnapshot } from "./protocol.js";
import { Snapshot } from "./state.js";
import {
  agentMoves,
  conceptRows,
  creditBars,
  gridCells,
  timelineSeries,
} from "./view.js";

function el<T extends HTMLElement>(doc: Document, id: string): T {
  const node = doc.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function fmt(x: number, digits = 3): string {
  return x.toFixed(digits);
}

export function render(doc: Document, snap: Snapshot): void {
  const banner = el(doc, "banner");
  if (snap.banner) {
    banner.textContent = `incompatible session: ${snap.banner}`;
    banner.classList.remove("hidden");
    el(doc, "panels").classList.add("hidden");
    return;
  }
  banner.classList.add("hidden");
  el(doc, "panels").classList.remove("hidden");

  el(doc, "conn").textContent = snap.connected ? "connected" : "disconnected";
  el(doc, "conn").className = snap.connected ? "ok" : "bad";
  el(doc, "latency").textContent =
    snap.lastLatencyMs === null ? "" : `last reply ${snap.lastLatencyMs.toFixed(0)} ms`;
  el(doc, "errors").textContent = snap.lastError ?? "";

  const hello = snap.hello;
  if (hello) {
    el(doc, "session-meta").textContent =
      `${hello.mixer} · ${hello.n_agents} agents · ${hello.concepts} concepts`;
  }
  const frame = snap.frame;
  if (!frame) return;

  el(doc, "step-meta").textContent =
    `seed ${frame.seed} · t=${frame.t} · ${snap.mode}` +
    `${frame.done ? " · done" : ""} · return ${fmt(frame.episode_return)}`;

  renderGrid(doc, frame.grid);
  renderActions(doc, snap);
  renderConcepts(doc, snap);
  renderCredits(doc, snap);
  el(doc, "qtot").textContent =
    frame.p_hat.length > 0 ? `Q_tot ${fmt(frame.q_tot)}` : `sum of utilities ${fmt(frame.q_tot)}`;
  renderTimeline(doc, snap);
}

function renderGrid(doc: Document, grid: GridSnapshot | null): void {
  const host = el(doc, "grid");
  host.innerHTML = "";
  if (!grid) {
    host.textContent = "no grid for this environment";
    return;
  }
  host.style.gridTemplateColumns = `repeat(${grid.width}, 2.2em)`;
  const byCell = new Map<string, { label: string; cls: string }>();
  for (const c of gridCells(grid)) {
    byCell.set(`${c.x},${c.y}`, {
      label: c.label,
      cls: c.kind + (c.dead ? " dead" : ""),
    });
  }
  for (let y = 0; y < grid.height; y++) {
    for (let x = 0; x < grid.width; x++) {
      const cell = doc.createElement("div");
      const item = byCell.get(`${x},${y}`);
      cell.className = "cell " + (item?.cls ?? "");
      cell.textContent = item?.label ?? "";
      host.appendChild(cell);
    }
  }
}

function renderActions(doc: Document, snap: Snapshot): void {
  const host = el(doc, "actions");
  host.innerHTML = "";
  if (!snap.frame) return;
  for (const move of agentMoves(snap.hello, snap.frame)) {
    const row = doc.createElement("div");
    row.className = "action-row";
    row.textContent =
      `agent ${move.agent}: ${move.action}  [${move.q.map((v) => fmt(v, 2)).join(", ")}]`;
    host.appendChild(row);
  }
}

function renderConcepts(doc: Document, snap: Snapshot): void {
  const host = el(doc, "concepts");
  host.innerHTML = "";
  if (!snap.frame) return;
  if (snap.frame.p_hat.length === 0) {
    host.textContent = "additive baseline: no concept bottleneck";
    return;
  }
  for (const row of conceptRows(snap.hello, snap.frame)) {
    const div = doc.createElement("div");
    div.className = "gauge" + (row.forced ? " forced" : "");
    div.dataset.k = String(row.k);
    const badge = row.forced ? ` <span class="badge">forced</span>` : "";
    const truth =
      row.truth === null ? "" : ` <span class="truth">c=${row.truth.toFixed(0)}</span>`;
    div.innerHTML =
      `<span class="name">${row.name}</span>` +
      `<span class="pre">p&#770; ${fmt(row.pre)}</span>` +
      `<span class="post">used ${fmt(row.post)}</span>${truth}${badge}`;
    const bar = doc.createElement("div");
    bar.className = "gauge-bar";
    bar.style.width = `${(row.post * 100).toFixed(1)}%`;
    div.appendChild(bar);
    host.appendChild(div);
  }
}

function renderCredits(doc: Document, snap: Snapshot): void {
  const host = el(doc, "credits");
  host.innerHTML = "";
  if (!snap.frame) return;
  for (const bar of creditBars(snap.frame)) {
    const row = doc.createElement("div");
    row.className = "credit-row";
    const fill = doc.createElement("div");
    fill.className = "credit-fill";
    fill.style.width = `${bar.pct}%`;
    fill.textContent = `k=${bar.k} ${bar.pct.toFixed(1)}% (Q̂ ${fmt(bar.qHat, 2)})`;
    row.appendChild(fill);
    host.appendChild(row);
  }
}

function renderTimeline(doc: Document, snap: Snapshot): void {
  const canvas = el<HTMLCanvasElement>(doc, "timeline");
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const series = timelineSeries(snap.timeline);
  el(doc, "timeline-meta").textContent = `${series.t.length} steps`;
  if (series.t.length === 0) return;
  const all = [...series.qTot, ...series.episodeReturn];
  const lo = Math.min(...all, 0);
  const hi = Math.max(...all, 1);
  const x = (i: number) =>
    series.t.length === 1 ? canvas.width / 2 : (i / (series.t.length - 1)) * canvas.width;
  const y = (v: number) => canvas.height - ((v - lo) / (hi - lo)) * (canvas.height - 4) - 2;
  const trace = (values: number[], style: string) => {
    ctx.strokeStyle = style;
    ctx.beginPath();
    values.forEach((v, i) => (i === 0 ? ctx.moveTo(x(i), y(v)) : ctx.lineTo(x(i), y(v))));
    ctx.stroke();
  };
  trace(series.qTot, "#8ab4f8");
  trace(series.episodeReturn, "#81c995");
}
