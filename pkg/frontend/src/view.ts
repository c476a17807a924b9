/**
 * Pure view-model builders. These only reshape bridge data for display;
 * all numbers originate from frames.
 */

import { FrameMsg, GridSnapshot, HelloMsg } from "./protocol.js";
import { TimelinePoint } from "./state.js";

/**
 * One-decimal percentages for the credit bars, largest-remainder rounded
 * so the displayed values sum to exactly 100.0. Empty for the additive
 * baseline (no credits to show).
 */
export function creditPercents(alpha: number[]): number[] {
  if (alpha.length === 0) return [];
  const total = alpha.reduce((a, b) => a + b, 0);
  if (total <= 0) return alpha.map(() => 0);
  const shares = alpha.map((a) => (a / total) * 1000);
  const tenths = shares.map(Math.floor);
  let leftover = 1000 - tenths.reduce((a, b) => a + b, 0);
  const order = shares
    .map((s, k) => ({ k, frac: s - Math.floor(s) }))
    .sort((a, b) => b.frac - a.frac || a.k - b.k);
  for (let i = 0; leftover > 0; i++, leftover--) {
    const slot = order[i % order.length];
    if (slot) tenths[slot.k] = (tenths[slot.k] ?? 0) + 1;
  }
  return tenths.map((t) => t / 10);
}

export interface ConceptRow {
  k: number;
  name: string;
  pre: number;
  post: number;
  forced: boolean;
  /** Ground-truth label, null beyond the supervised prefix. */
  truth: number | null;
}

export function conceptRows(hello: HelloMsg | null, frame: FrameMsg): ConceptRow[] {
  return frame.p_hat.map((pre, k) => ({
    k,
    name: hello?.concept_names[k] ?? `concept ${k}`,
    pre,
    post: frame.p_used[k] ?? pre,
    forced: String(k) in frame.forced,
    truth: k < frame.concepts.length ? frame.concepts[k] ?? null : null,
  }));
}

export interface CreditBar {
  k: number;
  pct: number;
  qHat: number;
}

export function creditBars(frame: FrameMsg): CreditBar[] {
  const pcts = creditPercents(frame.alpha);
  return pcts.map((pct, k) => ({ k, pct, qHat: frame.q_hat[k] ?? 0 }));
}

export interface AgentMove {
  agent: number;
  action: string;
  q: number[];
}

export function agentMoves(hello: HelloMsg | null, frame: FrameMsg): AgentMove[] {
  return frame.actions.map((a, i) => ({
    agent: i,
    action: hello?.action_names[a] ?? String(a),
    q: frame.q[i] ?? [],
  }));
}

export interface GridCell {
  x: number;
  y: number;
  kind: "agent" | "food";
  label: string;
  dead: boolean;
}

export function gridCells(grid: GridSnapshot): GridCell[] {
  const cells: GridCell[] = grid.foods.map((f) => ({
    x: f.x,
    y: f.y,
    kind: "food",
    label: `F${f.level}`,
    dead: !f.alive,
  }));
  grid.agents.forEach((a, i) => {
    cells.push({ x: a.x, y: a.y, kind: "agent", label: `A${i}·${a.level}`, dead: false });
  });
  return cells;
}

export interface TimelineSeries {
  t: number[];
  qTot: number[];
  episodeReturn: number[];
}

export function timelineSeries(points: TimelinePoint[]): TimelineSeries {
  return {
    t: points.map((p) => p.t),
    qTot: points.map((p) => p.qTot),
    episodeReturn: points.map((p) => p.episodeReturn),
  };
}
