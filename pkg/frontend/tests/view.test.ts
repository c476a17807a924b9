import { describe, expect, it } from "vitest";

import { FrameMsg, SCHEMA } from "../src/protocol.js";
import { conceptRows, creditBars, creditPercents, gridCells } from "../src/view.js";

function frame(overrides: Partial<FrameMsg> = {}): FrameMsg {
  return {
    schema: SCHEMA,
    type: "frame",
    t: 1,
    seed: 0,
    mode: "paused",
    grid: null,
    q: [[0]],
    actions: [0],
    forced: {},
    concepts: [1, 0],
    reward: 0,
    episode_return: 0,
    done: false,
    p_hat: [0.9, 0.1, 0.6],
    p_used: [1.0, 0.1, 0.6],
    alpha: [0.5, 0.25, 0.25],
    q_hat: [1, 2, 3],
    q_tot: 1,
    ...overrides,
  };
}

describe("creditPercents", () => {
  it("always displays a total of exactly 100", () => {
    const cases = [
      [0.5, 0.25, 0.25],
      [1 / 3, 1 / 3, 1 / 3],
      [0.1234, 0.8766],
      Array.from({ length: 16 }, () => 1 / 16),
      [0.999999, 0.000001],
    ];
    for (const alpha of cases) {
      const pcts = creditPercents(alpha);
      const total = pcts.reduce((a, b) => a + b, 0);
      expect(Math.round(total * 10)).toBe(1000);
    }
  });

  it("renders a single concept as one full-width bar", () => {
    expect(creditPercents([1])).toEqual([100]);
    const bars = creditBars(frame({ alpha: [1], q_hat: [0.4] }));
    expect(bars).toHaveLength(1);
    expect(bars[0]?.pct).toBe(100);
  });

  it("is empty for the additive baseline", () => {
    expect(creditPercents([])).toEqual([]);
  });
});

describe("conceptRows", () => {
  it("marks forced gauges and pins the displayed value", () => {
    const rows = conceptRows(null, frame({ forced: { "0": 1 } }));
    expect(rows[0]?.forced).toBe(true);
    expect(rows[0]?.post).toBe(1.0);
    expect(rows[1]?.forced).toBe(false);
  });

  it("shows ground truth only for the supervised prefix", () => {
    const rows = conceptRows(null, frame());
    expect(rows.map((r) => r.truth)).toEqual([1, 0, null]);
  });

  it("names concepts from the hello message", () => {
    const hello = {
      schema: SCHEMA, type: "hello" as const, mixer: "cmq" as const,
      n_agents: 2, n_actions: 6, action_names: ["up"],
      concepts: 3, supervised: 2, concept_names: ["near", "far"],
    };
    const rows = conceptRows(hello, frame());
    expect(rows.map((r) => r.name)).toEqual(["near", "far", "concept 2"]);
  });
});

describe("gridCells", () => {
  it("labels agents with index and level, foods with level and liveness", () => {
    const cells = gridCells({
      width: 4, height: 4,
      agents: [{ x: 0, y: 0, level: 2 }],
      foods: [
        { x: 1, y: 1, level: 3, alive: true },
        { x: 2, y: 2, level: 4, alive: false },
      ],
    });
    expect(cells.find((c) => c.kind === "agent")?.label).toBe("A0·2");
    expect(cells.filter((c) => c.kind === "food").map((c) => c.dead)).toEqual([false, true]);
  });
});
