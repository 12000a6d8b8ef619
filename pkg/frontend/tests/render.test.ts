import { describe, expect, it } from "vitest";

import {
  escapeHtml,
  renderErrorBanner,
  renderPlanList,
  renderSessionHeader,
  renderStepGallery,
} from "../src/render";
import { SessionView, TracePayload, TraceStep } from "../src/types";

// Small deterministic PRNG so the 100 generated payloads are reproducible.
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const NASTY_STRINGS = [
  "", "plain", "<script>alert(1)</script>", "\"quoted\"", "'single'",
  "&amp;&lt;", "unicode é中文", "line\nbreak", "a".repeat(500),
  "</pre><img src=x onerror=alert(1)>",
];

function randomString(rand: () => number): string {
  return NASTY_STRINGS[Math.floor(rand() * NASTY_STRINGS.length)];
}

function randomNumber(rand: () => number): number {
  const choices = [0, 1, -1, 42, 1e9, -7, 0.5, Number.MAX_SAFE_INTEGER];
  return choices[Math.floor(rand() * choices.length)];
}

function randomStep(rand: () => number): TraceStep {
  const inputCount = Math.floor(rand() * 4);
  return {
    line: randomNumber(rand),
    op: randomString(rand),
    inputs: Array.from({ length: inputCount }, () => ({
      name: randomString(rand),
      tag: randomString(rand),
      digest: randomString(rand),
    })),
    output: { name: randomString(rand), tag: randomString(rand), digest: randomString(rand) },
    artifacts: Array.from({ length: Math.floor(rand() * 3) }, () => randomString(rand)),
    repeat_count: randomNumber(rand),
  };
}

function randomTrace(rand: () => number): TracePayload {
  return {
    steps: Array.from({ length: Math.floor(rand() * 8) }, () => randomStep(rand)),
    artifact_base: rand() < 0.5 ? "/artifacts/" : undefined,
  };
}

function randomSession(rand: () => number): SessionView {
  const planCount = Math.floor(rand() * 4);
  return {
    id: randomString(rand),
    instruction: randomString(rand),
    image_size: [randomNumber(rand), randomNumber(rand)],
    scene: Array.from({ length: Math.floor(rand() * 3) }, () => ({
      label: randomString(rand),
      centroid: [randomNumber(rand), randomNumber(rand)] as [number, number],
      area: randomNumber(rand),
    })),
    plans: Array.from({ length: planCount }, (_, i) => ({
      index: i,
      program: randomString(rand),
      provenance: randomString(rand),
    })),
    selected_plan: rand() < 0.5 ? null : Math.floor(rand() * 4),
    pc: rand() < 0.3 ? null : randomNumber(rand),
    total_steps: rand() < 0.3 ? null : randomNumber(rand),
    done: rand() < 0.3 ? null : rand() < 0.5,
  };
}

describe("escapeHtml", () => {
  it("neutralizes markup", () => {
    expect(escapeHtml("<script>")).toBe("&lt;script&gt;");
    expect(escapeHtml('a"b\'c&d')).toBe("a&quot;b&#39;c&amp;d");
    expect(escapeHtml(null)).toBe("");
  });
});

describe("renderPlanList", () => {
  const session = (plans: SessionView["plans"], selected: number | null): SessionView => ({
    id: "s", instruction: "x", image_size: [10, 10], scene: [],
    plans, selected_plan: selected, pc: null, total_steps: null, done: null,
  });

  it("renders one selectable card per plan", () => {
    const html = renderPlanList(session([
      { index: 0, program: "A = PG(IMAGE)\n", provenance: "template:change" },
      { index: 1, program: "B = PG(IMAGE)\n", provenance: "reordering:change:1" },
    ], null));
    expect(html.match(/class="plan-card"/g)).toHaveLength(2);
    expect(html.match(/data-action="select-plan"/g)).toHaveLength(2);
    expect(html).toContain("Plan 1");
    expect(html).toContain("Plan 2");
  });

  it("marks the selected plan", () => {
    const html = renderPlanList(session([
      { index: 0, program: "A = PG(IMAGE)\n", provenance: "template:change" },
    ], 0));
    expect(html).toContain("plan-card selected");
    expect(html).toContain(">Selected<");
  });

  it("escapes program text", () => {
    const html = renderPlanList(session([
      { index: 0, program: "<img src=x>", provenance: "llm" },
    ], null));
    expect(html).not.toContain("<img src=x>");
    expect(html).toContain("&lt;img src=x&gt;");
  });

  it("handles the empty plan list", () => {
    expect(renderPlanList(session([], null))).toContain("No plans");
  });
});

describe("renderErrorBanner", () => {
  it("shows code, message, and line", () => {
    const html = renderErrorBanner({ code: "USE_BEFORE_DEF", message: "boom", line: 3 });
    expect(html).toContain("USE_BEFORE_DEF");
    expect(html).toContain("(line 3)");
  });

  it("renders nothing for null", () => {
    expect(renderErrorBanner(null)).toBe("");
  });

  it("escapes server-provided text", () => {
    const html = renderErrorBanner({ code: "<b>", message: "<i>" });
    expect(html).toContain("&lt;b&gt;");
    expect(html).toContain("&lt;i&gt;");
  });
});

describe("renderStepGallery", () => {
  it("renders one panel per completed step with a repeat badge", () => {
    const trace: TracePayload = {
      steps: [
        { line: 0, op: "Segment", inputs: [], artifacts: ["abc"],
          output: { name: "OBJ0", tag: "region", digest: "d1" }, repeat_count: 0 },
        { line: 1, op: "Inpaint", inputs: [], artifacts: [],
          output: { name: "BG0", tag: "image", digest: "d2" }, repeat_count: 2 },
      ],
    };
    const html = renderStepGallery(trace, null);
    expect(html.match(/<section class="step/g)).toHaveLength(2);
    expect(html).toContain("repeated x2");
    expect(html).toContain('src="/artifacts/abc"');
  });

  it("highlights the current line", () => {
    const session = {
      id: "s", instruction: "x", image_size: [1, 1], scene: [], plans: [],
      selected_plan: 0, pc: 1, total_steps: 3, done: false,
    } as SessionView;
    const trace: TracePayload = {
      steps: [
        { line: 1, op: "Inpaint", inputs: [], artifacts: [],
          output: { name: "BG0", tag: "image", digest: "d" }, repeat_count: 0 },
      ],
    };
    const html = renderStepGallery(trace, session);
    expect(html).toContain("step current");
    expect(html).toContain("data-action=\"repeat\"");
    expect(html).toContain("data-action=\"step\"");
  });

  it("never throws on 100 generated trace payloads", () => {
    const rand = mulberry32(20240811);
    for (let i = 0; i < 100; i++) {
      const trace = randomTrace(rand);
      const session = rand() < 0.5 ? null : randomSession(rand);
      const html = renderStepGallery(trace, session);
      expect(typeof html).toBe("string");
      expect(html.length).toBeGreaterThan(0);
      // payload markup must never survive unescaped (the renderer's own
      // img tags all start with "<img loading=")
      expect(html).not.toContain("<script>");
      expect(html).not.toContain("<img src=x");
    }
  });

  it("renders header for arbitrary sessions without throwing", () => {
    const rand = mulberry32(7);
    for (let i = 0; i < 100; i++) {
      const html = renderSessionHeader(randomSession(rand));
      expect(typeof html).toBe("string");
    }
  });
});
