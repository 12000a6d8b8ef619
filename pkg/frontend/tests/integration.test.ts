// Live-engine integration: spawn the Python API server, then drive the same
// client the browser uses through the Fig-7-style loop: create a session with
// at least two candidate plans, pick Plan-2, step to completion, repeat one
// step, and confirm every mutation on the wire hit a documented endpoint.

import { ChildProcess, execFileSync, spawn } from "node:child_process";
import { mkdtempSync, readFileSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { EngineClient } from "../src/api";
import { renderPlanList, renderStepGallery } from "../src/render";
import { SessionView } from "../src/types";

const PORT = 8931;
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess;
let workDir: string;
let imageBase64: string;

async function waitForServer(timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${BASE}/sessions/warmup-probe`);
      if (response.status === 404) return; // server is up; session just doesn't exist
    } catch {
      // not listening yet
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error("engine server did not come up");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "visedit-ui-"));
  const scenePath = join(workDir, "scene.png");
  // build a two-dog scene with the engine's own scene helper
  execFileSync("python3", ["-c", [
    "import sys",
    "from visedit.scenes import make_scene",
    "from visedit.pngio import write_png",
    "img = make_scene(64, 48, [('dog', 'square', (16, 24), 5),",
    "                          ('dog', 'square', (48, 24), 5)])",
    "write_png(img, sys.argv[1])",
  ].join("\n"), scenePath]);
  imageBase64 = readFileSync(scenePath).toString("base64");

  server = spawn("python3", ["-m", "visedit", "serve", "--port", String(PORT)],
                 { stdio: "ignore" });
  await waitForServer();
}, 40_000);

afterAll(() => {
  server?.kill();
  rmSync(workDir, { recursive: true, force: true });
});

const DOCUMENTED_MUTATIONS = [
  /^\/sessions$/,
  /^\/sessions\/[0-9a-f]+\/plan\/\d+$/,
  /^\/sessions\/[0-9a-f]+\/step$/,
  /^\/sessions\/[0-9a-f]+\/repeat$/,
];

describe("steering loop against a live engine", () => {
  it("selects Plan-2, steps to completion, repeats once", async () => {
    const client = new EngineClient(BASE);

    // a change instruction on a two-object scene yields alternate orderings
    let session: SessionView = await client.createSession(
      imageBase64, "change the left dog to a sheep", 0);
    expect(session.plans.length).toBeGreaterThanOrEqual(2);
    expect(renderPlanList(session)).toContain("Plan 2");

    // choose Plan-2 (index 1): the alternate statement ordering
    session = await client.selectPlan(session.id, 1);
    expect(session.selected_plan).toBe(1);
    expect(session.pc).toBe(0);

    const total = session.total_steps ?? 0;
    expect(total).toBeGreaterThan(0);
    for (let i = 0; i < total; i++) {
      const step = await client.step(session.id);
      expect(step.pc).toBe(i + 1);
      expect(step.trace.output.digest).toMatch(/^[0-9a-f]{16}$/);
    }

    // one repeat of the final step: trace entry replaced, counter bumped
    const repeated = await client.repeat(session.id);
    expect(repeated.trace.repeat_count).toBe(1);
    expect(repeated.pc).toBe(total);

    const trace = await client.trace(session.id);
    expect(trace.steps).toHaveLength(total);
    expect(trace.steps[total - 1].repeat_count).toBe(1);

    // gallery renders the real trace and resolves artifact urls
    session = await client.getSession(session.id);
    const html = renderStepGallery(trace, session, client.artifactUrl(""));
    expect(html.match(/<section class="step/g)).toHaveLength(total);
    const artifactUrl = html.match(/src="([^"]+)"/)?.[1];
    expect(artifactUrl).toBeTruthy();
    const artifact = await fetch(artifactUrl!);
    expect(artifact.status).toBe(200);
    expect(artifact.headers.get("content-type")).toBe("image/png");

    // every mutation the client performed was a documented endpoint
    const mutations = client.wireLog.filter((record) => record.method !== "GET");
    expect(mutations.length).toBeGreaterThanOrEqual(3 + total);
    for (const record of mutations) {
      expect(
        DOCUMENTED_MUTATIONS.some((pattern) => pattern.test(record.path)),
        `undocumented mutation: ${record.method} ${record.path}`,
      ).toBe(true);
    }
  }, 60_000);

  it("surfaces engine error codes verbatim", async () => {
    const client = new EngineClient(BASE);
    await expect(client.createSession(imageBase64, "frobnicate the quux"))
      .rejects.toMatchObject({ body: { code: "NO_TEMPLATE_MATCH" } });
    await expect(client.getSession("does-not-exist"))
      .rejects.toMatchObject({ status: 404, body: { code: "NOT_FOUND" } });
  }, 30_000);

  it("plan re-selection clears the gallery state", async () => {
    const client = new EngineClient(BASE);
    let session = await client.createSession(
      imageBase64, "change the right dog to a sheep", 1);
    session = await client.selectPlan(session.id, 0);
    await client.step(session.id);
    await client.step(session.id);
    session = await client.selectPlan(session.id, 1);
    expect(session.pc).toBe(0);
    const trace = await client.trace(session.id);
    expect(trace.steps).toHaveLength(0);
    expect(renderStepGallery(trace, session)).toContain("No steps executed yet");
  }, 60_000);
});
