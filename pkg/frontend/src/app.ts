// DOM bootstrap: wires the rendered HTML to the engine client.  This is the
// only module that touches the document; rendering itself is pure (render.ts)
// and every server interaction goes through EngineClient (api.ts).

import { EngineClient } from "./api";
import {
  renderErrorBanner,
  renderPlanList,
  renderSessionHeader,
  renderStepGallery,
} from "./render";
import { ApiError, EngineError, SessionView, TracePayload } from "./types";

const ENGINE_URL = new URLSearchParams(location.search).get("engine")
  ?? "http://127.0.0.1:8008";

const client = new EngineClient(ENGINE_URL);

let session: SessionView | null = null;
let lastError: ApiError | null = null;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node;
}

async function refresh(trace?: TracePayload): Promise<void> {
  el("banner").innerHTML = renderErrorBanner(lastError);
  if (!session) return;
  el("header").innerHTML = renderSessionHeader(session);
  el("plans").innerHTML = renderPlanList(session);
  if (session.selected_plan !== null) {
    const payload = trace ?? (await guard(() => client.trace(session!.id)));
    if (payload) {
      el("gallery").innerHTML = renderStepGallery(
        payload, session, client.artifactUrl(""));
    }
  } else {
    el("gallery").innerHTML = "";
  }
  // keep the session id in the URL so a tab refresh resumes the session
  history.replaceState(null, "", `#${session.id}`);
}

async function guard<T>(action: () => Promise<T>): Promise<T | null> {
  try {
    const result = await action();
    lastError = null;
    return result;
  } catch (error) {
    lastError = error instanceof EngineError
      ? error.body
      : { code: "CLIENT_ERROR", message: String(error) };
    el("banner").innerHTML = renderErrorBanner(lastError);
    return null;
  }
}

async function createSession(): Promise<void> {
  const files = (el("image") as HTMLInputElement).files;
  const instruction = (el("instruction") as HTMLInputElement).value;
  if (!files || files.length === 0 || !instruction) {
    lastError = { code: "CLIENT_ERROR", message: "pick an image and type an instruction" };
    await refresh();
    return;
  }
  const bytes = new Uint8Array(await files[0].arrayBuffer());
  let binary = "";
  bytes.forEach((b) => { binary += String.fromCharCode(b); });
  const created = await guard(() => client.createSession(btoa(binary), instruction));
  if (created) {
    session = created;
    await refresh({ steps: [] });
  }
}

async function onAction(action: string, index?: number): Promise<void> {
  if (!session) return;
  const id = session.id;
  if (action === "select-plan" && index !== undefined) {
    const updated = await guard(() => client.selectPlan(id, index));
    if (updated) session = updated;
    await refresh({ steps: [] });
  } else if (action === "step") {
    const response = await guard(() => client.step(id));
    if (response) session = await guard(() => client.getSession(id)) ?? session;
    await refresh();
  } else if (action === "repeat") {
    const response = await guard(() => client.repeat(id));
    if (response) session = await guard(() => client.getSession(id)) ?? session;
    await refresh();
  }
}

export function boot(): void {
  el("create").addEventListener("click", () => void createSession());
  document.body.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const action = target.dataset?.action;
    if (!action) return;
    const index = target.dataset.index !== undefined
      ? Number(target.dataset.index) : undefined;
    void onAction(action, index);
  });
}

if (typeof document !== "undefined" && document.getElementById("create")) {
  boot();
}
