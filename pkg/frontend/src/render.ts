// Pure HTML-string renderers.  The server is the single source of truth:
// nothing here recomputes engine results, and rendering is total over any
// schema-shaped payload (odd values degrade to placeholders, never throws).

import { ApiError, SessionView, TracePayload, TraceStep } from "./types";

export function escapeHtml(value: unknown): string {
  return String(value ?? "")
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function asArray<T>(value: unknown): T[] {
  return Array.isArray(value) ? (value as T[]) : [];
}

export function renderErrorBanner(error: ApiError | null): string {
  if (!error) return "";
  const line = typeof error.line === "number" ? ` (line ${error.line})` : "";
  return `<div class="banner error" role="alert">` +
    `<strong>${escapeHtml(error.code)}</strong>${line}: ${escapeHtml(error.message)}</div>`;
}

export function renderPlanList(session: SessionView): string {
  const plans = asArray<SessionView["plans"][number]>(session.plans);
  if (plans.length === 0) {
    return `<p class="empty">No plans were produced for this instruction.</p>`;
  }
  const cards = plans.map((plan, i) => {
    const index = typeof plan?.index === "number" ? plan.index : i;
    const selected = session.selected_plan === index;
    return `<article class="plan-card${selected ? " selected" : ""}" data-index="${index}">` +
      `<header>Plan ${index + 1}` +
      ` <span class="provenance">${escapeHtml(plan?.provenance)}</span></header>` +
      `<pre>${escapeHtml(plan?.program)}</pre>` +
      `<button data-action="select-plan" data-index="${index}">` +
      `${selected ? "Selected" : "Select"}</button></article>`;
  });
  return `<div class="plan-list">${cards.join("")}</div>`;
}

function renderStep(step: TraceStep, pcHighlight: number | null,
                    artifactBase: string): string {
  const inputs = asArray<TraceStep["inputs"][number]>(step?.inputs)
    .map((input) => `<li>${escapeHtml(input?.name)}: <em>${escapeHtml(input?.tag)}</em>` +
      ` <code>${escapeHtml(input?.digest)}</code></li>`)
    .join("");
  const output = step?.output ?? { name: "", tag: "", digest: "" };
  const thumbs = asArray<string>(step?.artifacts)
    .map((id) => `<img loading="lazy" alt="${escapeHtml(id)}"` +
      ` src="${escapeHtml(artifactBase + String(id ?? ""))}">`)
    .join("");
  const line = typeof step?.line === "number" ? step.line : -1;
  const current = pcHighlight !== null && line === pcHighlight;
  const repeatCount = typeof step?.repeat_count === "number" ? step.repeat_count : 0;
  const repeatBadge = repeatCount > 0
    ? ` <span class="repeat-badge">repeated x${repeatCount}</span>` : "";
  return `<section class="step${current ? " current" : ""}" data-line="${line}">` +
    `<h3>step ${line}: ${escapeHtml(step?.op)}${repeatBadge}</h3>` +
    `<ul class="inputs">${inputs}</ul>` +
    `<p class="output">${escapeHtml(output?.name)}: <em>${escapeHtml(output?.tag)}</em>` +
    ` <code>${escapeHtml(output?.digest)}</code></p>` +
    `<div class="thumbs">${thumbs}</div></section>`;
}

export function renderStepGallery(trace: TracePayload, session: SessionView | null,
                                  artifactBase = "/artifacts/"): string {
  const steps = asArray<TraceStep>(trace?.steps);
  const pc = session && typeof session.pc === "number" ? session.pc : null;
  const panels = steps.map((step) => renderStep(step, pc, artifactBase)).join("");
  const controls = renderControls(session);
  if (steps.length === 0) {
    return `<div class="gallery"><p class="empty">No steps executed yet.</p>${controls}</div>`;
  }
  return `<div class="gallery">${panels}${controls}</div>`;
}

function renderControls(session: SessionView | null): string {
  const done = session?.done === true;
  const started = session !== null && session.selected_plan !== null;
  if (!started) return "";
  const repeatDisabled = (session?.pc ?? 0) < 1 ? " disabled" : "";
  const stepDisabled = done ? " disabled" : "";
  const progress = done
    ? "program complete"
    : `next line: ${session?.pc ?? "?"} of ${session?.total_steps ?? "?"}`;
  return `<footer class="controls"><span class="progress">${escapeHtml(progress)}</span>` +
    `<button data-action="repeat"${repeatDisabled}>Repeat</button>` +
    `<button data-action="step"${stepDisabled}>Proceed</button></footer>`;
}

export function renderSessionHeader(session: SessionView): string {
  const [w, h] = Array.isArray(session.image_size) ? session.image_size : [0, 0];
  const labels = asArray<SessionView["scene"][number]>(session.scene)
    .map((segment) => escapeHtml(segment?.label)).join(", ");
  return `<div class="session-header">` +
    `<p class="instruction">&ldquo;${escapeHtml(session.instruction)}&rdquo;</p>` +
    `<p class="meta">${w}x${h}, scene: ${labels || "(uniform)"}</p></div>`;
}
