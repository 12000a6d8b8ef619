// Thin client over the engine's session API.  Every mutation the UI can
// perform goes through one of these functions; a wire log records each
// request so tests can verify the UI never talks to undocumented endpoints.

import {
  ApiError,
  EngineError,
  SessionView,
  StepResponse,
  TracePayload,
} from "./types";

export interface WireRecord {
  method: string;
  path: string;
  status: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class EngineClient {
  readonly wireLog: WireRecord[] = [];

  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  artifactUrl(digest: string): string {
    return `${this.baseUrl}/artifacts/${digest}`;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    this.wireLog.push({ method, path, status: response.status });
    if (!response.ok) {
      let parsed: ApiError;
      try {
        parsed = (await response.json()) as ApiError;
      } catch {
        parsed = { code: "HTTP_" + response.status, message: response.statusText };
      }
      throw new EngineError(response.status, parsed);
    }
    return (await response.json()) as T;
  }

  createSession(imageBase64: string, instruction: string, seed = 0): Promise<SessionView> {
    return this.request<SessionView>("POST", "/sessions", {
      image: imageBase64,
      instruction,
      seed,
    });
  }

  getSession(id: string): Promise<SessionView> {
    return this.request<SessionView>("GET", `/sessions/${id}`);
  }

  selectPlan(id: string, index: number): Promise<SessionView> {
    return this.request<SessionView>("POST", `/sessions/${id}/plan/${index}`);
  }

  step(id: string): Promise<StepResponse> {
    return this.request<StepResponse>("POST", `/sessions/${id}/step`, {});
  }

  repeat(id: string, overrides: Record<string, unknown> = {}): Promise<StepResponse> {
    return this.request<StepResponse>("POST", `/sessions/${id}/repeat`, { overrides });
  }

  trace(id: string): Promise<TracePayload> {
    return this.request<TracePayload>("GET", `/sessions/${id}/trace`);
  }
}
