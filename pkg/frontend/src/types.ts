// Payload shapes of the engine HTTP API; mirrors of the server responses.

export interface PlanInfo {
  index: number;
  program: string;
  provenance: string;
}

export interface SceneSegment {
  label: string;
  centroid: [number, number];
  area: number;
}

export interface SessionView {
  id: string;
  instruction: string;
  image_size: [number, number];
  scene: SceneSegment[];
  plans: PlanInfo[];
  selected_plan: number | null;
  pc: number | null;
  total_steps: number | null;
  done: boolean | null;
}

export interface TraceInput {
  name: string;
  tag: string;
  digest: string;
}

export interface TraceStep {
  line: number;
  op: string;
  inputs: TraceInput[];
  output: TraceInput;
  artifacts: string[];
  repeat_count: number;
}

export interface TracePayload {
  steps: TraceStep[];
  artifact_base?: string;
}

export interface StepResponse {
  trace: TraceStep;
  artifact_urls: string[];
  pc: number;
  done: boolean;
}

export interface ApiError {
  code: string;
  message: string;
  line?: number;
}

export class EngineError extends Error {
  constructor(public status: number, public body: ApiError) {
    super(`${body.code}: ${body.message}`);
  }
}
