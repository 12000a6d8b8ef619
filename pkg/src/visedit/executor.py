"""Line-by-line program execution over a variable store.

Each step resolves a statement's arguments against the bindings, dispatches
the operation (to a provider role or an in-process raster op), binds the
output variable, and appends an audit record with content digests and
rendered thumbnails.  Execution can repeat the step just taken with
overridden providers or literals, which replaces the step's trace entry
rather than appending a new one.
"""

from __future__ import annotations

import base64
import html
import time
from dataclasses import dataclass, field, replace

from . import backends, geometry, pngio
from .digest import digest_hex
from .dsl import SIGNATURES, Lit, Program, Ref, Sel, Statement, print_statement
from .errors import (
    EmptyImage,
    IndexOutOfRange,
    InvalidOverride,
    MissingArtifact,
    ProgramComplete,
    ProviderError,
    TypeMismatch,
    UseBeforeDef,
    VisEditError,
)
from .geometry import ImageBuffer, round_half_up
from .values import Value

INPUT_VAR = "IMAGE"


class ArtifactStore:
    """Append-only, content-addressed PNG store."""

    def __init__(self):
        self._blobs: dict[str, bytes] = {}

    def put(self, data: bytes) -> str:
        key = digest_hex(data)
        self._blobs.setdefault(key, data)
        return key

    def get(self, artifact_id: str) -> bytes:
        if artifact_id not in self._blobs:
            raise MissingArtifact(f"no artifact {artifact_id!r}")
        return self._blobs[artifact_id]

    def __contains__(self, artifact_id: str) -> bool:
        return artifact_id in self._blobs


@dataclass(frozen=True)
class StepTrace:
    line_index: int
    op_name: str
    input_summaries: tuple[tuple[str, str, str], ...]  # (name, tag, digest)
    output_summary: tuple[str, str, str]
    artifact_ids: tuple[str, ...]
    repeat_count: int = 0
    wall_time_ms: float = field(default=0.0, compare=False)


@dataclass
class ExecutionState:
    bindings: dict[str, Value]
    pc: int
    history: list[StepTrace]
    rng_seed: int
    artifacts: ArtifactStore


def init_state(image: ImageBuffer, seed: int = 0,
               artifacts: ArtifactStore | None = None) -> ExecutionState:
    if image.width < 1 or image.height < 1:
        raise EmptyImage("input image is empty")
    return ExecutionState(bindings={INPUT_VAR: Value.image(image)}, pc=0,
                          history=[], rng_seed=int(seed),
                          artifacts=artifacts or ArtifactStore())


def state_digest(state: ExecutionState) -> str:
    parts = [f"pc={state.pc}", f"seed={state.rng_seed}"]
    parts.extend(f"{name}:{value.tag}:{value.digest()}"
                 for name, value in sorted(state.bindings.items()))
    return digest_hex("|".join(parts).encode())


# --- argument resolution ---------------------------------------------------------

def _resolve_args(stmt: Statement, bindings: dict[str, Value]) -> list:
    """Check arity and types against the operation signature; dereference
    variables.  Returns one resolved entry per slot (None for an omitted
    optional slot)."""
    slots = SIGNATURES[stmt.op_name]
    required = [s for s in slots if not s.endswith("?")]
    if len(stmt.args) < len(required) or len(stmt.args) > len(slots):
        raise TypeMismatch(
            f"{stmt.op_name} takes {len(required)}..{len(slots)} args, "
            f"got {len(stmt.args)}")

    resolved: list = []
    for i, slot in enumerate(slots):
        kind = slot.rstrip("?")
        if i >= len(stmt.args):
            resolved.append(None)
            continue
        arg = stmt.args[i]
        if isinstance(arg, Ref):
            if arg.name not in bindings:
                raise UseBeforeDef(f"variable {arg.name!r} is not bound")
            value = bindings[arg.name]
            if kind in ("image", "region"):
                value.expect(kind, f"for {stmt.op_name} arg {i}")
            elif kind == "prompt":
                value.expect("prompt", f"for {stmt.op_name} arg {i}")
            else:
                raise TypeMismatch(
                    f"{stmt.op_name} arg {i} must be a literal, not a variable")
            resolved.append(value)
        elif isinstance(arg, Sel):
            if kind != "selector":
                raise TypeMismatch(f"{stmt.op_name} arg {i} cannot be a selector")
            resolved.append(arg.selector)
        else:  # literal
            if kind == "number" and isinstance(arg.value, (int, float)):
                resolved.append(float(arg.value))
            elif kind in ("prompt", "direction", "path") and isinstance(arg.value, str):
                resolved.append(arg.value)
            else:
                raise TypeMismatch(
                    f"{stmt.op_name} arg {i} expects a {kind}, got {arg.value!r}")
    return resolved


# --- dispatch ---------------------------------------------------------------------

def _dispatch(stmt: Statement, resolved: list, registry: backends.Registry,
              seed: int) -> Value:
    op = stmt.op_name
    try:
        if op == "PG":
            return backends.invoke(registry, "prompter", "describe",
                                   {"image": resolved[0]})
        if op == "Segment":
            return backends.invoke(registry, "segmenter", "segment",
                                   {"image": resolved[0],
                                    "selector": resolved[1].canonical_text()})
        if op == "Inpaint":
            return backends.invoke(registry, "inpainter", "inpaint",
                                   {"image": resolved[0], "region": resolved[1]})
        if op == "Translate":
            source = resolved[1].payload if isinstance(resolved[1], Value) else resolved[1]
            target = resolved[2].payload if isinstance(resolved[2], Value) else resolved[2]
            return backends.invoke(registry, "translator", "translate",
                                   {"region": resolved[0], "source": source,
                                    "target": target, "seed": seed})
    except VisEditError as exc:
        role = {"PG": "prompter", "Segment": "segmenter",
                "Inpaint": "inpainter", "Translate": "translator"}[op]
        raise ProviderError(role, f"{type(exc).__name__}: {exc}", cause=exc) from exc

    try:
        if op == "Move":
            roi = resolved[0].expect("region")
            bounds = (roi.mask.shape[1], roi.mask.shape[0])
            direction = resolved[1]
            if resolved[2] is not None:
                amount = round_half_up(resolved[2])
            else:
                extent = bounds[0] if direction.lower() in ("left", "right") else bounds[1]
                amount = round_half_up(extent * 0.10)
            return Value.region(geometry.move_roi(roi, direction, amount, bounds))
        if op == "Scale":
            roi = resolved[0].expect("region")
            bounds = (roi.mask.shape[1], roi.mask.shape[0])
            return Value.region(geometry.scale_roi(roi, resolved[1], bounds))
        if op == "Swap":
            image = resolved[0].expect("image")
            return Value.image(geometry.swap_rois(
                image, resolved[1].expect("region"), resolved[2].expect("region")))
        if op == "Paste":
            image = resolved[0].expect("image")
            if (resolved[2] is None) != (resolved[3] is None):
                raise TypeMismatch("Paste target needs both x and y")
            at = (resolved[2], resolved[3]) if resolved[2] is not None else None
            return Value.image(geometry.paste(image, resolved[1].expect("region"), at))
        if op == "Load":
            return Value.image(pngio.read_png(resolved[0]))
        if op == "Save":
            image = resolved[0].expect("image")
            pngio.write_png(image, resolved[1])
            return Value.image(image)
    except TypeMismatch:
        raise
    except VisEditError as exc:
        raise ProviderError("local", f"{type(exc).__name__}: {exc}", cause=exc) from exc
    raise TypeMismatch(f"operation {op!r} has no implementation")


def _render_artifacts(value: Value, store: ArtifactStore) -> tuple[str, ...]:
    if value.tag == "image":
        return (store.put(pngio.encode_png(value.payload)),)
    if value.tag == "region":
        return (store.put(pngio.encode_png(ImageBuffer(value.payload.patch.copy()))),)
    if value.tag == "region_list":
        return tuple(store.put(pngio.encode_png(ImageBuffer(r.patch.copy())))
                     for r in value.payload)
    return ()


def _summaries(stmt: Statement, resolved: list) -> tuple[tuple[str, str, str], ...]:
    out = []
    for i, arg in enumerate(stmt.args):
        if isinstance(arg, Ref):
            value = resolved[i]
            out.append((arg.name, value.tag, value.digest()))
        elif isinstance(arg, Sel):
            text = arg.selector.canonical_text()
            out.append((f"arg{i}", "prompt", Value.prompt(text).digest()))
        elif isinstance(arg.value, str):
            out.append((f"arg{i}", "prompt", Value.prompt(arg.value).digest()))
        else:
            out.append((f"arg{i}", "number", Value.number(arg.value).digest()))
    return tuple(out)


def _execute_statement(stmt: Statement, line_index: int, state: ExecutionState,
                       registry: backends.Registry, repeat_count: int) -> StepTrace:
    started = time.perf_counter()
    resolved = _resolve_args(stmt, state.bindings)
    value = _dispatch(stmt, resolved, registry, state.rng_seed)
    artifact_ids = _render_artifacts(value, state.artifacts)
    trace = StepTrace(
        line_index=line_index,
        op_name=stmt.op_name,
        input_summaries=_summaries(stmt, resolved),
        output_summary=(stmt.output_var, value.tag, value.digest()),
        artifact_ids=artifact_ids,
        repeat_count=repeat_count,
        wall_time_ms=(time.perf_counter() - started) * 1000.0,
    )
    state.bindings[stmt.output_var] = value
    return trace


# --- public stepping API -----------------------------------------------------------

def step(state: ExecutionState, program: Program,
         providers: backends.Registry) -> StepTrace:
    """Execute the statement at the program counter and advance."""
    if state.pc >= len(program.statements):
        raise ProgramComplete(f"program has only {len(program.statements)} statements")
    stmt = program.statements[state.pc]
    trace = _execute_statement(stmt, state.pc, state, providers, repeat_count=0)
    state.history.append(trace)
    state.pc += 1
    return trace


def repeat(state: ExecutionState, program: Program, providers: backends.Registry,
           overrides: dict | None = None) -> StepTrace:
    """Re-execute the step just taken, optionally with overrides.

    ``overrides`` may carry "providers" (role -> ProviderBinding) and "args"
    (0-based arg index -> literal).  The output binding and the trace entry
    are replaced; the program counter stays put.
    """
    if state.pc < 1:
        raise IndexOutOfRange("no step has run yet; nothing to repeat")
    overrides = overrides or {}
    unknown = set(overrides) - {"providers", "args"}
    if unknown:
        raise InvalidOverride(f"unknown override keys {sorted(unknown)}")

    registry = providers
    for role, binding in (overrides.get("providers") or {}).items():
        if not isinstance(binding, backends.ProviderBinding):
            raise InvalidOverride(f"override for role {role!r} must be a ProviderBinding")
        registry = backends.register(registry, binding)

    stmt = program.statements[state.pc - 1]
    arg_overrides = overrides.get("args") or {}
    if arg_overrides:
        args = list(stmt.args)
        for index, literal in arg_overrides.items():
            if not isinstance(index, int) or not (0 <= index < len(args)):
                raise InvalidOverride(f"arg index {index!r} out of range")
            if not isinstance(literal, (int, float, str)):
                raise InvalidOverride(f"arg override must be a literal, got {literal!r}")
            args[index] = Lit(literal)
        stmt = replace(stmt, args=tuple(args))

    previous = state.history[state.pc - 1]
    trace = _execute_statement(stmt, state.pc - 1, state, registry,
                               repeat_count=previous.repeat_count + 1)
    state.history[state.pc - 1] = trace
    return trace


def rollback(state: ExecutionState, program: Program,
             providers: backends.Registry, steps: int = 1) -> ExecutionState:
    """Step back by replaying from the start to pc - steps.

    States are cheap at desk scale, so rollback is a fresh replay with the
    same seed and artifact store rather than a snapshot restore.  Returns the
    replayed state; the input state is untouched.
    """
    target = state.pc - steps
    if target < 0:
        raise IndexOutOfRange(f"cannot roll back {steps} steps from pc={state.pc}")
    fresh = init_state(state.bindings[INPUT_VAR].payload, seed=state.rng_seed,
                       artifacts=state.artifacts)
    while fresh.pc < target:
        step(fresh, program, providers)
    return fresh


def run(program: Program, image: ImageBuffer, providers: backends.Registry,
        seed: int = 0, artifacts: ArtifactStore | None = None
        ) -> tuple[Value, list[StepTrace]]:
    """Execute a program start to finish; the final value is the last
    statement's output (the input image for an empty program)."""
    state = init_state(image, seed=seed, artifacts=artifacts)
    while state.pc < len(program.statements):
        step(state, program, providers)
    if program.statements:
        final = state.bindings[program.statements[-1].output_var]
    else:
        final = state.bindings[INPUT_VAR]
    return final, state.history


# --- trace rendering -----------------------------------------------------------------

def render_trace_json(trace: list[StepTrace]) -> dict:
    """Machine-readable twin of the report.  Wall time is deliberately
    omitted so identical runs serialize to identical bytes."""
    return {"steps": [{
        "line": t.line_index,
        "op": t.op_name,
        "inputs": [{"name": n, "tag": tag, "digest": d}
                   for n, tag, d in t.input_summaries],
        "output": {"name": t.output_summary[0], "tag": t.output_summary[1],
                   "digest": t.output_summary[2]},
        "artifacts": list(t.artifact_ids),
        "repeat_count": t.repeat_count,
    } for t in trace]}


def parse_trace_json(data: dict) -> list[StepTrace]:
    steps = []
    for node in data["steps"]:
        steps.append(StepTrace(
            line_index=int(node["line"]),
            op_name=str(node["op"]),
            input_summaries=tuple((i["name"], i["tag"], i["digest"])
                                  for i in node["inputs"]),
            output_summary=(node["output"]["name"], node["output"]["tag"],
                            node["output"]["digest"]),
            artifact_ids=tuple(node["artifacts"]),
            repeat_count=int(node["repeat_count"]),
        ))
    return steps


def render_trace(trace: list[StepTrace], artifacts: ArtifactStore,
                 program: Program | None = None) -> str:
    """Self-contained HTML report: one section per step, thumbnails inlined
    as data URIs."""
    sections = []
    for t in trace:
        thumbs = []
        for artifact_id in t.artifact_ids:
            data = artifacts.get(artifact_id)  # raises MissingArtifact
            b64 = base64.b64encode(data).decode("ascii")
            thumbs.append(f'<img alt="{artifact_id}" src="data:image/png;base64,{b64}">')
        inputs = ", ".join(f"{html.escape(n)}:{tag}" for n, tag, _ in t.input_summaries)
        source = ""
        if program is not None and t.line_index < len(program.statements):
            source = f"<pre>{html.escape(print_statement(program.statements[t.line_index]))}</pre>"
        repeat_badge = (f' <span class="repeat">repeated x{t.repeat_count}</span>'
                        if t.repeat_count else "")
        sections.append(
            f'<section><h2>step {t.line_index}: {html.escape(t.op_name)}{repeat_badge}</h2>'
            f'{source}'
            f'<p>inputs: {inputs or "none"}</p>'
            f'<p>output: {html.escape(t.output_summary[0])}:{t.output_summary[1]} '
            f'<code>{t.output_summary[2]}</code></p>'
            f'<div class="thumbs">{"".join(thumbs)}</div></section>')
    body = "\n".join(sections)
    return ("<!doctype html><html><head><meta charset=\"utf-8\">"
            "<title>execution trace</title><style>"
            "body{font-family:sans-serif;margin:2em}section{border:1px solid #ccc;"
            "padding:1em;margin:1em 0}img{image-rendering:pixelated;min-width:96px;"
            "border:1px solid #eee;margin-right:.5em}.repeat{color:#b50}"
            "</style></head><body><h1>execution trace</h1>\n"
            f"{body}\n</body></html>")
