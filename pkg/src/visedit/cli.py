"""Command-line surface: plan, run, step (interactive), ablate, serve.

Exit codes: 0 success, 2 parse/plan error, 3 execution error, 4 I/O error.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import executor, planner, pngio, service
from .backends import ProviderBinding, Registry, register
from .dsl import parse_program, parse_selector, print_program, print_statement
from .errors import (
    AmbiguousSelector,
    BadImage,
    InvalidProgramReturned,
    NoTemplateMatch,
    ParseFailure,
    VisEditError,
)
from .geometry import ImageBuffer, resolve_selector, segment_components
from .inversion import TranslateConfig, translate_patch

EXIT_PLAN = 2
EXIT_EXEC = 3
EXIT_IO = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_registry(config: str | None, backend: tuple[str, ...], seed: int) -> Registry:
    cfg = TranslateConfig()
    if config:
        try:
            cfg = TranslateConfig.from_json(json.loads(Path(config).read_text()))
        except (OSError, ValueError) as exc:
            _fail(EXIT_IO, f"cannot read config {config}: {exc}")
    if cfg.seed is None:
        # translator derives its seed from the run seed unless pinned by config
        pass
    registry = Registry(translate_cfg=cfg)
    for spec in backend:
        if "=" not in spec:
            _fail(EXIT_PLAN, f"--backend expects ROLE=URL, got {spec!r}")
        role, url = spec.split("=", 1)
        try:
            registry = register(registry, ProviderBinding(role=role, kind="remote",
                                                          endpoint=url))
        except VisEditError as exc:
            _fail(EXIT_PLAN, str(exc))
    return registry


def _read_image(path: str):
    try:
        return pngio.read_png(path)
    except (OSError, BadImage) as exc:
        _fail(EXIT_IO, f"cannot read image {path}: {exc}")


def _resolve_program(program_path: str | None, instruction: str | None,
                     image, plan_index: int, registry: Registry):
    if (program_path is None) == (instruction is None):
        _fail(EXIT_PLAN, "give exactly one of --program or --instruction")
    if program_path is not None:
        try:
            text = Path(program_path).read_text()
        except OSError as exc:
            _fail(EXIT_IO, f"cannot read program {program_path}: {exc}")
        try:
            return parse_program(text)
        except ParseFailure as exc:
            for d in exc.diagnostics:
                click.echo(str(d), err=True)
            sys.exit(EXIT_PLAN)
    scene = service.scene_summary(image)
    try:
        candidates = planner.plan_from_instruction(instruction, scene)
    except (NoTemplateMatch, AmbiguousSelector, InvalidProgramReturned) as exc:
        _fail(EXIT_PLAN, str(exc))
    if not (0 <= plan_index < len(candidates)):
        _fail(EXIT_PLAN, f"plan index {plan_index} out of range [0, {len(candidates)})")
    return candidates[plan_index].program


@click.group()
@click.option("--seed", type=int, default=0, show_default=True, help="Run seed.")
@click.option("--config", type=str, default=None, help="Translate config JSON file.")
@click.option("--backend", multiple=True, metavar="ROLE=URL",
              help="Bind a role to a remote provider (repeatable).")
@click.pass_context
def main(ctx, seed, config, backend):
    """Visual-program image editing engine."""
    ctx.ensure_object(dict)
    ctx.obj["seed"] = seed
    ctx.obj["registry"] = _load_registry(config, backend, seed)


@main.command("plan")
@click.argument("instruction")
@click.option("--image", "image_path", required=True, type=str)
@click.pass_context
def plan_cmd(ctx, instruction, image_path):
    """Print candidate programs for an instruction."""
    image = _read_image(image_path)
    scene = service.scene_summary(image)
    try:
        candidates = planner.plan_from_instruction(instruction, scene)
    except (NoTemplateMatch, AmbiguousSelector) as exc:
        _fail(EXIT_PLAN, str(exc))
    for i, candidate in enumerate(candidates):
        click.echo(f"# plan {i} [{candidate.provenance}]")
        click.echo(print_program(candidate.program), nl=False)
        click.echo()


@main.command("run")
@click.option("--program", "program_path", type=str, default=None)
@click.option("--instruction", type=str, default=None)
@click.option("--image", "image_path", required=True, type=str)
@click.option("--plan-index", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=str, default=None, help="Final image PNG.")
@click.option("--trace", "trace_path", type=str, default=None, help="Trace JSON file.")
@click.option("--report", "report_path", type=str, default=None, help="HTML report file.")
@click.pass_context
def run_cmd(ctx, program_path, instruction, image_path, plan_index, out_path,
            trace_path, report_path):
    """Execute a program (or a planned instruction) start to finish."""
    image = _read_image(image_path)
    registry = ctx.obj["registry"]
    program = _resolve_program(program_path, instruction, image, plan_index, registry)
    artifacts = executor.ArtifactStore()
    try:
        final, trace = executor.run(program, image, registry,
                                    seed=ctx.obj["seed"], artifacts=artifacts)
    except VisEditError as exc:
        _fail(EXIT_EXEC, f"{type(exc).__name__}: {exc}")
    if out_path:
        if final.tag == "image":
            pngio.write_png(final.payload, out_path)
        elif final.tag == "region":
            pngio.write_png(_patch_image(final.payload), out_path)
        else:
            _fail(EXIT_EXEC, f"final value is a {final.tag}; nothing to write")
    if trace_path:
        Path(trace_path).write_text(json.dumps(executor.render_trace_json(trace),
                                               indent=2, sort_keys=True))
    if report_path:
        Path(report_path).write_text(executor.render_trace(trace, artifacts, program))
    click.echo(f"ok: {len(trace)} steps, final {final.tag} {final.digest()}")


@main.command("step")
@click.option("--program", "program_path", type=str, default=None)
@click.option("--instruction", type=str, default=None)
@click.option("--image", "image_path", required=True, type=str)
@click.option("--plan-index", type=int, default=0, show_default=True)
@click.pass_context
def step_cmd(ctx, program_path, instruction, image_path, plan_index):
    """Step through a program interactively (s=step, r=repeat, q=quit)."""
    image = _read_image(image_path)
    registry = ctx.obj["registry"]
    program = _resolve_program(program_path, instruction, image, plan_index, registry)
    state = executor.init_state(image, seed=ctx.obj["seed"])
    while True:
        if state.pc < len(program.statements):
            click.echo(f"next [{state.pc}]: "
                       f"{print_statement(program.statements[state.pc])}")
        else:
            click.echo("program complete")
        command = click.prompt("step/repeat/back/quit", default="s",
                               show_default=False).strip()
        if command in ("q", "quit"):
            break
        try:
            if command in ("r", "repeat"):
                trace = executor.repeat(state, program, registry)
            elif command in ("b", "back"):
                state = executor.rollback(state, program, registry)
                click.echo(f"  <- rolled back to line {state.pc}")
                continue
            elif state.pc < len(program.statements):
                trace = executor.step(state, program, registry)
            else:
                break
        except VisEditError as exc:
            _fail(EXIT_EXEC, f"{type(exc).__name__}: {exc}")
        name, tag, digest = trace.output_summary
        click.echo(f"  -> {name}: {tag} {digest} "
                   f"(repeat {trace.repeat_count}, {trace.wall_time_ms:.1f} ms)")
    click.echo(f"done: {len(state.history)} steps completed")


@main.command("ablate")
@click.option("--image", "image_path", required=True, type=str)
@click.option("--selector", "selector_text", required=True, type=str)
@click.option("--source", required=True, type=str)
@click.option("--target", required=True, type=str)
@click.option("--w", "w_values", default="2.5,5,7.5,10", show_default=True,
              help="Comma-separated guidance scales for the linear-blend runs.")
@click.option("--out", "out_dir", required=True, type=str)
@click.pass_context
def ablate_cmd(ctx, image_path, selector_text, source, target, w_values, out_dir):
    """Translate one region under each guidance scale and once with
    instance-normalization guidance; write PNGs and a pairwise RMS table."""
    image = _read_image(image_path)
    try:
        ws = [float(v) for v in w_values.split(",") if v.strip()]
    except ValueError as exc:
        _fail(EXIT_PLAN, f"bad --w list: {exc}")
    if not ws:
        _fail(EXIT_PLAN, "--w list is empty")

    base_cfg = ctx.obj["registry"].translate_cfg
    if base_cfg.seed is None:
        base_cfg = TranslateConfig.from_json({**base_cfg.to_json(), "seed": ctx.obj["seed"]})
    try:
        roi = resolve_selector(segment_components(image), parse_selector(selector_text))
    except VisEditError as exc:
        _fail(EXIT_EXEC, f"{type(exc).__name__}: {exc}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    outputs: list[tuple[str, np.ndarray]] = []
    try:
        for w in ws:
            cfg = TranslateConfig.from_json({**base_cfg.to_json(), "mode": {"CFG": w}})
            result = translate_patch(roi, source, target, cfg)
            name = f"cfg_w{w:g}"
            pngio.write_png(_patch_image(result), out / f"{name}.png")
            outputs.append((name, result.patch[:, :, :3].astype(np.float64)))
        cfg = TranslateConfig.from_json({**base_cfg.to_json(), "mode": "IN"})
        result = translate_patch(roi, source, target, cfg)
        pngio.write_png(_patch_image(result), out / "in.png")
        outputs.append(("in", result.patch[:, :, :3].astype(np.float64)))
    except VisEditError as exc:
        _fail(EXIT_EXEC, f"{type(exc).__name__}: {exc}")

    labels = [name for name, _ in outputs]
    rms = [[float(np.sqrt(np.mean((a - b) ** 2))) for _, b in outputs]
           for _, a in outputs]
    (out / "rms_matrix.json").write_text(
        json.dumps({"labels": labels, "rms": rms}, indent=2, sort_keys=True))
    click.echo(f"wrote {len(outputs)} images and rms_matrix.json to {out}")


def _patch_image(roi) -> ImageBuffer:
    return ImageBuffer(roi.patch.copy())


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.pass_context
def serve_cmd(ctx, host, port):
    """Serve the session HTTP API."""
    import uvicorn

    app = service.create_app(ctx.obj["registry"])
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
