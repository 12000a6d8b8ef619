"""Instruction-to-program compilation.

A fixed table of instruction templates (change/move/enlarge/shrink/swap/
remove) compiles matched instructions into programs; alternate plans are the
other topological orders of the program's def-use graph.  A remote language
model can stand in for the template table through ``llm_plan_request``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import requests

from .dsl import (
    RESERVED_INPUT,
    Lit,
    Program,
    Ref,
    Sel,
    Statement,
    parse_program,
    parse_selector,
    print_program,
)
from .errors import (
    AmbiguousSelector,
    Diagnostic,
    InvalidProgramReturned,
    InvalidRange,
    NoTemplateMatch,
    ParseFailure,
    TransportError,
)
from .geometry import round_half_up

DEFAULT_ORDERING_LIMIT = 8
DEFAULT_MOVE_FRACTION = 0.10   # of image width/height when no amount given
DEFAULT_ENLARGE_FACTOR = 2.0
DEFAULT_SHRINK_FACTOR = 0.5


@dataclass(frozen=True)
class SceneSummary:
    """What the planner knows about the input image: labeled segments with
    centroids and pixel areas."""

    segments: tuple[tuple[str, tuple[float, float], int], ...]  # (label, (cx, cy), area)
    image_size: tuple[int, int]

    def __post_init__(self):
        w, h = self.image_size
        for label, (cx, cy), area in self.segments:
            if not (0 <= cx < w and 0 <= cy < h):
                raise InvalidRange(f"centroid ({cx},{cy}) of {label!r} "
                                   f"outside {w}x{h} image")
            if area <= 0:
                raise InvalidRange(f"segment {label!r} has area {area}")

    def count_label(self, label: str) -> int:
        return sum(1 for seg_label, _, _ in self.segments if seg_label.lower() == label.lower())


@dataclass(frozen=True)
class Dataflow:
    """Def-use graph over statement indices; edges run def -> use."""

    n: int
    edges: frozenset[tuple[int, int]]


@dataclass(frozen=True)
class PlanCandidate:
    program: Program
    dataflow: Dataflow
    provenance: str  # "template:<id>" | "reordering:<id>:<k>" | "llm"


@dataclass(frozen=True)
class DataflowResult:
    dag: Dataflow | None
    diagnostics: tuple[Diagnostic, ...]

    @property
    def ok(self) -> bool:
        return self.dag is not None


# --- dataflow validation -------------------------------------------------------

def validate_dataflow(program: Program) -> DataflowResult:
    """Build the def-use DAG; UseBeforeDef diagnostics are errors, unused
    non-final outputs are warnings."""
    defs: dict[str, int] = {}
    edges: set[tuple[int, int]] = set()
    diagnostics: list[Diagnostic] = []
    used: set[str] = set()

    for idx, stmt in enumerate(program.statements):
        for arg in stmt.args:
            if not isinstance(arg, Ref):
                continue
            used.add(arg.name)
            if arg.name == RESERVED_INPUT:
                continue
            if arg.name not in defs:
                diagnostics.append(Diagnostic(
                    "error", "UseBeforeDef",
                    f"variable {arg.name!r} used before assignment",
                    stmt.line or idx + 1, 1))
            else:
                edges.add((defs[arg.name], idx))
        defs[stmt.output_var] = idx

    for name, idx in defs.items():
        if name not in used and idx != len(program.statements) - 1:
            diagnostics.append(Diagnostic(
                "warning", "UnusedOutput",
                f"output {name!r} is never used",
                program.statements[idx].line or idx + 1, 1))

    if any(d.severity == "error" for d in diagnostics):
        return DataflowResult(dag=None, diagnostics=tuple(diagnostics))
    return DataflowResult(dag=Dataflow(n=len(program.statements), edges=frozenset(edges)),
                          diagnostics=tuple(diagnostics))


# --- topological order enumeration ----------------------------------------------

def topological_orders(n: int, edges: frozenset[tuple[int, int]] | set[tuple[int, int]],
                       limit: int) -> list[tuple[int, ...]]:
    """Up to ``limit`` distinct topological orders, lexicographically by node
    index, so [0, 1, ..., n-1] comes first whenever it is valid."""
    succ: dict[int, list[int]] = {i: [] for i in range(n)}
    indeg = [0] * n
    for u, v in edges:
        succ[u].append(v)
        indeg[v] += 1

    results: list[tuple[int, ...]] = []
    order: list[int] = []

    def visit() -> bool:
        if len(results) >= limit:
            return True
        if len(order) == n:
            results.append(tuple(order))
            return len(results) >= limit
        for v in range(n):
            if indeg[v] == 0 and v not in taken:
                taken.add(v)
                order.append(v)
                for w in succ[v]:
                    indeg[w] -= 1
                if visit():
                    return True
                for w in succ[v]:
                    indeg[w] += 1
                order.pop()
                taken.remove(v)
        return False

    taken: set[int] = set()
    visit()
    return results


def enumerate_orderings(candidate: PlanCandidate,
                        limit: int = DEFAULT_ORDERING_LIMIT) -> list[Program]:
    """Reorder the candidate's statements along each topological order of its
    def-use DAG; element 0 is the original ordering."""
    orders = topological_orders(candidate.dataflow.n, candidate.dataflow.edges, limit)
    statements = candidate.program.statements
    return [Program(statements=tuple(statements[i] for i in order)) for order in orders]


# --- instruction templates -------------------------------------------------------

_ARTICLE = r"(?:the\s+|a\s+|an\s+)?"

_TEMPLATES: list[tuple[str, re.Pattern]] = [
    ("change", re.compile(
        rf"^(?:change|translate|turn|convert)\s+{_ARTICLE}(?P<sel>.+?)\s+(?:in)?to\s+{_ARTICLE}(?P<target>.+?)\s*$",
        re.IGNORECASE)),
    ("enlarge", re.compile(
        rf"^(?:enlarge|grow)\s+{_ARTICLE}(?P<sel>.+?)(?:\s+by\s+(?P<factor>[0-9.]+)x?)?\s*$",
        re.IGNORECASE)),
    ("move", re.compile(
        rf"^move\s+{_ARTICLE}(?P<sel>.+?)\s+(?:to\s+the\s+)?(?P<dir>left|right|up|down)"
        rf"(?:\s+by\s+(?P<pct>\d+)\s*%)?\s*$",
        re.IGNORECASE)),
    ("remove", re.compile(
        rf"^(?:remove|delete|erase)\s+{_ARTICLE}(?P<sel>.+?)\s*$", re.IGNORECASE)),
    ("shrink", re.compile(
        rf"^shrink\s+{_ARTICLE}(?P<sel>.+?)(?:\s+by\s+(?P<factor>[0-9.]+)x?)?\s*$",
        re.IGNORECASE)),
    ("swap", re.compile(
        rf"^swap\s+{_ARTICLE}(?P<sel_a>.+?)\s+(?:and|with)\s+{_ARTICLE}(?P<sel_b>.+?)\s*$",
        re.IGNORECASE)),
]


def _check_groundable(selector_text: str, scene: SceneSummary) -> None:
    """Plan-time sanity: a selector with no positional word must match exactly
    one scene segment; positional selectors ground at execution time."""
    selector = parse_selector(selector_text)
    if selector.positional != "all":
        return
    count = scene.count_label(selector.class_name)
    if count != 1:
        raise AmbiguousSelector(
            f"selector {selector_text!r} matches {count} segments; "
            "add a positional word (left/right/middle/far left/far right/#k)")


def _template_program(template_id: str, match: re.Match, scene: SceneSummary) -> Program:
    def seg(var: str, selector_text: str) -> Statement:
        return Statement(output_var=var, op_name="Segment",
                         args=(Ref(RESERVED_INPUT), Sel(parse_selector(selector_text))))

    if template_id == "change":
        sel, target = match["sel"], match["target"]
        _check_groundable(sel, scene)
        return Program(statements=(
            Statement("SRC0", "PG", (Ref(RESERVED_INPUT),)),
            seg("OBJ0", sel),
            Statement("BG0", "Inpaint", (Ref(RESERVED_INPUT), Ref("OBJ0"))),
            Statement("OBJ1", "Translate", (Ref("OBJ0"), Ref("SRC0"), Lit(target))),
            Statement("OUT0", "Paste", (Ref("BG0"), Ref("OBJ1"))),
        ))
    if template_id in ("enlarge", "shrink"):
        sel = match["sel"]
        _check_groundable(sel, scene)
        factor = match["factor"]
        value = float(factor) if factor else (
            DEFAULT_ENLARGE_FACTOR if template_id == "enlarge" else DEFAULT_SHRINK_FACTOR)
        return Program(statements=(
            seg("OBJ0", sel),
            Statement("BG0", "Inpaint", (Ref(RESERVED_INPUT), Ref("OBJ0"))),
            Statement("OBJ1", "Scale", (Ref("OBJ0"), Lit(value))),
            Statement("OUT0", "Paste", (Ref("BG0"), Ref("OBJ1"))),
        ))
    if template_id == "move":
        sel, direction = match["sel"], match["dir"].lower()
        _check_groundable(sel, scene)
        w, h = scene.image_size
        fraction = int(match["pct"]) / 100.0 if match["pct"] else DEFAULT_MOVE_FRACTION
        extent = w if direction in ("left", "right") else h
        amount = round_half_up(extent * fraction)
        return Program(statements=(
            seg("OBJ0", sel),
            Statement("BG0", "Inpaint", (Ref(RESERVED_INPUT), Ref("OBJ0"))),
            Statement("OBJ1", "Move", (Ref("OBJ0"), Lit(direction.capitalize()), Lit(amount))),
            Statement("OUT0", "Paste", (Ref("BG0"), Ref("OBJ1"))),
        ))
    if template_id == "remove":
        sel = match["sel"]
        _check_groundable(sel, scene)
        return Program(statements=(
            seg("OBJ0", sel),
            Statement("OUT0", "Inpaint", (Ref(RESERVED_INPUT), Ref("OBJ0"))),
        ))
    if template_id == "swap":
        sel_a, sel_b = match["sel_a"], match["sel_b"]
        _check_groundable(sel_a, scene)
        _check_groundable(sel_b, scene)
        return Program(statements=(
            seg("OBJ0", sel_a),
            seg("OBJ1", sel_b),
            Statement("OUT0", "Swap", (Ref(RESERVED_INPUT), Ref("OBJ0"), Ref("OBJ1"))),
        ))
    raise NoTemplateMatch(template_id)


def plan_from_instruction(instruction: str, scene: SceneSummary,
                          orderings: int = DEFAULT_ORDERING_LIMIT) -> list[PlanCandidate]:
    """Compile an instruction against the template table.

    For each matching template the base program comes first, followed by its
    alternate statement orderings, all dataflow-validated.  Output order is
    deterministic: template id, then ordering index.
    """
    text = instruction.strip()
    if not text:
        raise NoTemplateMatch("instruction is empty")

    candidates: list[PlanCandidate] = []
    matched = False
    for template_id, pattern in _TEMPLATES:
        match = pattern.match(text)
        if not match:
            continue
        matched = True
        program = _template_program(template_id, match, scene)
        result = validate_dataflow(program)
        assert result.ok, f"template {template_id} produced invalid dataflow"
        base = PlanCandidate(program=program, dataflow=result.dag,
                             provenance=f"template:{template_id}")
        for k, variant in enumerate(enumerate_orderings(base, limit=orderings)):
            if k == 0:
                candidates.append(base)
            else:
                candidates.append(PlanCandidate(
                    program=variant, dataflow=validate_dataflow(variant).dag,
                    provenance=f"reordering:{template_id}:{k}"))
    if not matched:
        raise NoTemplateMatch(f"no template matches {instruction!r}")
    return candidates


# --- remote planner ----------------------------------------------------------------

def llm_plan_request(instruction: str, exemplars: list[tuple[str, str]],
                     endpoint: str, timeout: float = 30.0) -> Program:
    """Ask a remote language-model service for a program.

    The reply must parse and pass dataflow validation before it is accepted;
    otherwise the raw text is preserved in the error.
    """
    if not exemplars:
        raise InvalidProgramReturned("at least one exemplar is required")
    body = {
        "role": "planner",
        "instruction": instruction,
        "exemplars": [[i, p] for i, p in exemplars],
        "max_length": 256,
        "temperature": 0,
    }
    try:
        response = requests.post(endpoint, json=body, timeout=timeout)
        response.raise_for_status()
        payload = response.json()
    except requests.RequestException as exc:
        raise TransportError(f"planner request failed: {exc}") from exc
    except ValueError as exc:
        raise InvalidProgramReturned(f"planner reply is not JSON: {exc}") from exc

    text = payload.get("program")
    if not isinstance(text, str):
        raise InvalidProgramReturned("planner reply lacks a \"program\" string",
                                     raw_text=str(payload))
    try:
        program = parse_program(text)
    except ParseFailure as exc:
        raise InvalidProgramReturned(f"returned program does not parse: {exc}",
                                     raw_text=text) from exc
    result = validate_dataflow(program)
    if not result.ok:
        raise InvalidProgramReturned(
            "returned program fails dataflow validation: "
            + "; ".join(str(d) for d in result.diagnostics), raw_text=text)
    return program


DEFAULT_EXEMPLARS: list[tuple[str, str]] = [
    ("change the left dog to a sheep", print_program(_template_program(
        "change", _TEMPLATES[0][1].match("change the left dog to a sheep"),
        SceneSummary(segments=(("dog", (1.0, 1.0), 1), ("dog", (5.0, 1.0), 1)),
                     image_size=(64, 48))))),
    ("remove the cat", print_program(Program(statements=(
        Statement("OBJ0", "Segment", (Ref(RESERVED_INPUT), Sel(parse_selector("cat")))),
        Statement("OUT0", "Inpaint", (Ref(RESERVED_INPUT), Ref("OBJ0"))),
    )))),
    ("swap the left dog and the right dog", print_program(Program(statements=(
        Statement("OBJ0", "Segment", (Ref(RESERVED_INPUT), Sel(parse_selector("left dog")))),
        Statement("OBJ1", "Segment", (Ref(RESERVED_INPUT), Sel(parse_selector("right dog")))),
        Statement("OUT0", "Swap", (Ref(RESERVED_INPUT), Ref("OBJ0"), Ref("OBJ1"))),
    )))),
]
