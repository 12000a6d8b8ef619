"""The visual-program language: abstract syntax, parser, and printer.

Programs are straight-line, single-assignment sequences of the form

    VAR = Op(arg, arg, ...)        # optional comment

with one statement per line.  Arguments are number literals, double-quoted
strings, or references to previously assigned variables.  String arguments
in an operation's selector slot are parsed into structured ``Selector``
values ("left dog", "far right pigeon", "#2 fox").
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import Diagnostic, EmptySelector, ParseFailure

# Operation vocabulary and per-slot argument kinds.  A trailing "?" marks an
# optional slot.  Slots beyond the listed ones are rejected at execution, not
# at parse time.
SIGNATURES: dict[str, tuple[str, ...]] = {
    "PG": ("image",),
    "Segment": ("image", "selector"),
    "Inpaint": ("image", "region"),
    "Translate": ("region", "prompt", "prompt"),
    "Move": ("region", "direction", "number?"),
    "Scale": ("region", "number"),
    "Swap": ("image", "region", "region"),
    "Paste": ("image", "region", "number?", "number?"),
    "Load": ("path",),
    "Save": ("image", "path"),
}

OP_NAMES = frozenset(SIGNATURES)

RESERVED_INPUT = "IMAGE"

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"-?\d+(\.\d+)?")

POSITIONAL_WORDS = ("left", "right", "middle", "all")
DIRECTION_WORDS = ("left", "right", "up", "down")


# --- abstract syntax ---------------------------------------------------------

@dataclass(frozen=True)
class Selector:
    """Class + positional predicate grounding a phrase to one region.

    ``positional`` is one of left/right/middle/far-left/far-right/index/all;
    ``index`` is only meaningful when positional == "index".
    """

    class_name: str
    positional: str = "all"
    index: int | None = None
    attributes: tuple[str, ...] = ()

    def canonical_text(self) -> str:
        parts: list[str] = []
        if self.positional == "index":
            parts.append(f"#{self.index}")
        elif self.positional == "far-left":
            parts.append("far left")
        elif self.positional == "far-right":
            parts.append("far right")
        elif self.positional != "all":
            parts.append(self.positional)
        parts.extend(self.attributes)
        parts.append(self.class_name)
        return " ".join(parts)


@dataclass(frozen=True)
class Ref:
    """Reference to a previously assigned variable."""

    name: str


@dataclass(frozen=True)
class Lit:
    """Number or string literal."""

    value: int | float | str


@dataclass(frozen=True)
class Sel:
    """Selector literal (a string literal in a selector slot)."""

    selector: Selector


Arg = Ref | Lit | Sel


@dataclass(frozen=True)
class Statement:
    output_var: str
    op_name: str
    args: tuple[Arg, ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Program:
    statements: tuple[Statement, ...]
    source_text: str = field(default="", compare=False)

    def __len__(self) -> int:
        return len(self.statements)


# --- selector parsing --------------------------------------------------------

def parse_selector(text: str) -> Selector:
    """Parse a selector phrase.

    The leading token(s) may name a position (left, right, middle, far left,
    far right, #k); the last token is the class; anything between is kept as
    attribute words.  Every non-empty alphanumeric phrase parses.
    """
    tokens = text.split()
    if not tokens:
        raise EmptySelector("selector phrase is empty")

    positional = "all"
    index: int | None = None
    i = 0
    first = tokens[0].lower()
    if len(tokens) > 1:
        if first == "far" and len(tokens) > 2 and tokens[1].lower() in ("left", "right"):
            positional = f"far-{tokens[1].lower()}"
            i = 2
        elif first in ("far-left", "far-right"):
            positional = first
            i = 1
        elif first in POSITIONAL_WORDS:
            positional = first
            i = 1
        elif re.fullmatch(r"#\d+", tokens[0]):
            positional = "index"
            index = int(tokens[0][1:])
            i = 1

    rest = tokens[i:]
    if not rest:  # phrase was nothing but a positional word; treat it as the class
        return Selector(class_name=tokens[-1], positional="all")
    return Selector(
        class_name=rest[-1],
        positional=positional,
        index=index,
        attributes=tuple(rest[:-1]),
    )


# --- program parsing ---------------------------------------------------------

def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _scan_string(line: str, pos: int) -> tuple[str, int]:
    """Scan a double-quoted string starting at ``pos`` (the opening quote)."""
    out: list[str] = []
    i = pos + 1
    while i < len(line):
        c = line[i]
        if c == "\\" and i + 1 < len(line) and line[i + 1] in ('"', "\\"):
            out.append(line[i + 1])
            i += 2
            continue
        if c == '"':
            return "".join(out), i + 1
        out.append(c)
        i += 1
    raise _SyntaxIssue("unterminated string literal", pos + 1)


class _SyntaxIssue(Exception):
    def __init__(self, message: str, column: int):
        super().__init__(message)
        self.column = column


def _parse_line(line: str, line_no: int) -> Statement | None:
    """Parse one source line; returns None for blank/comment-only lines."""
    pos = 0

    def skip_ws(p: int) -> int:
        while p < len(line) and line[p] in " \t":
            p += 1
        return p

    pos = skip_ws(pos)
    if pos >= len(line) or line[pos] == "#":
        return None

    m = _IDENT_RE.match(line, pos)
    if not m:
        raise _SyntaxIssue("expected variable name", pos + 1)
    output_var = m.group()
    pos = skip_ws(m.end())

    if pos >= len(line) or line[pos] != "=":
        raise _SyntaxIssue("expected '=' after variable name", pos + 1)
    pos = skip_ws(pos + 1)

    m = _IDENT_RE.match(line, pos)
    if not m:
        raise _SyntaxIssue("expected operation name", pos + 1)
    op_name = m.group()
    op_col = pos + 1
    pos = skip_ws(m.end())

    if pos >= len(line) or line[pos] != "(":
        raise _SyntaxIssue("expected '(' after operation name", pos + 1)
    pos = skip_ws(pos + 1)

    args: list[Arg] = []
    if pos < len(line) and line[pos] == ")":
        pos += 1
    else:
        while True:
            pos = skip_ws(pos)
            if pos >= len(line):
                raise _SyntaxIssue("expected argument", pos + 1)
            c = line[pos]
            if c == '"':
                text, pos = _scan_string(line, pos)
                args.append(Lit(text))
            elif c.isdigit() or c == "-":
                m = _NUMBER_RE.match(line, pos)
                if not m:
                    raise _SyntaxIssue("malformed number literal", pos + 1)
                token = m.group()
                args.append(Lit(float(token) if "." in token else int(token)))
                pos = m.end()
            else:
                m = _IDENT_RE.match(line, pos)
                if not m:
                    raise _SyntaxIssue(f"unexpected character {c!r}", pos + 1)
                args.append(Ref(m.group()))
                pos = m.end()
            pos = skip_ws(pos)
            if pos < len(line) and line[pos] == ",":
                pos += 1
                continue
            if pos < len(line) and line[pos] == ")":
                pos += 1
                break
            raise _SyntaxIssue("expected ',' or ')'", pos + 1)

    pos = skip_ws(pos)
    if pos < len(line) and line[pos] != "#":
        raise _SyntaxIssue("trailing characters after statement", pos + 1)

    if op_name not in OP_NAMES:
        raise _OpIssue(op_name, op_col)

    return Statement(output_var=output_var, op_name=op_name,
                     args=_type_args(op_name, args, line_no), line=line_no)


class _OpIssue(Exception):
    def __init__(self, op_name: str, column: int):
        super().__init__(op_name)
        self.op_name = op_name
        self.column = column


def _type_args(op_name: str, args: list[Arg], line_no: int) -> tuple[Arg, ...]:
    """Promote string literals in selector slots to structured selectors."""
    slots = SIGNATURES[op_name]
    typed: list[Arg] = []
    for i, arg in enumerate(args):
        slot = slots[i].rstrip("?") if i < len(slots) else None
        if slot == "selector" and isinstance(arg, Lit) and isinstance(arg.value, str):
            try:
                typed.append(Sel(parse_selector(arg.value)))
            except EmptySelector as exc:
                raise _SyntaxIssue(str(exc), 1) from exc
        else:
            typed.append(arg)
    return tuple(typed)


def parse_program(source: str) -> Program:
    """Parse program text; raises ParseFailure carrying all diagnostics.

    Parsing continues past a bad line so one pass reports every problem.
    """
    statements: list[Statement] = []
    diagnostics: list[Diagnostic] = []
    seen_outputs: dict[str, int] = {}

    for line_no, line in enumerate(source.splitlines(), start=1):
        try:
            stmt = _parse_line(line, line_no)
        except _OpIssue as exc:
            diagnostics.append(Diagnostic(
                "error", "UnknownOperation",
                f"unknown operation {exc.op_name!r}", line_no, exc.column))
            continue
        except _SyntaxIssue as exc:
            diagnostics.append(Diagnostic(
                "error", "SyntaxError", str(exc), line_no, exc.column))
            continue
        if stmt is None:
            continue
        if stmt.output_var in seen_outputs:
            diagnostics.append(Diagnostic(
                "error", "DuplicateAssignment",
                f"variable {stmt.output_var!r} already assigned on line "
                f"{seen_outputs[stmt.output_var]}", line_no, 1))
            continue
        if stmt.output_var == RESERVED_INPUT:
            diagnostics.append(Diagnostic(
                "error", "DuplicateAssignment",
                f"{RESERVED_INPUT!r} is the reserved input variable", line_no, 1))
            continue
        seen_outputs[stmt.output_var] = line_no
        statements.append(stmt)

    if diagnostics:
        raise ParseFailure(diagnostics)
    return Program(statements=tuple(statements), source_text=source)


# --- printing ----------------------------------------------------------------

def _format_number(value: int | float) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _format_arg(arg: Arg) -> str:
    if isinstance(arg, Ref):
        return arg.name
    if isinstance(arg, Sel):
        return _quote(arg.selector.canonical_text())
    if isinstance(arg.value, str):
        return _quote(arg.value)
    return _format_number(arg.value)


def print_statement(stmt: Statement) -> str:
    args = ", ".join(_format_arg(a) for a in stmt.args)
    return f"{stmt.output_var} = {stmt.op_name}({args})"


def print_program(program: Program) -> str:
    """Canonical text: one statement per line, LF endings, no comments."""
    return "".join(print_statement(s) + "\n" for s in program.statements)
