"""Error types shared across the engine.

Every failure mode has its own exception class so callers can match on the
condition rather than on message text.  Each class carries a stable
machine-readable ``code`` used by the HTTP API.
"""

from __future__ import annotations

from dataclasses import dataclass


class VisEditError(Exception):
    """Base class for all engine errors."""

    code = "INTERNAL"


# --- DSL / parsing ---------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    """One parser or validator finding, anchored to source text."""

    severity: str  # "error" | "warning"
    code: str
    message: str
    line: int = 0    # 1-based; 0 = whole program
    column: int = 0  # 1-based; 0 = whole line

    def __str__(self) -> str:
        loc = f"{self.line}:{self.column}: " if self.line else ""
        return f"{loc}{self.severity}: {self.message} [{self.code}]"


class ParseFailure(VisEditError):
    """Raised when a program or selector cannot be parsed; carries diagnostics."""

    code = "PARSE_ERROR"

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))


class UnknownOperation(VisEditError):
    code = "UNKNOWN_OPERATION"


class DuplicateAssignment(VisEditError):
    code = "DUPLICATE_ASSIGNMENT"


class EmptySelector(VisEditError):
    code = "EMPTY_SELECTOR"


# --- planning ---------------------------------------------------------------

class NoTemplateMatch(VisEditError):
    code = "NO_TEMPLATE_MATCH"


class AmbiguousSelector(VisEditError):
    code = "AMBIGUOUS_SELECTOR"


class UseBeforeDef(VisEditError):
    code = "USE_BEFORE_DEF"


class InvalidProgramReturned(VisEditError):
    """A remote planner answered with text that does not parse or validate."""

    code = "INVALID_PROGRAM_RETURNED"

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


# --- geometry ---------------------------------------------------------------

class EmptyImage(VisEditError):
    code = "EMPTY_IMAGE"


class BadImage(VisEditError):
    code = "BAD_IMAGE"


class NoForeground(VisEditError):
    code = "NO_FOREGROUND"


class SelectorUnresolved(VisEditError):
    code = "SELECTOR_UNRESOLVED"


class SelectorAmbiguous(VisEditError):
    code = "SELECTOR_AMBIGUOUS"


class MaskCoversImage(VisEditError):
    code = "MASK_COVERS_IMAGE"


class RegionFullyClipped(VisEditError):
    code = "REGION_FULLY_CLIPPED"


class DegenerateResult(VisEditError):
    code = "DEGENERATE_RESULT"


class OverlappingRegions(VisEditError):
    code = "OVERLAPPING_REGIONS"


class FullyOutOfBounds(VisEditError):
    code = "FULLY_OUT_OF_BOUNDS"


# --- numerics ---------------------------------------------------------------

class ShapeMismatch(VisEditError):
    code = "SHAPE_MISMATCH"


class TooFewElements(VisEditError):
    code = "TOO_FEW_ELEMENTS"


class DimensionMismatch(VisEditError):
    code = "DIMENSION_MISMATCH"


class InvalidRange(VisEditError):
    code = "INVALID_RANGE"


class StepOutOfRange(VisEditError):
    code = "STEP_OUT_OF_RANGE"


class NumericalDivergence(VisEditError):
    code = "NUMERICAL_DIVERGENCE"


class NonFiniteLoss(VisEditError):
    code = "NON_FINITE_LOSS"


class LengthMismatch(VisEditError):
    code = "LENGTH_MISMATCH"


# --- execution --------------------------------------------------------------

class TypeMismatch(VisEditError):
    code = "TYPE_MISMATCH"


class ProviderError(VisEditError):
    """Wraps any failure inside an operation implementation."""

    code = "PROVIDER_ERROR"

    def __init__(self, role: str, message: str, cause: Exception | None = None):
        super().__init__(f"{role}: {message}")
        self.role = role
        self.cause = cause


class InvalidOverride(VisEditError):
    code = "INVALID_OVERRIDE"


class MissingArtifact(VisEditError):
    code = "MISSING_ARTIFACT"


class ProgramComplete(VisEditError):
    code = "PROGRAM_COMPLETE"


# --- backends / wire --------------------------------------------------------

class InvalidEndpoint(VisEditError):
    code = "INVALID_ENDPOINT"


class TransportError(VisEditError):
    code = "TRANSPORT_ERROR"


class ProtocolError(VisEditError):
    code = "PROTOCOL_ERROR"


class RemoteError(VisEditError):
    code = "REMOTE_ERROR"


# --- service ----------------------------------------------------------------

class IndexOutOfRange(VisEditError):
    code = "INDEX_OUT_OF_RANGE"


class NotFound(VisEditError):
    code = "NOT_FOUND"


class NoPlanSelected(VisEditError):
    code = "NO_PLAN_SELECTED"
