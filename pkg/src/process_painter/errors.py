# process_painter/errors.py

# --- Exception Hierarchy ---
# Every failure the toolkit raises on purpose derives from ProcessPainterError.
# The `code` attribute is what the CLI prints in its machine-readable error record.


class ProcessPainterError(Exception):
    """Base class for all process_painter errors."""

    code = "error"

    def to_record(self):
        return {"error": self.code, "message": str(self)}


class DslSyntaxError(ProcessPainterError):
    """Raised when a DSL or instruction string does not follow the grammar."""

    code = "dsl-syntax"

    def __init__(self, position, expected, found=None):
        self.position = position
        self.expected = expected
        self.found = found
        found_text = "end of input" if found is None else repr(found)
        super().__init__(f"syntax error at position {position}: expected {expected}, found {found_text}")


class SceneValidationError(ProcessPainterError):
    """Raised when a scene graph breaks one or more invariants."""

    code = "scene-invalid"

    def __init__(self, violations):
        self.violations = list(violations)
        details = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid scene graph: {details}")


class UnresolvedKeyError(ProcessPainterError):
    """Raised when an edit op names an object that is not in the working graph."""

    code = "unresolved-key"

    def __init__(self, key):
        self.key = key
        super().__init__(f"unresolved key: {key}")


class LayoutInfeasibleError(ProcessPainterError):
    code = "layout-infeasible"


class ChainInfeasibleError(ProcessPainterError):
    code = "chain-infeasible"


class PreconditionError(ProcessPainterError):
    code = "precondition"


class MalformedImageError(ProcessPainterError):
    """Raised when a raster cell carries a shape without a color or the reverse."""

    code = "malformed-image"

    def __init__(self, row, col, message=None):
        self.row = row
        self.col = col
        super().__init__(message or f"malformed cell at ({row}, {col})")


# --- Codec errors ---
class CodecError(ProcessPainterError):
    code = "codec"


class UnbalancedTagError(CodecError):
    code = "unbalanced-tag"


class VisionBlockError(CodecError):
    code = "vision-block"


class TerminationRuleError(CodecError):
    code = "termination-rule"


class CorruptRecordError(ProcessPainterError):
    """Raised by the stats reporter when a dataset line cannot be read."""

    code = "corrupt-record"

    def __init__(self, path, index, reason):
        self.path = path
        self.index = index
        super().__init__(f"{path}: record {index}: {reason}")


class TargetInfeasibleError(ProcessPainterError):
    code = "target-infeasible"


class ConfigError(ProcessPainterError):
    code = "config"


class MathDomainError(ProcessPainterError):
    code = "math-domain"


class JudgeError(ProcessPainterError):
    code = "judge"
