class DcdrError(Exception):
    code = "error"

    def __init__(self, message: str | None = None, trace: dict | None = None):
        super().__init__(message or self.code)
        self.detail = message or self.code
        self.trace = trace or {}


class InvalidPermutationError(DcdrError, ValueError):
    code = "invalid_permutation"


class IndexRangeError(DcdrError, IndexError):
    code = "out_of_range"


class InvalidArgumentError(DcdrError, ValueError):
    code = "invalid_argument"


class CapacityError(DcdrError, ValueError):
    code = "capacity"


class InconsistentEvidenceError(DcdrError):
    code = "inconsistent_evidence"


class InternalConsistencyError(DcdrError):
    code = "internal_consistency"


class InvalidMatrixError(DcdrError, ValueError):
    code = "invalid_matrix"


class NumericalError(DcdrError, ArithmeticError):
    code = "numerical"


class DataParseError(DcdrError, ValueError):
    code = "parse"

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        where = f"line {line}" if line is not None else "file"
        if column:
            where += f", column {column}"
        super().__init__(f"{where}: {message}", {"line": line, "column": column})
        self.line = line
        self.column = column


class DataIntegrityError(DcdrError, ValueError):
    code = "integrity"

    def __init__(self, message: str, line: int | None = None):
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message, {"line": line})
        self.line = line


class CheckpointError(DcdrError):
    code = "checkpoint"


class ConfigError(DcdrError):
    code = "config"
