"""Exception hierarchy for the amenity space pipeline."""
from typing import List, Optional


class AmenitySpaceError(Exception):
    """Base class for every error the pipeline reports to the user."""

    error_code = "amenity_space_error"

    def to_dict(self) -> dict:
        return {"error_code": self.error_code, "detail": str(self)}


class InvalidInputError(AmenitySpaceError, ValueError):
    error_code = "invalid_input"


class MissingKeyError(AmenitySpaceError, KeyError):
    error_code = "missing_key"

    def __init__(self, key: str, what: str = "key"):
        self.key = key
        self.what = what
        super().__init__(f"Unknown {what}: {key}")

    def __str__(self) -> str:
        # KeyError would otherwise repr() the message
        return f"Unknown {self.what}: {self.key}"

    def to_dict(self) -> dict:
        return {"error_code": self.error_code, "detail": str(self), "key": self.key}


class SchemaError(AmenitySpaceError, ValueError):
    error_code = "schema_error"

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[str] = None
    ):
        self.path = path
        self.line = line
        self.column = column
        location = []
        if path:
            location.append(f"file {path}")
        if line is not None:
            location.append(f"line {line}")
        if column:
            location.append(f"column '{column}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")

    def to_dict(self) -> dict:
        return {
            "error_code": self.error_code,
            "detail": str(self),
            "path": self.path,
            "line": self.line,
            "column": self.column,
        }


class DegenerateSampleError(InvalidInputError):
    error_code = "degenerate_sample"

    def __init__(self, variable: str, sample: str = "panel"):
        self.variable = variable
        super().__init__(f"Variable '{variable}' has zero variance in sample '{sample}'")


class ConvergenceError(AmenitySpaceError, RuntimeError):
    error_code = "convergence_error"

    def __init__(self, message: str, last_delta: float, iterations: int):
        self.last_delta = last_delta
        self.iterations = iterations
        super().__init__(f"{message} (last delta {last_delta:.3e} after {iterations} iterations)")

    def to_dict(self) -> dict:
        return {
            "error_code": self.error_code,
            "detail": str(self),
            "last_delta": self.last_delta,
            "iterations": self.iterations,
        }


class RankDeficiencyError(AmenitySpaceError, ValueError):
    error_code = "rank_deficiency"

    def __init__(self, dependent_columns: List[str]):
        self.dependent_columns = list(dependent_columns)
        super().__init__(
            f"Design matrix is rank deficient; linearly dependent columns: {', '.join(self.dependent_columns)}"
        )

    def to_dict(self) -> dict:
        return {
            "error_code": self.error_code,
            "detail": str(self),
            "dependent_columns": self.dependent_columns,
        }


class SpecError(AmenitySpaceError, ValueError):
    error_code = "spec_error"

    def __init__(self, message: str, available: Optional[List[str]] = None):
        self.available = list(available or [])
        if self.available:
            message = f"{message}. Available specs: {', '.join(self.available)}"
        super().__init__(message)

    def to_dict(self) -> dict:
        return {"error_code": self.error_code, "detail": str(self), "available": self.available}


class ConfigError(AmenitySpaceError, ValueError):
    error_code = "config_error"

    def __init__(self, parameter: str, message: str):
        self.parameter = parameter
        super().__init__(f"Invalid parameter '{parameter}': {message}")

    def to_dict(self) -> dict:
        return {"error_code": self.error_code, "detail": str(self), "parameter": self.parameter}
