from typing import Any, Optional, Dict, List


class AppException(Exception):
    """Base exception for the application."""

    def __init__(
        self,
        exit_code: int,
        code: str,
        message: str,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.exit_code = exit_code
        self.code = code
        self.message = message
        self.details = details
        super().__init__(message)

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code, "message": self.message, "details": self.details}


class ConfigError(AppException):
    """Run-config validation error. Collects every problem found in one pass."""

    def __init__(self, message: str = "Invalid run config", errors: Optional[List[str]] = None):
        super().__init__(
            exit_code=2,
            code="CONFIG_ERROR",
            message=message,
            details={"errors": list(errors or [])},
        )
        self.errors = list(errors or [])


class DataError(AppException):
    """Dataset ingestion or invariant violation; shares exit code 2 with
    config errors as invalid input."""

    def __init__(self, message: str = "Invalid dataset", details: Optional[Dict[str, Any]] = None):
        super().__init__(
            exit_code=2,
            code="DATA_ERROR",
            message=message,
            details=details,
        )


class FormulaError(AppException):
    """Formula syntax or binding error."""

    def __init__(
        self,
        message: str = "Invalid formula",
        position: Optional[int] = None,
        formula: Optional[str] = None,
    ):
        super().__init__(
            exit_code=2,
            code="FORMULA_ERROR",
            message=message,
            details={"position": position, "formula": formula},
        )
        self.position = position


class ModelFitError(AppException):
    """Model fitting failed."""

    def __init__(
        self,
        message: str = "Model fit failed",
        code: str = "MODEL_FIT_ERROR",
        details: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(
            exit_code=3,
            code=code,
            message=message,
            details=details,
        )


class RankDeficiencyError(ModelFitError):
    """Design matrix is not of full column rank on the weighted sample."""

    def __init__(self, columns: List[str], formula: Optional[str] = None):
        super().__init__(
            message=f"Design matrix is rank deficient; collinear columns: {', '.join(columns)}",
            code="RANK_DEFICIENT",
            details={"columns": columns, "formula": formula},
        )
        self.columns = columns


class SeparationError(ModelFitError):
    """Logit coefficients diverge (complete or quasi-complete separation)."""

    def __init__(self, max_abs_coef: float, formula: Optional[str] = None):
        super().__init__(
            message=f"Separation detected: max |coefficient| = {max_abs_coef:.3g}",
            code="SEPARATION",
            details={"max_abs_coef": max_abs_coef, "formula": formula},
        )


class ConvergenceError(ModelFitError):
    """IRLS did not converge within the iteration cap."""

    def __init__(self, iterations: int, formula: Optional[str] = None):
        super().__init__(
            message=f"IRLS did not converge in {iterations} iterations",
            code="NO_CONVERGENCE",
            details={"iterations": iterations, "formula": formula},
        )


class EstimationError(AppException):
    """Estimator-level failure."""

    def __init__(self, message: str = "Estimation failed", details: Optional[Dict[str, Any]] = None):
        super().__init__(
            exit_code=3,
            code="ESTIMATION_ERROR",
            message=message,
            details=details,
        )


class ReportIOError(AppException):
    """Input could not be read or output could not be written."""

    def __init__(self, message: str = "I/O error", path: Optional[str] = None):
        super().__init__(
            exit_code=4,
            code="IO_ERROR",
            message=message,
            details={"path": path},
        )
