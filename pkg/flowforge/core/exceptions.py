from typing import Optional

# CLI exit codes: 1 input/IO error, 2 evaluator failure
EXIT_INPUT_ERROR = 1
EXIT_EVALUATOR_ERROR = 2


class AppException(Exception):
    """Base class for application-specific exceptions."""
    def __init__(self, detail: str, error_code: Optional[str] = None, exit_code: int = EXIT_INPUT_ERROR):
        super().__init__(detail)
        self.detail = detail
        self.error_code = error_code
        self.exit_code = exit_code # Process exit status used by the CLI


# --- Sampling and parameter errors ---

class InvalidRangeError(AppException):
    """Raised when a sampling range has lo > hi."""
    def __init__(self, detail: str = "Invalid range", error_code: Optional[str] = "INVALID_RANGE"):
        super().__init__(detail, error_code)

class InvalidParamsError(AppException):
    """Raised when generator parameters violate their invariants."""
    def __init__(self, detail: str = "Invalid parameters", error_code: Optional[str] = "INVALID_PARAMS"):
        super().__init__(detail, error_code)

class InvalidConfigError(AppException):
    """Raised when a configuration file or search setting fails validation."""
    def __init__(self, detail: str = "Invalid configuration", error_code: Optional[str] = "INVALID_CONFIG"):
        super().__init__(detail, error_code)


# --- Rendering errors ---

class DegeneratePolygonError(AppException):
    """Raised when a polygon (or its resampled replacements) covers less than one pixel."""
    def __init__(self, detail: str = "Degenerate polygon", error_code: Optional[str] = "DEGENERATE_POLYGON"):
        super().__init__(detail, error_code)

class FoldUnrecoverableError(AppException):
    """Raised when no fold-free grid warp was found within the resampling budget."""
    def __init__(self, detail: str = "Grid warp folds after all resampling attempts", error_code: Optional[str] = "FOLD_UNRECOVERABLE"):
        super().__init__(detail, error_code)

class DimensionMismatchError(AppException):
    """Raised when rasters or vectors that must agree in shape do not."""
    def __init__(self, detail: str = "Dimension mismatch", error_code: Optional[str] = "DIMENSION_MISMATCH"):
        super().__init__(detail, error_code)

class EmptyPoolError(AppException):
    """Raised when the appearance pool holds no usable images."""
    def __init__(self, detail: str = "Appearance pool is empty", error_code: Optional[str] = "EMPTY_POOL"):
        super().__init__(detail, error_code)

class EmptyMaskError(AppException):
    """Raised when a mask has no foreground pixel after binarization."""
    def __init__(self, detail: str = "Mask has no foreground pixel", error_code: Optional[str] = "EMPTY_MASK"):
        super().__init__(detail, error_code)

class NoOpsEnabledError(AppException):
    """Raised when augmentations are requested but every kind is disabled."""
    def __init__(self, detail: str = "No augmentation kind is enabled", error_code: Optional[str] = "NO_OPS_ENABLED"):
        super().__init__(detail, error_code)

class SingularTransformError(AppException):
    """Raised when a spatial augmentation is not invertible."""
    def __init__(self, detail: str = "Singular augmentation transform", error_code: Optional[str] = "SINGULAR_TRANSFORM"):
        super().__init__(detail, error_code)


# --- Search errors ---

class AllCandidatesFailedError(AppException):
    """Raised when every candidate of a generation failed to evaluate."""
    def __init__(self, detail: str = "All candidates failed", error_code: Optional[str] = "ALL_CANDIDATES_FAILED"):
        super().__init__(detail, error_code, exit_code=EXIT_EVALUATOR_ERROR)

class EvaluatorUnavailableError(AppException):
    """Raised when the configured evaluator cannot be reached or started."""
    def __init__(self, detail: str = "Evaluator unavailable", error_code: Optional[str] = "EVALUATOR_UNAVAILABLE"):
        super().__init__(detail, error_code, exit_code=EXIT_EVALUATOR_ERROR)


# --- Dataset I/O errors ---

class BadMagicError(AppException):
    """Raised when a .flo stream does not start with the 202021.25 tag."""
    def __init__(self, detail: str = "Bad .flo magic number", error_code: Optional[str] = "BAD_MAGIC"):
        super().__init__(detail, error_code)

class TruncatedFileError(AppException):
    """Raised when a .flo stream ends before its declared payload."""
    def __init__(self, detail: str = "Truncated file", error_code: Optional[str] = "TRUNCATED_FILE"):
        super().__init__(detail, error_code)

class MissingFileError(AppException):
    """Raised when a dataset file listed in (or implied by) the manifest is missing."""
    def __init__(self, detail: str = "Missing file", error_code: Optional[str] = "MISSING_FILE"):
        super().__init__(detail, error_code)

class HashMismatchError(AppException):
    """Raised when a dataset was generated from different hyperparameters."""
    def __init__(self, detail: str = "Hyperparameter hash mismatch", error_code: Optional[str] = "HASH_MISMATCH"):
        super().__init__(detail, error_code)

class EmptyInputError(AppException):
    """Raised when a statistic is requested over no data."""
    def __init__(self, detail: str = "Empty input", error_code: Optional[str] = "EMPTY_INPUT"):
        super().__init__(detail, error_code)

class NotFoundError(AppException):
    """Raised when a requested resource (e.g. a sample index) does not exist."""
    def __init__(self, detail: str = "Resource not found", error_code: Optional[str] = "NOT_FOUND"):
        super().__init__(detail, error_code)
