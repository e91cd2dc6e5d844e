class DataError(ValueError):
    """Raised when input data is malformed or does not match the model shape."""

    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(RuntimeError):
    """Raised when a computation produces non-finite or invalid intermediate values."""

    def __init__(self, message: str, *, stage: str | None = None) -> None:
        self.stage = stage
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(message)


class SchemaVersionError(ValueError):
    """Raised when a fitted-model file carries an unsupported schema version."""

    def __init__(self, found: str, supported: str) -> None:
        self.found = found
        self.supported = supported
        super().__init__(
            f"Unsupported model file schema version '{found}'. "
            f"This version of plso reads schema {supported}.x files; "
            "refit the model or upgrade plso."
        )
