"""Exception types shared across the simulator."""


class ConfigurationError(ValueError):
    """A knob or builder argument is outside its valid range."""


class StructureError(ValueError):
    """Two parameter vectors (or a vector and a model) do not line up."""

    def __init__(self, message: str, segment: str | None = None):
        super().__init__(message)
        self.segment = segment


class DivergedError(RuntimeError):
    """Local training produced a non-finite loss."""

    def __init__(self, message: str, round_index: int | None = None, client_id: int | None = None):
        super().__init__(message)
        self.round_index = round_index
        self.client_id = client_id


class DatasetIOError(OSError):
    """A dataset file could not be parsed."""


class DatasetValidationError(ValueError):
    """A dataset parsed but its contents are invalid (e.g. label out of range)."""


class ChartError(ValueError):
    """Chart rendering could not proceed."""
