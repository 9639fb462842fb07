"""Exception types shared across the toolkit."""


class ShadowmarkError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(ShadowmarkError):
    """A value violates a documented invariant or precondition."""


class FormatError(ShadowmarkError):
    """A binary payload does not match the expected on-disk format."""


class ManifestParseError(ShadowmarkError):
    """A manifest line could not be parsed.

    Carries the 1-based line number of the offending entry.
    """

    def __init__(self, line_no: int, message: str):
        super().__init__(f"manifest line {line_no}: {message}")
        self.line_no = line_no


class InfeasibleAlignmentError(ShadowmarkError):
    """No monotone alignment path exists for the given shapes."""
