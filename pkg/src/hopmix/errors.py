"""Exception hierarchy.

CLI exit codes map onto these: data errors (``HopmixError`` except
``TrainingError``) exit 2, ``TrainingError`` exits 3.
"""


class HopmixError(Exception):
    pass


class ValidationError(HopmixError, ValueError):
    """Input violates a documented precondition or invariant."""


class SchemaError(ValidationError):
    """A JSON Lines record is malformed or misses a required field."""


class LabelError(ValidationError):
    """Distant supervision could not produce usable labels."""


class FormatError(HopmixError):
    """Binary file has a bad magic, version or inconsistent sizes."""


class TruncatedFileError(FormatError, OSError):
    pass


class EmbeddingKeyError(HopmixError, KeyError):
    def __init__(self, key):
        super().__init__(key)
        self.key = key

    def __str__(self):
        return f"no embedding for key {self.key!r}"


class StateError(HopmixError, RuntimeError):
    pass


class TrainingError(HopmixError, ArithmeticError):
    pass
