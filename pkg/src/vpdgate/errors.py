"""Exception hierarchy for the vpdgate engine."""


class VpdGateError(Exception):
    """Base class for all vpdgate errors."""


class ParseError(VpdGateError):
    """Malformed table input; carries a human-readable location."""

    def __init__(self, message: str, *, source: str = "", line: int | None = None,
                 field: str | None = None):
        loc = source
        if line is not None:
            loc = f"{loc}:{line}" if loc else f"line {line}"
        if field:
            loc = f"{loc} ({field})" if loc else field
        super().__init__(f"{loc}: {message}" if loc else message)
        self.source = source
        self.line = line
        self.field = field


class IntegrityError(VpdGateError):
    """Dataset violates referential or structural integrity."""


class QuerySyntaxError(VpdGateError):
    """Query text does not parse; carries the offending position."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class UnsupportedFeatureError(VpdGateError):
    """Query uses SQL outside the supported subset."""


class UnknownTableError(VpdGateError):
    pass


class UnknownColumnError(VpdGateError):
    pass


class UnknownSubjectError(VpdGateError):
    def __init__(self, name: str):
        super().__init__(f"unknown subject: {name!r}")
        self.subject = name


class UnboundContextKeyError(VpdGateError):
    def __init__(self, key: str):
        super().__init__(f"context key {key!r} is not bound in this session")
        self.key = key


class NoChainError(VpdGateError):
    """No declared foreign-key chain links the subject table to the target."""


class ScenarioError(VpdGateError):
    """Scenario step could not be applied; carries the partial event log."""

    def __init__(self, message: str, partial_log=None):
        super().__init__(message)
        self.partial_log = list(partial_log or [])
