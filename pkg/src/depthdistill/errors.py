"""Exception types shared across the package."""


class DepthDistillError(Exception):
    """Base class for all package errors."""


class MissingKey(DepthDistillError):
    def __init__(self, name):
        super().__init__(f"missing key: {name}")
        self.name = name


class MalformedNumber(DepthDistillError):
    def __init__(self, line, column, token=None):
        super().__init__(f"malformed number at line {line}, column {column}: {token!r}")
        self.line = line
        self.column = column
        self.token = token


class FieldCount(DepthDistillError):
    def __init__(self, line, count):
        super().__init__(f"line {line} has {count} fields, expected at least 15")
        self.line = line
        self.count = count


class TruncatedRecord(DepthDistillError):
    pass


class ConfigInvalid(DepthDistillError):
    pass


class EmptyInput(DepthDistillError):
    pass


class DepthOutOfRange(DepthDistillError):
    pass


class ShapeMismatch(DepthDistillError):
    def __init__(self, op, got, expected):
        super().__init__(f"{op}: got shape {got}, expected {expected}")
        self.op = op
        self.got = got
        self.expected = expected


class NotScalar(DepthDistillError):
    pass


class NonFinite(DepthDistillError):
    def __init__(self, term):
        super().__init__(f"non-finite loss term: {term}")
        self.term = term


class Diverged(DepthDistillError):
    pass


class ArchMismatch(DepthDistillError):
    pass


class InsufficientData(DepthDistillError):
    pass
