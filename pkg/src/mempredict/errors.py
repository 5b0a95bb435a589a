"""Exception hierarchy shared by all modules."""


class MemPredictError(Exception):
    pass


class TraceError(MemPredictError):
    pass


class MalformedLine(TraceError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {detail}" if detail else f"line {line_no}")


class InvariantViolation(TraceError):
    def __init__(self, job_id: str, field: str):
        self.job_id = job_id
        self.field = field
        super().__init__(f"job {job_id!r}: invalid {field}")


class DuplicateJobId(TraceError):
    def __init__(self, job_id: str):
        self.job_id = job_id
        super().__init__(f"duplicate job id {job_id!r}")


class InvalidConfig(MemPredictError):
    pass


class EmptyTrainingSet(MemPredictError):
    pass


class EmptyInput(MemPredictError, ValueError):
    pass


class LengthMismatch(MemPredictError, ValueError):
    pass


class WidthMismatch(MemPredictError, ValueError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"expected row width {expected}, got {got}")


class MissingLabel(MemPredictError):
    def __init__(self, job_id: str):
        self.job_id = job_id
        super().__init__(f"job {job_id!r} has no memory label (not finished)")


class NotAPartition(MemPredictError, ValueError):
    pass


class ShortWindow(MemPredictError):
    def __init__(self, size: int, needed: int):
        self.size = size
        self.needed = needed
        super().__init__(f"window holds {size} jobs, {needed} needed")


class TraceTooShort(MemPredictError):
    def __init__(self, needed: int, got: int):
        self.needed = needed
        self.got = got
        super().__init__(f"trace too short: need {needed} jobs, got {got}")


class StoreError(MemPredictError):
    pass


class StoreCorrupt(StoreError):
    pass


class VersionMismatch(StoreError):
    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"model store schema version {found}, expected {expected}")


class NotFound(StoreError):
    pass
