"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class HEError(Exception):
    exit_code = 2


class UsageError(HEError):
    exit_code = 1


class ParameterError(HEError, ValueError):
    exit_code = 1


class CapacityError(HEError, ValueError):
    pass


class LayoutError(HEError, ValueError):
    pass


class KeyMismatchError(HEError):
    pass


class IncompatibleError(HEError, ValueError):
    pass


class FormatError(HEError, ValueError):
    pass


class CorruptCiphertextError(FormatError):
    pass


class LevelExhaustedError(HEError):
    """A multiplication was requested on a ciphertext with no level left.

    Signals that a bootstrap is required before the operation.
    """

    exit_code = 4

    def __init__(self, op: str, level: int, required: int):
        self.op = op
        self.level = level
        self.required = required
        super().__init__(f"{op}: level {level} < required {required} (bootstrap required)")


class DepthBudgetError(LevelExhaustedError):
    """Raised by the depth audit when a train step cannot fit in the level budget."""

    def __init__(self, required: int, budget: int):
        self.budget = budget
        HEError.__init__(self, f"one train step needs level budget {required}, have {budget}")
        self.op = "depth-audit"
        self.level = budget
        self.required = required


class DataError(HEError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, path, line: int, msg: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {msg}")


class SchemaError(DataError):
    pass


class SamplingError(DataError):
    pass


class PartitionError(DataError):
    pass


class ProtocolError(HEError):
    exit_code = 3


class WorkerTimeoutError(ProtocolError):
    def __init__(self, worker: str, deadline: float):
        self.worker = worker
        self.deadline = deadline
        super().__init__(f"worker {worker} did not reply within {deadline:g} s")
