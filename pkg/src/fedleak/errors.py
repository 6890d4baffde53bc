"""Exception hierarchy shared by the solvers, simulators and attacks."""


class FedLeakError(Exception):
    """Base class for every error raised by this package."""


class RecoveryError(FedLeakError, ValueError):
    pass


class InsufficientRowsError(RecoveryError):
    pass


class NotPositiveDefiniteError(RecoveryError):
    pass


class AsymmetricInputError(RecoveryError):
    pass


class RankDeficiencyError(RecoveryError):
    def __init__(self, step: int, rank: int, unknowns: int, row: int | None = None):
        self.step = step
        self.rank = rank
        self.unknowns = unknowns
        self.row = row
        super().__init__(
            f"rank deficiency at step {step}: coefficient matrix rank {rank} "
            f"leaves {unknowns - rank} free directions among {unknowns} unknowns"
        )


class InconsistentKnownsError(RecoveryError):
    pass


class ProtocolError(FedLeakError, ValueError):
    pass


class DivergenceError(ProtocolError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"non-finite intermediate value at iteration {iteration}")


class SealedPayloadError(FedLeakError, PermissionError):
    pass


class AttackError(FedLeakError, ValueError):
    pass


class RankDeficientTranscriptError(AttackError):
    pass


class SigmoidRangeError(AttackError):
    pass


class InsufficientDataError(AttackError):
    pass


class DegenerateTranscriptError(InsufficientDataError):
    pass


class OracleError(AttackError):
    pass


class NoJumpFoundError(AttackError):
    pass


class ConfigError(FedLeakError, ValueError):
    pass


class DatasetError(FedLeakError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
