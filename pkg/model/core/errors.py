class PacedError(Exception):
    pass


class NonFiniteError(PacedError, ArithmeticError):
    """A state, input, or rollout produced NaN or inf."""


class OperatingRegimeError(PacedError):
    """Roll or pitch left the small-angle regime (|angle| >= pi/2)."""


class NegativeDelayError(PacedError, ValueError):
    def __init__(self, sent_at, received_at):
        self.sent_at = sent_at
        self.received_at = received_at
        super().__init__(f"Sample received at {received_at} before it was sent at {sent_at}")


class EmptyOverlapError(PacedError, ValueError):
    pass


class EmptyLogError(PacedError, ValueError):
    pass


class ChannelClosedError(PacedError):
    pass


class ConfigError(PacedError, ValueError):
    pass


class SimulationDivergedError(PacedError):
    def __init__(self, message, time=None):
        self.time = time
        super().__init__(message)


class DecodeError(PacedError, ValueError):
    pass


class BadMagicError(DecodeError):
    pass


class BadVersionError(DecodeError):
    pass


class BadLengthError(DecodeError):
    pass


class UnknownTypeError(DecodeError):
    pass


class OversizedPayloadError(PacedError, ValueError):
    pass
