"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


class BlowUpError(FloatingPointError):
    """Non-finite state encountered during time stepping."""

    def __init__(self, message, step=None, time=None, member=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.member = member

    def __str__(self):
        parts = [super().__str__()]
        if self.step is not None:
            parts.append(f"step={self.step}")
        if self.time is not None:
            parts.append(f"t={self.time:.6g}")
        if self.member is not None:
            parts.append(f"member={self.member}")
        return " ".join(parts)


class DegeneratePosterior(RuntimeError):
    """All log-weights are -inf: the data is incompatible with every member."""


class CriterionFailed(AssertionError):
    pass
