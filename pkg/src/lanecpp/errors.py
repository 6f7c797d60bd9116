"""Exception types shared across the package."""


class LaneCppError(Exception):
    """Base class for all errors raised by this package."""


class InvalidConfigError(LaneCppError, ValueError):
    """A configuration value violates its documented constraints."""


class DomainError(LaneCppError, ValueError):
    """A curve argument lies outside the valid parameter domain [0, 1]."""


class DegenerateGeometryError(LaneCppError):
    """A geometric quantity (tangent, normal, arc step) is too close to zero."""


class InvalidInputError(LaneCppError, ValueError):
    """Runtime input data violates a precondition (shape, emptiness, normalization)."""


class SceneFormatError(InvalidInputError):
    """A scene/report file does not follow the expected JSON schema."""


class DivergenceError(LaneCppError):
    """Optimization diverged."""

    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"loss diverged at step {step} (loss={loss:.3e})")


class NumericalError(LaneCppError):
    """A loss term produced a non-finite value."""

    def __init__(self, term: str, value: float):
        self.term = term
        self.value = value
        super().__init__(f"non-finite value in loss term '{term}' ({value})")
