# app/core/errors.py


class NCAError(Exception):
    """Base class for every error raised by the package."""


class FormatError(NCAError):
    """Input bytes or text do not follow the expected layout."""


class ValidityError(NCAError):
    """Input parses but violates a domain invariant."""


class ShapeFormatError(FormatError):
    pass


class ShapeValidityError(ValidityError):
    pass


class WeightFormatError(FormatError):
    pass


class WeightValidityError(ValidityError):
    pass


class CalibrationError(NCAError):
    pass


class ShapeRefError(NCAError):
    """Unknown catalog reference or unreadable shape path."""


class UpdateCapError(NCAError):
    """A tile was asked to update past its firmware update cap."""


class TrainingDivergedError(NCAError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at iteration {iteration}")
        self.iteration = iteration
        self.loss = loss
