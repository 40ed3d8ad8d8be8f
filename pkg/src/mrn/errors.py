"""Exception types shared across the package."""


class MRNError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ShapeError(MRNError, ValueError):
    """Operand shapes are incompatible with an operation."""

    exit_code = 4

    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {', '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class ResolutionError(MRNError, ValueError):
    """A resolution or depth argument is out of range."""

    exit_code = 5


class FormatError(MRNError, ValueError):
    """A binary or config file is malformed."""

    exit_code = 3


class GradientError(MRNError, ArithmeticError):
    """Gradient is missing or non-finite."""

    exit_code = 6
