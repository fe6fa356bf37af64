"""Exception and warning types shared across the package."""


class SpecError(ValueError):
    """A parameter, id list or configuration violates an operation's contract."""


class CapabilityError(RuntimeError):
    """The oracle does not support the requested scoring mode."""


class NumericalError(RuntimeError):
    """A numerical kernel failed (e.g. SVD did not converge)."""


class DegenerateError(ValueError):
    """Input is degenerate for the requested computation (e.g. all zeros)."""


class FormatError(ValueError):
    """An on-disk artifact is malformed, truncated, or has a wrong version."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; carries the last finite checkpoint."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class SquareAnchorWarning(UserWarning):
    """Equal anchor counts on both axes: the intersection block tends to be
    ill-conditioned and its pseudo-inverse can blow up small singular values."""
