"""Exception types shared across the package."""


class EdgefieldError(Exception):
    """Base class for all package errors."""


class InvalidPrimitiveError(EdgefieldError):
    """A Gaussian primitive violates its invariants (non-finite fields, bad ranges)."""


class DegenerateSceneError(EdgefieldError):
    """Scene generation produced a scene no camera can usefully observe."""


class MissingTapeError(EdgefieldError):
    """A backward pass was requested on a frame rendered without contributor records."""


class InvalidDepthError(EdgefieldError):
    """Ray query construction received a non-positive mean boundary depth."""


class PipelineError(EdgefieldError):
    """Refinement aborted; carries the iteration and the offending loss term."""

    def __init__(self, message, iteration=None, term=None):
        super().__init__(message)
        self.iteration = iteration
        self.term = term
