"""Exception hierarchy shared by all modules."""


class StarguideError(Exception):
    """Base class for all package errors."""


class ConfigError(StarguideError, ValueError):
    """Invalid configuration or input parameters."""


class GeometryError(StarguideError, ValueError):
    """Invalid waveguide geometry."""


class NonConnectedDomain(GeometryError):
    pass


class ResolutionTooCoarse(GeometryError):
    pass


class MissingCutFace(GeometryError):
    pass


class NonAxisAlignedBranch(GeometryError):
    """Mode-based operations need branches aligned with the grid axes."""


class TooManyModes(StarguideError, ValueError):
    pass


class SpacingMismatch(StarguideError, ValueError):
    pass


class CapOutsideBranch(StarguideError, ValueError):
    pass


class NumericalError(StarguideError, RuntimeError):
    """Base class for numerical failures."""


class NoConvergence(NumericalError):
    pass


class ShiftHitsEigenvalue(NumericalError):
    pass


class TooLarge(StarguideError, ValueError):
    pass


class SingularOperator(NumericalError):
    pass


class FitFailed(NumericalError):
    pass


class InsufficientSamples(StarguideError, ValueError):
    pass


class DegenerateResonance(NumericalError):
    pass


class InconsistentEstimates(NumericalError):
    pass


class NotResonantError(StarguideError, ValueError):
    """Operation requires a resonant-sequence verdict."""


class NotGapVerdict(StarguideError, ValueError):
    """Operation requires a spectral-gap verdict."""


class PacketOverlap(StarguideError, ValueError):
    """Initial packet reaches into the junction region."""


class MultiChannel(StarguideError, ValueError):
    """Energy above the second transverse threshold."""


class MissingManifest(StarguideError, FileNotFoundError):
    pass
