"""Exception hierarchy shared across the toolkit."""


class GlasswaveError(Exception):
    """Base class for all toolkit errors."""

    module = "glasswave"


class ValidationError(GlasswaveError, ValueError):
    """Invalid configuration or an invariant violation on input data."""


class GeometryError(ValidationError):
    module = "array-geometry"


class DegenerateGeometryError(GlasswaveError):
    module = "array-geometry"


class ShapeError(ValidationError):
    """Mismatched array shapes between cooperating objects."""


class NumericalError(GlasswaveError, ArithmeticError):
    module = "beamformer-design"


class InfeasibleBinError(NumericalError):
    def __init__(self, bin_index, message=None):
        self.bin_index = bin_index
        super().__init__(message or f"constraint infeasible at frequency bin {bin_index}")


class DesignError(GlasswaveError):
    """Designer failure for one channel of a beamformer bank."""

    module = "beamformer-design"

    def __init__(self, channel, cause):
        self.channel = channel
        self.cause = cause
        super().__init__(f"bank channel {channel}: {cause}")


class RoomError(ValidationError):
    module = "room-sim"


class PlacementError(GlasswaveError):
    module = "scene-synth"


class AssetError(GlasswaveError):
    module = "scene-synth"


class RefinementError(GlasswaveError):
    module = "separation"

    def __init__(self, iteration, message):
        self.iteration = iteration
        super().__init__(f"iteration {iteration}: {message}")
