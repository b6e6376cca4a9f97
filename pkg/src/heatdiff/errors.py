"""Exception hierarchy shared across the package."""


class HeatdiffError(Exception):
    """Base class for all package errors."""


class DimensionError(HeatdiffError):
    """Raster or tensor dimensions are unusable (zero-sized, negative)."""


class ConfigError(HeatdiffError):
    """Invalid configuration value or combination."""


class FormatError(HeatdiffError):
    """On-disk container is malformed; message names the offending component."""


class AlignmentError(HeatdiffError):
    """Rasters that must share a grid do not."""


class ShapeError(HeatdiffError):
    """Tensor operator received incompatible shapes."""


class TrainingError(HeatdiffError):
    """Training aborted (non-finite loss or gradients)."""


class MetricError(HeatdiffError):
    """Metric undefined for the given inputs."""


class ContractError(HeatdiffError):
    """Caller violated an operation contract (missing band, unnormalized input)."""


class EditError(HeatdiffError):
    """Land-cover edit geometry is invalid for the target scene."""


class InpaintError(HeatdiffError):
    """Inpainting is undefined for the given mask."""


class StateError(HeatdiffError):
    """Object used before reaching the required state (e.g. unfitted model)."""


class RejectionError(HeatdiffError):
    """Sample rejected by a corpus acceptance policy."""
