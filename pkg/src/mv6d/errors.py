"""Exception types shared across the estimation pipeline."""


class Mv6dError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveDepth(Mv6dError):
    """Point is behind or on the camera plane (z <= 0)."""


class InvalidOrder(Mv6dError):
    """Symmetry group order must be a positive integer."""


class DegenerateBox(Mv6dError):
    """Bounding box too small to derive a depth guess."""


class Underdetermined(Mv6dError):
    """Not enough independent views to constrain the translation."""


class Diverged(Mv6dError):
    """Iterative refinement increased the cost repeatedly."""


class EmptyState(Mv6dError):
    """Mixture state has no components yet."""


class NotReady(Mv6dError):
    """Tracked object has no usable pose estimate yet."""


class EmptyResults(Mv6dError):
    """Cannot aggregate an empty result list."""


class ProjectionOutOfImage(Mv6dError):
    """An object center falls outside the image for some viewpoint."""


class ConfigError(Mv6dError):
    """Experiment configuration is malformed or contains unknown keys."""


class UnknownParameter(ConfigError):
    """Sweep grid references a parameter outside the config schema."""
