"""Exception types raised across the package."""


class OccludetError(Exception):
    """Base class for all package errors."""


class GeometryError(OccludetError):
    """A box has non-positive extent or non-finite coordinates."""


class DegenerateBox(GeometryError):
    """An operation produced or received a box with (near-)zero area."""


class ShapeMismatch(OccludetError):
    """Array shapes are inconsistent with the architecture config."""


class SpecInfeasible(OccludetError):
    """Scene placement failed after the bounded number of attempts."""


class ParseError(OccludetError):
    """An annotation file line is malformed."""


class EmptyBatch(OccludetError):
    """A loss was requested for an empty sample set."""


class MissingBox(OccludetError):
    """A detection lacks the box required by the requested NMS mode."""


class DivergedLoss(OccludetError):
    """Training produced a non-finite total loss."""


class ConfigError(OccludetError):
    """An experiment config is invalid (unknown key, bad value, missing file)."""


class CheckpointMismatch(OccludetError):
    """A checkpoint's architecture hash does not match the requested config."""
