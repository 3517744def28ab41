"""Exception types shared across the pipeline.

Exit-code mapping for the CLI lives in cli.py: configuration/input errors
exit with 2, pipeline stage failures with 3, anything unexpected with 4.
"""


class DefotrackError(Exception):
    """Base class for all package errors."""


class ConfigurationError(DefotrackError):
    """Inconsistent setup: dimension mismatches, bad parameter values."""


class InvalidInputError(DefotrackError):
    """A precondition on operation inputs was violated."""


class StageError(DefotrackError):
    """A pipeline stage produced no usable output."""

    def __init__(self, stage: str, message: str = ""):
        self.stage = stage
        super().__init__(f"{stage}: {message}" if message else stage)


class SegmentationError(StageError):
    pass


class ClassificationError(StageError):
    def __init__(self, message: str = ""):
        super().__init__("classification", message)


class DetectionError(StageError):
    """Anchor detection failed (too few leaves, empty mask, ...)."""

    def __init__(self, message: str = ""):
        super().__init__("anchor-detection", message)


class TopologyError(StageError):
    def __init__(self, message: str = ""):
        super().__init__("topology", message)


class GenerationError(DefotrackError):
    """Synthetic sequence generation produced an invalid scene."""
