"""Exception types shared across the workcell framework."""


class WorkcellError(Exception):
    """Base class for all framework errors."""


class DimensionError(WorkcellError):
    """A vector or matrix argument has the wrong number of entries."""


class SingularityError(WorkcellError):
    """Undamped velocity IK hit a singular Jacobian."""


class BehindCameraError(WorkcellError):
    """Point to project has non-positive camera-frame depth."""


class InvalidDepthError(WorkcellError):
    """Deprojection requested with depth <= 0."""


class FramingError(WorkcellError):
    """Wire stream lost framing (bad magic); the connection must be dropped."""


class ProtocolError(WorkcellError):
    """Well-framed but invalid protocol traffic (unknown kind, bad order)."""


class ValidationError(WorkcellError):
    """Configuration document violates the schema or semantic rules.

    `violations` carries every problem found, not just the first.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class StartupError(WorkcellError):
    """A workcell could not be brought up (missing file, port in use)."""


class CalibrationError(WorkcellError):
    """A camera id has no calibration entry."""


class NoTargetError(WorkcellError):
    """Block localization found too few points above the table."""


class StateGapError(WorkcellError):
    """No robot state close enough to a frame timestamp; episode aborted."""


class FormatError(WorkcellError):
    """Episode file has a bad magic or unsupported version."""


class CorruptEpisodeError(WorkcellError):
    """Episode file lengths or counts are inconsistent."""


class WriteError(WorkcellError):
    """Episode write failed; partial output has been removed."""
