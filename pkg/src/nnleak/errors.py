"""Exception types shared across the toolkit."""


class NnleakError(Exception):
    """Base class for all toolkit errors."""


class OutOfModelError(NnleakError, ValueError):
    """Value falls outside the supported IEEE-754 range (subnormal, inf, NaN,
    or an exponent field of 0/255 where a normalized value is required)."""


class EmptyGridError(NnleakError, ValueError):
    """Hypothesis interval excludes every candidate grid point."""


class DegeneratePredictionError(NnleakError, ValueError):
    """Correlation requested against an all-constant prediction vector."""


class MalformedTraceFileError(NnleakError, ValueError):
    """Trace container file has a bad magic, version, or truncated payload."""


class DimensionMismatchError(NnleakError, ValueError):
    """Shapes of model layers, inputs, or trace matrices do not chain."""


class ExhaustedWindowError(NnleakError, RuntimeError):
    """Monotonic time-sample window has no samples left; extraction ordering
    failed upstream."""


class ExtractionAbortError(NnleakError, RuntimeError):
    """Extraction stopped because the residual confidence fell below the
    configured bound (propagated-error abort)."""


class ConfigError(NnleakError, ValueError):
    """Invalid attack or experiment configuration."""
