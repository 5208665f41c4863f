"""Exception hierarchy shared across the package."""


class WavemorphError(Exception):
    """Base class for all errors raised by this package."""


class ImageError(WavemorphError):
    """Unreadable, unsupported, or malformed image file."""


class ManifestError(WavemorphError):
    """Malformed dataset manifest row or invariant violation."""


class WaveletError(WavemorphError):
    """Invalid wavelet input: empty grid, missing band, dimension mismatch."""


class CheckpointError(WavemorphError):
    """Corrupt, truncated, or incompatible checkpoint file."""


class MetricError(WavemorphError):
    """Invalid score sets or metric parameters."""
