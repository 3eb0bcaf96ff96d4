"""Exception types shared across the package."""


class SnnpkitError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(SnnpkitError, ValueError):
    """A precondition was violated: bad shape, out-of-range value, bad config."""


class NumericalError(SnnpkitError):
    """A computation produced NaN or Inf."""


class TrainingDivergedError(SnnpkitError):
    """Loss became non-finite during training."""

    def __init__(self, epoch, detail="loss became non-finite"):
        super().__init__(f"training diverged at epoch {epoch}: {detail}")
        self.epoch = epoch


class SynthesisDivergedError(SnnpkitError):
    """Loss became non-finite while optimizing a synthetic image."""


class DegenerateClassError(SnnpkitError):
    """A final-layer weight row has zero norm; class similarity is undefined."""


class DegenerateThresholdError(SnnpkitError):
    """Threshold balancing produced a non-positive firing threshold."""

    def __init__(self, layer_index, value):
        super().__init__(
            f"layer {layer_index}: computed threshold {value} is not positive"
        )
        self.layer_index = layer_index
        self.value = value


class ModelNotConvertedError(SnnpkitError):
    """An SNN operation was attempted before firing thresholds were set."""


class MissingArtifactError(SnnpkitError):
    """A pipeline stage dependency (model/dataset file) does not exist yet."""


class FileFormatError(SnnpkitError):
    """Base class for binary-format load failures; carries a byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagicError(FileFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(FileFormatError):
    """File ended before the declared payload was complete."""


class ChecksumError(FileFormatError):
    """CRC32 footer does not match the file contents."""


class LayoutError(FileFormatError):
    """Declared shapes, sizes, or field values are inconsistent."""


class RecordSizeError(FileFormatError):
    """A fixed-size record file has a size that is not a whole record count."""


class LabelRangeError(FileFormatError):
    """A class label lies outside [0, class_count)."""
