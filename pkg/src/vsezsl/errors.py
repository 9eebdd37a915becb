"""Exception types shared across the package."""


class FormatError(ValueError):
    """A file does not follow the expected binary/text layout."""


class TruncatedFileError(FormatError):
    """A binary file ends before its header says it should."""


class DatasetError(ValueError):
    """A dataset directory fails validation."""


class ConfigError(ValueError):
    """A configuration is inconsistent or refers to unknown options."""


class TrainingAborted(RuntimeError):
    """Training hit a non-finite loss or another unrecoverable state."""

    def __init__(self, message, epoch=None, dump=None):
        super().__init__(message)
        self.epoch = epoch
        self.dump = dump


class CoverageError(ValueError):
    """A codebook does not cover every class the protocol needs."""

    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"codebook is missing classes: {self.missing}")
