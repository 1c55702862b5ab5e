"""Exception hierarchy shared across the package."""


class FlashGlassError(Exception):
    pass


class MissingFile(FlashGlassError):
    pass


class DimensionMismatch(FlashGlassError):
    pass


class DecodeError(FlashGlassError):
    pass


class CropTooLarge(FlashGlassError):
    pass


class ShapeError(FlashGlassError):
    pass


class ConfigMismatch(FlashGlassError):
    pass


class ConfigError(FlashGlassError):
    pass


class DataError(FlashGlassError):
    pass


class MissingTarget(FlashGlassError):
    pass


class EmptyDataset(FlashGlassError):
    pass


class CheckpointError(FlashGlassError):
    pass


class ExtractorFailure(FlashGlassError):
    pass
