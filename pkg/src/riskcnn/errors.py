"""Exception types shared across the package.

Everything raised for bad input or domain failures derives from
``RiskCnnError`` so the CLI can map it to exit code 1.
"""


class RiskCnnError(Exception):
    pass


class OvercrowdedConfigError(RiskCnnError, ValueError):
    pass


class NotOnGridError(RiskCnnError, KeyError):
    pass


class ConfigError(RiskCnnError, ValueError):
    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {message}")


class ModelFormatError(RiskCnnError, ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class ShapeMismatchError(ModelFormatError):
    pass


class TrainingDivergedError(RiskCnnError, RuntimeError):
    pass


class MissingSampleError(RiskCnnError, ValueError):
    pass
