"""Exception types. Every error carries a short machine-readable ``code``."""


class SartomoError(Exception):
    code = "E_SARTOMO"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class EmptySceneError(SartomoError, ValueError):
    code = "E_EMPTY_SCENE"


class GeometryError(SartomoError, ValueError):
    code = "E_GEOMETRY"


class InversionError(SartomoError, ValueError):
    code = "E_INVERSION"


class EmptyPointCloudError(SartomoError, ValueError):
    code = "E_EMPTY_POINT_CLOUD"


class IsoSurfaceNotFoundError(SartomoError, RuntimeError):
    code = "E_ISO_NOT_FOUND"


class EmptyLevelSetError(SartomoError, ValueError):
    code = "E_EMPTY_LEVEL_SET"


class LossError(SartomoError, FloatingPointError):
    code = "E_NONFINITE_LOSS"


class TrainingDivergedError(SartomoError, RuntimeError):
    code = "E_DIVERGED"

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good


class ConfigError(SartomoError, ValueError):
    code = "E_CONFIG"


class ArtifactError(SartomoError, OSError):
    code = "E_ARTIFACT"


class StageError(SartomoError, RuntimeError):
    """A pipeline stage failed; keeps the code of the underlying error."""

    code = "E_STAGE"

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage}: {cause}", getattr(cause, "code", None))
        self.stage = stage
        self.cause = cause
