"""Exception hierarchy shared by the library and the command line."""


class RelpruneError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ShapeMismatchError(RelpruneError, ValueError):
    def __init__(self, message, layer_index=None):
        super().__init__(message)
        self.layer_index = layer_index


class MissingTraceError(RelpruneError, ValueError):
    pass


class UnknownUnitError(RelpruneError, ValueError):
    def __init__(self, units):
        units = sorted(units)
        super().__init__(f"unknown prunable units: {units}")
        self.units = units


class TrainingDivergedError(RelpruneError, RuntimeError):
    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ConfigError(RelpruneError, ValueError):
    exit_code = 2


class DataError(RelpruneError, ValueError):
    exit_code = 3


class FormatVersionError(RelpruneError, ValueError):
    """Unreadable or unsupported checkpoint header."""

    exit_code = 4
