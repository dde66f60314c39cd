"""Exception hierarchy. ``exit_code`` is the CLI's category code."""


class SureError(Exception):
    exit_code = 1


class ConfigError(SureError, ValueError):
    exit_code = 2


class DatasetError(SureError, ValueError):
    exit_code = 3


class ShapeError(SureError, ValueError):
    """A tensor or model contract violated (shapes, ranges, non-finite values)."""

    exit_code = 4


class TrainingDiverged(SureError, RuntimeError):
    exit_code = 5

    def __init__(self, epoch, step, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step
        self.loss = loss


class CheckFailed(SureError, AssertionError):
    exit_code = 6
