"""Exception hierarchy shared by every gazetat module."""


class GazeTatError(Exception):
    """Base class; the CLI turns any of these into a one-line cause and exit code 1."""


class ShapeError(GazeTatError):
    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")
        self.op = op
        self.detail = detail


class GradientError(GazeTatError):
    pass


class OrdinalError(GazeTatError):
    pass


class TeacherPoolError(GazeTatError):
    pass


class PruningError(GazeTatError):
    pass


class ReinitError(GazeTatError):
    pass


class TrainingDivergedError(GazeTatError):
    def __init__(self, message: str, dump_path=None):
        if dump_path is not None:
            message = f"{message} (state dumped to {dump_path})"
        super().__init__(message)
        self.dump_path = dump_path


class DatasetFormatError(GazeTatError):
    pass


class SequenceError(GazeTatError):
    pass


class CheckpointError(GazeTatError):
    pass


class ConfigError(GazeTatError):
    pass
