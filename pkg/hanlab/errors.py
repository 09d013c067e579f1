# HANLAB
# ***
# Errors


class HanlabError(Exception):
    """Base class for every error raised by hanlab."""


class InvalidArgumentError(HanlabError, ValueError):
    """A caller passed a value outside an operation's contract."""


class StageFailureError(HanlabError, RuntimeError):
    """
    A training or PPU stage could not complete.

    Parameters
    ----------
    message : str
        Human readable description.
    stage : str or int, optional
        The stage that failed.
    diagnostics : dict, optional
        Last known loss values, step index and anything else useful for a post-mortem.
    """

    def __init__(self, message, stage=None, diagnostics=None):
        super().__init__(message)
        self.stage = stage
        self.diagnostics = dict(diagnostics or {})


class GateFailureError(StageFailureError):
    """A security or fidelity gate rejected the trained models."""


class FrozenWeightError(HanlabError, RuntimeError):
    """A model declared frozen was modified."""


class ContractViolationError(HanlabError, RuntimeError):
    """An information firewall or one-time-pad rule was broken."""


class DatasetMissingError(HanlabError, FileNotFoundError):
    """A dataset archive is neither cached nor downloadable."""


class CheckpointError(HanlabError, IOError):
    """A checkpoint archive is malformed or fails its integrity checks."""


class NonFiniteError(InvalidArgumentError):
    """A plaintext, key or ciphertext tensor holds NaN or infinite entries."""


class NoiseFloorError(GateFailureError, InvalidArgumentError):
    """
    The PPU noise level cannot pass the privacy gate.

    Both an invalid argument to the PPU configuration and a gate failure of the PPU
    stage, so the command line reports it with the stage-failure exit code.
    """
