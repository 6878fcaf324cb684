"""Exception hierarchy shared across the package.

CLI exit-code mapping lives in cli.main: usage/config errors exit 2,
data-format errors exit 3, numeric/training errors exit 4.
"""

from __future__ import annotations


class EnvgnnError(Exception):
    """Base class for all package errors."""


class ArgumentError(EnvgnnError, ValueError):
    """A caller-supplied argument is invalid."""


class ShapeError(ArgumentError):
    """Array shapes are inconsistent with the operation's contract."""


class StateError(EnvgnnError):
    """An object was used out of order (e.g. backward called twice)."""


class NumericError(EnvgnnError):
    """Non-finite values or out-of-domain numerics were encountered."""


class ChemistryError(EnvgnnError):
    """A molecular constraint (valence conservation) was violated.

    Carries the offending node index when known.
    """

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class SmilesParseError(EnvgnnError):
    """Malformed SMILES-subset input. Carries the byte offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class DataFormatError(EnvgnnError):
    """A data file (TU directory, record file, fragment library) is malformed."""


class CheckpointError(EnvgnnError):
    """A checkpoint file failed validation (magic, version or checksum)."""


class ConfigError(EnvgnnError):
    """A configuration file or key is invalid."""


class TrainingError(EnvgnnError):
    """Training diverged. Carries the epoch where it happened."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class MetricError(EnvgnnError):
    """A metric is undefined for the given inputs."""
