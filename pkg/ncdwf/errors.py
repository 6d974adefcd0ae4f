"""Exceptions raised by ncdwf.

All of them derive from NcdwfError (a RuntimeError). Errors caused by bad
arguments (wrong shapes, invalid configuration) are also ValueErrors.
"""


class NcdwfError(RuntimeError):
    pass


class ShapeError(NcdwfError, ValueError):
    pass


class ConfigError(NcdwfError, ValueError):
    pass


class NumericError(NcdwfError):
    """Non-finite value produced by an operation."""


class GraphError(NcdwfError):
    pass


class CheckpointError(NcdwfError):
    pass


class SinkhornError(NcdwfError):
    pass


class InversionError(NcdwfError):
    pass


class DataError(NcdwfError):
    pass
