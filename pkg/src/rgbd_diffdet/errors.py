"""Typed errors raised across the toolkit.

Every failure a caller can trigger with bad input is one of these classes, so
the CLI can report ``type(err).__name__`` and exit nonzero.
"""

from __future__ import annotations


class RgbdDiffDetError(ValueError):
    """Base class for all toolkit errors."""


# -- parsing / io -----------------------------------------------------------


class MissingKey(RgbdDiffDetError):
    def __init__(self, name: str):
        super().__init__(f"missing calibration key {name!r}")
        self.name = name


class MalformedValue(RgbdDiffDetError):
    def __init__(self, line: int, detail: str = ""):
        msg = f"malformed value on line {line}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.line = line


class WrongArity(RgbdDiffDetError):
    def __init__(self, key: str, expected: int, got: int):
        super().__init__(f"{key}: expected {expected} values, got {got}")
        self.key = key
        self.expected = expected
        self.got = got


class InvalidCalibration(RgbdDiffDetError):
    pass


class TruncatedRecord(RgbdDiffDetError):
    pass


class NonFinitePoint(RgbdDiffDetError):
    def __init__(self, index: int):
        super().__init__(f"point {index} has a non-finite coordinate")
        self.index = index


class WrongFieldCount(RgbdDiffDetError):
    def __init__(self, line: int, got: int):
        super().__init__(f"line {line}: expected 15 fields, got {got}")
        self.line = line
        self.got = got


class UnknownCategory(RgbdDiffDetError):
    def __init__(self, token: str):
        super().__init__(f"unknown category {token!r}")
        self.token = token


class DepthOutOfRange(RgbdDiffDetError):
    pass


class InvalidDepth(RgbdDiffDetError):
    pass


class MalformedHeader(RgbdDiffDetError):
    pass


# -- depth completion -------------------------------------------------------


class EmptyInput(RgbdDiffDetError):
    pass


class BadRange(RgbdDiffDetError):
    pass


# -- tensors / fusion -------------------------------------------------------


class ChannelMismatch(RgbdDiffDetError):
    pass


class DimMismatch(RgbdDiffDetError):
    pass


class SpatialMismatch(RgbdDiffDetError):
    pass


class ShapeMismatch(RgbdDiffDetError):
    pass


class InvalidTensor(RgbdDiffDetError):
    pass


# -- diffusion --------------------------------------------------------------


class BadSteps(RgbdDiffDetError):
    pass


class TooManyGt(RgbdDiffDetError):
    pass


class StepOutOfRange(RgbdDiffDetError):
    pass


class CountMismatch(RgbdDiffDetError):
    pass


class BadStepLadder(RgbdDiffDetError):
    pass


# -- losses / evaluation ----------------------------------------------------


class DegenerateBox(RgbdDiffDetError):
    pass


class NonFiniteGradient(RgbdDiffDetError):
    pass


class InvalidDetection(RgbdDiffDetError):
    pass
