"""Exception types shared across the exploration stack."""

from __future__ import annotations


class ExploreError(Exception):
    """Base class for all package errors."""


# map loading / generation
class MalformedFile(ExploreError, ValueError):
    pass


class NoTraversableCells(ExploreError, ValueError):
    pass


class InfeasibleParameters(ExploreError, ValueError):
    pass


class OutOfBounds(ExploreError, IndexError):
    pass


class OriginBlocked(ExploreError, ValueError):
    pass


# planning / navigation
class Unreachable(ExploreError):
    pass


class StartBlocked(ExploreError):
    pass


class NavigationFailed(ExploreError):
    pass


# policies
class ScriptExhausted(ExploreError):
    pass


class ParseFailure(ExploreError, ValueError):
    pass


# chat transport
class BadConfig(ExploreError, ValueError):
    pass


class TransportError(ExploreError):
    pass


class Timeout(TransportError):
    pass


# evaluation inputs
class MalformedRow(ExploreError, ValueError):
    def __init__(self, line_no: int, text: str):
        super().__init__(f"line {line_no}: cannot parse row {text!r}")
        self.line_no = line_no
        self.text = text


class EmptyFile(ExploreError, ValueError):
    pass


class DegeneratePath(ExploreError, ValueError):
    pass
