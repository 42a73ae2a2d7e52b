"""Exception hierarchy shared across the arena."""

from __future__ import annotations


class ArenaError(Exception):
    """Base class for every error raised by this package."""


# simulation kernel
class SimulationError(ArenaError):
    pass


class DuplicateCallsign(SimulationError):
    pass


class UnknownCallsign(SimulationError):
    pass


class FieldOutOfRange(SimulationError, ValueError):
    pass


class TimeReversal(SimulationError):
    pass


class ParseError(ArenaError, ValueError):
    """Text could not be parsed. Carries 1-based ``line`` and ``column`` when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


# conflict engine / scoring
class EmptyLog(ArenaError):
    pass


class IncompleteSimulation(ArenaError):
    pass


# scenario generation
class GenerationExhausted(ArenaError):
    pass


# tool layer
class ToolError(ArenaError):
    """Raised by a tool; rendered back to the agent as text."""


class DurationOutOfRange(ToolError, ValueError):
    pass


class LibraryUnavailable(ToolError):
    pass


# agent runtime
class AgentError(ArenaError):
    pass


class BackendError(AgentError):
    pass


class MalformedToolCall(AgentError):
    pass


class ContextOverflow(AgentError):
    pass


class MaxIterationsExceeded(AgentError):
    pass


class ReplanLimitExceeded(AgentError):
    pass


class PlanExtractionError(AgentError):
    pass


class ReplayMismatch(ArenaError):
    pass


# experience library
class SummarizerError(ArenaError):
    pass


class QualityGateRejected(ArenaError):
    pass


class DimensionMismatch(ArenaError, ValueError):
    pass


# harness
class DatasetInvalid(ArenaError):
    pass


class ConfigInvalid(ArenaError, ValueError):
    pass


class EmptyResults(ArenaError):
    pass
