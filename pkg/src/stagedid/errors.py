"""Exception hierarchy shared across the package."""

from __future__ import annotations


class StageDiDError(ValueError):
    """Base class for every error raised by this package."""


# panel construction / ingestion
class PanelError(StageDiDError):
    """Invalid panel input. ``problems`` lists every violation found."""

    def __init__(self, message: str, problems: list[str] | None = None):
        super().__init__(message)
        self.problems = problems if problems is not None else [message]


class DuplicateKey(PanelError):
    pass


class NoUntreatedObservations(PanelError):
    pass


class EmptyCohort(PanelError):
    pass


class NonAbsorbingTreatment(PanelError):
    pass


class ParseError(PanelError):
    """CSV could not be parsed; carries the 1-based ``row`` and ``column``."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        loc = []
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        full = f"{', '.join(loc)}: {message}" if loc else message
        super().__init__(full)
        self.row = row
        self.column = column


# regression engine
class RankDeficient(StageDiDError):
    def __init__(self, message: str, columns: list[str] | None = None):
        super().__init__(message)
        self.columns = columns or []


class EmptySample(StageDiDError):
    pass


class UnbalancedPanel(StageDiDError):
    pass


class TooFewClusters(StageDiDError):
    pass


# estimators
class UnidentifiedFixedEffect(StageDiDError):
    pass


class EmptyBin(StageDiDError):
    pass


class WindowUnavailable(StageDiDError):
    def __init__(self, message: str, cohort=None):
        super().__init__(message)
        self.cohort = cohort


# gmm
class Unidentified(StageDiDError):
    def __init__(self, message: str, parameters: list[str] | None = None):
        super().__init__(message)
        self.parameters = parameters or []


class SingularSystem(StageDiDError):
    pass


# diagnostics
class NoTreatedCells(StageDiDError):
    pass


class MissingCell(StageDiDError):
    pass


class DegenerateDataset(StageDiDError):
    pass


# simulation
class ConfigError(StageDiDError):
    pass
