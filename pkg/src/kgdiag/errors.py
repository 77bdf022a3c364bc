"""Exception types shared across the toolkit."""

from __future__ import annotations


class KgDiagError(Exception):
    """Base class for all toolkit errors."""


class DatasetError(KgDiagError):
    """Dataset could not be loaded (missing file, bad layout, empty file)."""


class ParseError(DatasetError):
    """A data file line did not match the expected column layout."""

    def __init__(self, path: str, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = path
        self.line_number = line_number


class UndefinedIndexError(KgDiagError):
    """Gini-form index requested on data where it is undefined (zero mean)."""


class UndefinedDensityError(KgDiagError):
    """Graph density requested on a graph with fewer than 2 entities."""


class UndersizedComponentError(KgDiagError):
    """BFS sampling could not reach the requested node count."""

    def __init__(self, requested: int, achieved: int):
        super().__init__(
            f"no start component large enough: requested {requested} nodes, "
            f"best attempt reached {achieved}"
        )
        self.requested = requested
        self.achieved = achieved


class DivergenceError(KgDiagError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch


class EmptyEvaluationError(KgDiagError):
    """Ranking metric requested on an empty rank list."""


class DegenerateDenominatorError(KgDiagError):
    """Quality index denominator is zero (dissimilar set collapsed onto target)."""


class InsufficientStratumError(KgDiagError):
    """A degree stratum holds fewer entities than the requested sample size."""

    def __init__(self, n_low: int, n_high: int, requested: int):
        super().__init__(
            f"stratum too small for sample size {requested}: "
            f"|low|={n_low}, |high|={n_high}"
        )
        self.n_low = n_low
        self.n_high = n_high
        self.requested = requested


class NoCommonEntitiesError(KgDiagError):
    """The two graphs being compared share no entities."""


class SurrogateFitError(KgDiagError):
    """Regression design is rank-deficient or produced non-finite coefficients."""


class UndefinedIndicesError(KgDiagError):
    """Sobol indices requested for a function with zero output variance."""


class UndefinedCorrelationError(KgDiagError):
    """Correlation requested on constant or too-short inputs."""
