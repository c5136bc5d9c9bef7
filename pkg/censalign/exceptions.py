"""Exception hierarchy shared by every censalign module."""

from typing import List, Optional, Sequence


class CensAlignError(Exception):
    """Base class for all censalign errors."""


class ConfigError(CensAlignError, ValueError):
    """Invalid configuration value."""


class DataValidationError(CensAlignError, ValueError):
    """A dataset or trajectory violates a data-model invariant."""

    def __init__(self, message: str, violations: Optional[Sequence[str]] = None):
        super().__init__(message)
        self.violations: List[str] = list(violations or [])


class ShapeError(CensAlignError, ValueError):
    """Operand shapes are incompatible."""


class LinkDomainError(CensAlignError, ValueError):
    """A value lies outside the range of the link function."""

    def __init__(self, message: str, trajectory_id: str, visit: int, dim: int):
        super().__init__(message)
        self.trajectory_id = trajectory_id
        self.visit = visit
        self.dim = dim


class RankDeficiencyError(CensAlignError, ValueError):
    """Not enough distinct abscissae (or an ill-conditioned design) for a fit."""


class NumericalError(CensAlignError, RuntimeError):
    """A NaN or infinity appeared in a computation."""

    def __init__(self, message: str, node_tag: Optional[str] = None):
        super().__init__(message)
        self.node_tag = node_tag


class TrainingDivergedError(NumericalError):
    """The training objective became NaN."""

    def __init__(self, epoch: int):
        super().__init__(f"ELBO became NaN at epoch {epoch}", node_tag="elbo")
        self.epoch = epoch


class IdentificationError(CensAlignError, RuntimeError):
    """An identification assumption is violated."""

    def __init__(self, message: str, diagnostics: Optional[Sequence[str]] = None):
        super().__init__(message)
        self.diagnostics: List[str] = list(diagnostics or [])


class DegeneratePolynomialError(CensAlignError, ValueError):
    """The polynomial is identically zero."""


class UndefinedMetricError(CensAlignError, ValueError):
    """A metric is undefined for its input (e.g. zero variance)."""
