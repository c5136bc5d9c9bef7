"""
Data model for censored multivariate time-series.

A Trajectory stores its values and an explicit observed/missing mask; missing
cells carry an arbitrary stored value that no computation reads.
"""

from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from censalign.exceptions import DataValidationError
from censalign.schemas import LinkSpec


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One series: observation times, M x D values and the observed mask."""

    id: str
    times: np.ndarray
    values: np.ndarray
    observed: np.ndarray
    true_subtype: Optional[int] = None
    true_delta: Optional[float] = None
    censor_shift: float = 0.0

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        values = np.array(self.values, dtype=float)
        observed = np.array(self.observed, dtype=bool)
        if values.ndim == 1:
            values = values.reshape(len(times), -1) if len(times) else values.reshape(0, 0)
        if observed.shape != values.shape and observed.size == values.size:
            observed = observed.reshape(values.shape)
        if observed.shape != values.shape:
            raise DataValidationError(
                f"{self.id}: observed mask shape {observed.shape} "
                f"does not match values shape {values.shape}"
            )
        # missing cells are zeroed so stored junk never leaks into arithmetic
        values = np.where(observed, values, 0.0)
        object.__setattr__(self, "times", _frozen(times))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "observed", _frozen(observed))

    @classmethod
    def from_rows(
        cls,
        id: str,
        times: Sequence[float],
        rows: Sequence[Sequence[Optional[float]]],
        true_subtype: Optional[int] = None,
        true_delta: Optional[float] = None,
        censor_shift: float = 0.0,
    ) -> "Trajectory":
        """Build a trajectory from rows where None marks a missing cell."""
        widths = {len(row) for row in rows}
        if len(widths) > 1:
            raise DataValidationError(f"{id}: ragged value rows (widths {sorted(widths)})")
        width = widths.pop() if widths else 0
        values = np.zeros((len(rows), width))
        observed = np.zeros((len(rows), width), dtype=bool)
        for m, row in enumerate(rows):
            for d, cell in enumerate(row):
                if cell is not None:
                    values[m, d] = float(cell)
                    observed[m, d] = True
        return cls(
            id=id,
            times=np.asarray(times, dtype=float),
            values=values,
            observed=observed,
            true_subtype=true_subtype,
            true_delta=true_delta,
            censor_shift=censor_shift,
        )

    @property
    def n_visits(self) -> int:
        return len(self.times)

    @property
    def dim(self) -> int:
        return self.values.shape[1] if self.values.ndim == 2 else 0

    @property
    def n_observed(self) -> int:
        return int(self.observed.sum())

    @property
    def stage(self) -> Optional[float]:
        """True delay of the first visit, including any front-censoring shift."""
        if self.true_delta is None:
            return None
        return self.true_delta + self.censor_shift

    def rows(self) -> List[List[Optional[float]]]:
        return [
            [float(v) if o else None for v, o in zip(vals, obs)]
            for vals, obs in zip(self.values, self.observed)
        ]

    def select_visits(self, keep: np.ndarray, shift: float = 0.0) -> "Trajectory":
        """Copy keeping the visits flagged in ``keep``, subtracting ``shift`` from times."""
        return replace(
            self,
            times=self.times[keep] - shift,
            values=self.values[keep],
            observed=self.observed[keep],
            censor_shift=self.censor_shift + shift,
        )

    def equals(self, other: "Trajectory", atol: float = 0.0) -> bool:
        """Field-wise comparison; reals within ``atol``."""

        def close(a, b):
            if a is None or b is None:
                return a is b
            return abs(a - b) <= atol

        return (
            self.id == other.id
            and self.times.shape == other.times.shape
            and self.values.shape == other.values.shape
            and np.array_equal(self.observed, other.observed)
            and np.allclose(self.times, other.times, rtol=0.0, atol=atol)
            and np.allclose(
                self.values[self.observed],
                other.values[other.observed],
                rtol=0.0,
                atol=atol,
            )
            and self.true_subtype == other.true_subtype
            and close(self.true_delta, other.true_delta)
            and close(self.censor_shift, other.censor_shift)
        )


@dataclass(frozen=True, eq=False)
class Dataset:
    """A collection of trajectories sharing dimensionality and link."""

    trajectories: Tuple[Trajectory, ...]
    dim: int
    link: LinkSpec = field(default_factory=LinkSpec)
    provenance: str = ""
    n_subtypes: Optional[int] = None  # K, when the source declares it

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def ids(self) -> List[str]:
        return [t.id for t in self.trajectories]

    def subset(self, ids: Iterable[str]) -> "Dataset":
        """Trajectories whose id is in ``ids``, in dataset order."""
        wanted = set(ids)
        missing = wanted - set(self.ids)
        if missing:
            raise DataValidationError(f"Unknown trajectory ids: {sorted(missing)[:5]}")
        return self.with_trajectories(
            [t for t in self.trajectories if t.id in wanted]
        )

    def with_trajectories(
        self, trajectories: Iterable[Trajectory], note: Optional[str] = None
    ) -> "Dataset":
        provenance = self.provenance if note is None else f"{self.provenance}; {note}"
        return replace(self, trajectories=tuple(trajectories), provenance=provenance)

    def equals(self, other: "Dataset", atol: float = 0.0) -> bool:
        return (
            self.dim == other.dim
            and self.link == other.link
            and len(self) == len(other)
            and all(a.equals(b, atol) for a, b in zip(self, other))
        )


def validate(dataset: Dataset) -> List[str]:
    """
    Check every data-model invariant.

    Returns:
        One "<trajectory id>: <rule>" string per violation; empty iff valid.
    """
    violations: List[str] = []
    seen = set()
    for traj in dataset.trajectories:
        tid = traj.id
        if tid in seen:
            violations.append(f"{tid}: duplicate id")
        seen.add(tid)

        times = traj.times
        if len(times) == 0:
            violations.append(f"{tid}: empty trajectory")
        if not np.all(np.isfinite(times)):
            violations.append(f"{tid}: non-finite times")
        elif np.any(times < 0):
            violations.append(f"{tid}: negative times")
        if len(times) > 1 and np.any(np.diff(times) <= 0):
            violations.append(f"{tid}: non-increasing times")

        if traj.values.shape[0] != len(times):
            violations.append(
                f"{tid}: {traj.values.shape[0]} value rows for {len(times)} times"
            )
        if traj.values.shape[0] and traj.dim != dataset.dim:
            violations.append(f"{tid}: row width {traj.dim} != dim {dataset.dim}")
        if traj.n_observed == 0:
            violations.append(f"{tid}: no observed values")
        elif not np.all(np.isfinite(traj.values[traj.observed])):
            violations.append(f"{tid}: non-finite observed values")

        if traj.true_subtype is not None and traj.true_subtype < 0:
            violations.append(f"{tid}: negative true_subtype")
        elif (
            traj.true_subtype is not None
            and dataset.n_subtypes is not None
            and traj.true_subtype >= dataset.n_subtypes
        ):
            violations.append(
                f"{tid}: true_subtype {traj.true_subtype} >= K={dataset.n_subtypes}"
            )
        if traj.true_delta is not None and not traj.true_delta >= 0:
            violations.append(f"{tid}: true_delta must be >= 0")
        if not traj.censor_shift >= 0:
            violations.append(f"{tid}: censor_shift must be >= 0")
    return violations


def require_valid(dataset: Dataset) -> Dataset:
    """Raise DataValidationError listing every violation, else return the dataset."""
    violations = validate(dataset)
    if violations:
        preview = "; ".join(violations[:5])
        raise DataValidationError(
            f"{len(violations)} data violations: {preview}", violations
        )
    return dataset


def reverse_time(dataset: Dataset) -> Dataset:
    """
    Reverse every trajectory in time so right censoring becomes left censoring.

    Times (x_1..x_M) become (x_M - x_M, ..., x_M - x_1) and value rows are
    reversed; applying the operation twice is the identity.
    """
    reversed_trajectories = []
    for traj in dataset.trajectories:
        last = traj.times[-1] if len(traj.times) else 0.0
        reversed_trajectories.append(
            replace(
                traj,
                times=last - traj.times[::-1],
                values=traj.values[::-1],
                observed=traj.observed[::-1],
            )
        )
    return replace(dataset, trajectories=tuple(reversed_trajectories))


def encoder_inputs(traj: Trajectory, fill_value: float = 0.5) -> np.ndarray:
    """
    Per-visit encoder features [x_m, y~_m].

    Missing cells are linearly interpolated per dimension over that
    dimension's observed visits; leading and trailing gaps take the nearest
    observed value and a dimension with no observation is filled with
    ``fill_value``.
    """
    filled = np.full(traj.values.shape, fill_value, dtype=float)
    for d in range(traj.dim):
        present = traj.observed[:, d]
        if present.any():
            filled[:, d] = np.interp(
                traj.times, traj.times[present], traj.values[present, d]
            )
    return np.column_stack([traj.times, filled])


@dataclass(frozen=True)
class PaddedBatch:
    """Trajectories padded to a common visit count.

    Padding visits have ``visit_mask`` 0 and ``cell_mask`` 0 so they never
    contribute to a loss or to the encoder state.
    """

    ids: List[str]
    times: np.ndarray  # (B, M)
    values: np.ndarray  # (B, M, D)
    cell_mask: np.ndarray  # (B, M, D)
    visit_mask: np.ndarray  # (B, M)
    inputs: np.ndarray  # (B, M, 1 + D)
    lengths: np.ndarray  # (B,)

    def __len__(self) -> int:
        return len(self.ids)


def pad_batch(trajectories: Sequence[Trajectory], dim: int) -> PaddedBatch:
    if not trajectories:
        raise DataValidationError("Cannot batch an empty list of trajectories")
    n = len(trajectories)
    max_visits = max(t.n_visits for t in trajectories)
    times = np.zeros((n, max_visits))
    values = np.zeros((n, max_visits, dim))
    cell_mask = np.zeros((n, max_visits, dim))
    visit_mask = np.zeros((n, max_visits))
    inputs = np.zeros((n, max_visits, 1 + dim))
    lengths = np.zeros(n, dtype=int)
    for i, traj in enumerate(trajectories):
        m = traj.n_visits
        lengths[i] = m
        times[i, :m] = traj.times
        values[i, :m] = traj.values
        cell_mask[i, :m] = traj.observed
        visit_mask[i, :m] = 1.0
        inputs[i, :m] = encoder_inputs(traj)
    return PaddedBatch(
        ids=[t.id for t in trajectories],
        times=times,
        values=values,
        cell_mask=cell_mask,
        visit_mask=visit_mask,
        inputs=inputs,
        lengths=lengths,
    )
