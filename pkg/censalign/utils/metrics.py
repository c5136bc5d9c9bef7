"""
Evaluation metrics: clustering agreement (ARI), stage ordering (swaps,
Pearson), row matching of parameter tensors and trial statistics.
"""

import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats
from sklearn.metrics import adjusted_rand_score

from censalign.exceptions import ConfigError, ShapeError, UndefinedMetricError

logger = logging.getLogger(__name__)

MAX_PERMUTATION_K = 6


def _paired(a: Sequence, b: Sequence, minimum: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    if len(a) < minimum:
        raise ShapeError(f"need at least {minimum} values, got {len(a)}")
    return a, b


def adjusted_rand_index(true_labels: Sequence[int], pred_labels: Sequence[int]) -> float:
    true_labels, pred_labels = _paired(true_labels, pred_labels)
    return float(adjusted_rand_score(true_labels, pred_labels))


# ----------------------------------------------------------------------
# Swaps (fraction of discordant pairs)
# ----------------------------------------------------------------------


def _swaps_pairs(a: np.ndarray, b: np.ndarray) -> int:
    da = np.sign(a[:, None] - a[None, :])
    db = np.sign(b[:, None] - b[None, :])
    return int(np.triu(da * db < 0, k=1).sum())


def _count_inversions(values: List[float]) -> Tuple[List[float], int]:
    """Merge sort counting pairs i < j with values[i] > values[j] strictly."""
    if len(values) <= 1:
        return values, 0
    middle = len(values) // 2
    left, left_count = _count_inversions(values[:middle])
    right, right_count = _count_inversions(values[middle:])
    merged: List[float] = []
    count = left_count + right_count
    i = j = 0
    while i < len(left) and j < len(right):
        # equal elements come from the left so ties are never counted
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            merged.append(right[j])
            count += len(left) - i
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    return merged, count


def _swaps_merge(a: np.ndarray, b: np.ndarray) -> int:
    order = np.lexsort((b, a))
    _, count = _count_inversions([float(v) for v in b[order]])
    return count


def swaps_metric(a: Sequence[float], b: Sequence[float], method: str = "merge") -> float:
    """
    Fraction of pairs ordered differently by ``a`` (true stage) and ``b``
    (predicted stage). Pairs tied in either sequence count as concordant.

    Args:
        method: "merge" (O(N log N)) or "pairs" (O(N^2)); both give the same count
    """
    a, b = _paired(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if method == "merge":
        discordant = _swaps_merge(a, b)
    elif method == "pairs":
        discordant = _swaps_pairs(a, b)
    else:
        raise ConfigError(f"Unknown swaps method: {method}")
    n = len(a)
    return discordant / (n * (n - 1) / 2)


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    a, b = _paired(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise UndefinedMetricError("Pearson correlation is undefined for a constant input")
    return float(stats.pearsonr(a, b)[0])


def match_permutation(theta_true: np.ndarray, theta_hat: np.ndarray) -> Tuple[Tuple[int, ...], float]:
    """
    Row permutation of ``theta_hat`` closest to ``theta_true``.

    Returns:
        (perm, error) with theta_hat[perm[k]] matched to theta_true[k] and
        error the largest Frobenius distance among matched rows
    """
    theta_true = np.asarray(theta_true, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_true.shape != theta_hat.shape:
        raise ShapeError(f"shape mismatch: {theta_true.shape} vs {theta_hat.shape}")
    k = theta_true.shape[0]
    if k > MAX_PERMUTATION_K:
        raise ConfigError(f"brute-force matching supports K <= {MAX_PERMUTATION_K}, got {k}")
    flat_true = theta_true.reshape(k, -1)
    flat_hat = theta_hat.reshape(k, -1)
    distances = np.linalg.norm(flat_true[:, None, :] - flat_hat[None, :, :], axis=2)
    best_perm, best_error = None, np.inf
    for perm in itertools.permutations(range(k)):
        error = max(distances[row, col] for row, col in enumerate(perm)) if k else 0.0
        if error < best_error:
            best_perm, best_error = perm, error
    return tuple(int(p) for p in best_perm), float(best_error)


# ----------------------------------------------------------------------
# Trial statistics
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    degenerate: bool = False


def paired_ttest(scores_a: Sequence[float], scores_b: Sequence[float]) -> TTestResult:
    """
    Two-sided paired t-test on per-trial differences.

    Identical vectors give t=0, p=1. Constant nonzero differences have no
    variance and return a degenerate result with NaN statistics.
    """
    a, b = _paired(np.asarray(scores_a, dtype=float), np.asarray(scores_b, dtype=float))
    differences = a - b
    if np.all(differences == 0):
        return TTestResult(t=0.0, p=1.0)
    if np.ptp(differences) == 0:
        logger.warning("Paired differences are constant (%s); t-test is degenerate", differences[0])
        return TTestResult(t=float("nan"), p=float("nan"), degenerate=True)
    result = stats.ttest_rel(a, b)
    return TTestResult(t=float(result.statistic), p=float(result.pvalue))


def benjamini_hochberg(p_values: Sequence[float]) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values; NaN entries are passed through."""
    p_values = np.asarray(p_values, dtype=float)
    adjusted = np.full_like(p_values, np.nan)
    finite = np.isfinite(p_values)
    if finite.any():
        adjusted[finite] = stats.false_discovery_control(p_values[finite], method="bh")
    return adjusted


@dataclass
class TrialScores:
    """Test-fold scores of one (trial, method); swaps/pearson absent without delays."""

    trial: int
    method: str
    ari: Optional[float] = None
    swaps: Optional[float] = None
    pearson: Optional[float] = None
    split_sizes: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def score_labels_and_stages(
    true_labels: Sequence[int],
    pred_labels: Sequence[int],
    true_stage: Optional[Sequence[float]] = None,
    pred_delta: Optional[Sequence[float]] = None,
) -> Dict[str, Optional[float]]:
    """ARI plus swaps/Pearson when both stage vectors are available."""
    scores: Dict[str, Optional[float]] = {
        "ari": adjusted_rand_index(true_labels, pred_labels),
        "swaps": None,
        "pearson": None,
    }
    if true_stage is None or pred_delta is None:
        return scores
    scores["swaps"] = swaps_metric(true_stage, pred_delta)
    try:
        scores["pearson"] = pearson(true_stage, pred_delta)
    except UndefinedMetricError as e:
        logger.warning("Pearson skipped: %s", e)
    return scores
