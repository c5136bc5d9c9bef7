"""
Score a fit (SubLign, SubNoLign, KMeans+Loss or identification output)
against the ground truth carried by a synthetic dataset.
"""

import os
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

import censalign.config as cfg
from censalign.exceptions import DataValidationError
from censalign.utils.data import Dataset
from censalign.utils.metrics import TrialScores, score_labels_and_stages
from censalign.utils.utils import BaseClass

# Get script name dynamically
SCRIPT_NAME = os.path.splitext(os.path.basename(__file__))[0]

# Set up logging
logger = cfg.setup_logging(SCRIPT_NAME)


@dataclass
class FitRecords:
    """The per-trajectory part every fit output shares."""

    ids: List[str]
    labels: np.ndarray
    delta_hat: Optional[np.ndarray]
    method: str = "unknown"

    @classmethod
    def from_dict(cls, payload: dict) -> "FitRecords":
        records = payload["records"]
        deltas = [r.get("delta_hat") for r in records]
        return cls(
            ids=[r["id"] for r in records],
            labels=np.asarray([r["label"] for r in records], dtype=int),
            delta_hat=None if any(d is None for d in deltas) else np.asarray(deltas, dtype=float),
            method=payload.get("method", "unknown"),
        )


def score_fit(fit, dataset: Dataset, trial: int = 0, method: Optional[str] = None) -> TrialScores:
    """
    ARI of the labels against ``true_subtype``; swaps and Pearson of the
    delays against the true stage ``true_delta + censor_shift`` when the fit
    has delays.

    ``fit`` is any result with ``ids``, ``labels`` and ``delta_hat``.
    """
    by_id = {t.id: t for t in dataset}
    missing = [tid for tid in fit.ids if tid not in by_id]
    if missing:
        raise DataValidationError(f"fit has {len(missing)} ids absent from the dataset: {missing[:5]}")
    trajectories = [by_id[tid] for tid in fit.ids]
    if any(t.true_subtype is None for t in trajectories):
        raise DataValidationError("dataset has no true_subtype to score against")
    true_labels = [t.true_subtype for t in trajectories]
    true_stage = None
    if fit.delta_hat is not None and all(t.stage is not None for t in trajectories):
        true_stage = [t.stage for t in trajectories]
    scores = score_labels_and_stages(true_labels, list(fit.labels), true_stage, fit.delta_hat)
    return TrialScores(
        trial=trial,
        method=method or getattr(fit, "method", "unknown"),
        split_sizes={"test": len(trajectories)},
        **scores,
    )


class Evaluation(BaseClass):
    """
    Compute ARI / swaps / Pearson for a saved fit and save scores.json
    """

    def __init__(self):
        super().__init__(logger=logger.getChild("evaluation"))

    def run(self, fit_path: str, dataset: Dataset, out_path: Optional[str] = None) -> TrialScores:
        """
        Evaluate a fit:
            1. Read the fit records
            2. Score them against the dataset's ground truth
            3. Save the scores (optional)
        """
        logger.info("1. Reading %s", fit_path)
        fit = FitRecords.from_dict(self.read_json(fit_path))

        logger.info("2. Scoring %s trajectories (%s)", len(fit.ids), fit.method)
        scores = score_fit(fit, dataset)
        logger.info("ARI %s, swaps %s, Pearson %s", scores.ari, scores.swaps, scores.pearson)

        if out_path:
            logger.info("3. Saving %s", out_path)
            self.write_json(scores.to_dict(), out_path)
        return scores
