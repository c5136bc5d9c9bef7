"""
k-means shared by SubLign inference, identification and the KMeans+Loss baseline.
"""

import hashlib
import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

import censalign.config as cfg
from censalign.exceptions import ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray  # (N,)
    centers: np.ndarray  # (K, F)
    inertia: float


def content_seed(points: np.ndarray, decimals: int = 9) -> int:
    """Seed derived from the multiset of rows, independent of their order."""
    points = np.round(np.asarray(points, dtype=float), decimals) + 0.0
    rows = points[np.lexsort(points.T[::-1])] if points.size else points
    digest = hashlib.sha256(np.ascontiguousarray(rows).tobytes()).hexdigest()
    return int(digest[:8], 16)


def kmeans(
    points: np.ndarray,
    k: int,
    seed: Optional[int] = None,
    n_init: int = cfg.KMEANS_RESTARTS,
    max_iter: int = cfg.KMEANS_MAX_ITER,
) -> KMeansResult:
    """
    k-means++ seeding, ``n_init`` restarts of at most ``max_iter`` Lloyd
    iterations, best inertia kept.

    Points are sorted before fitting and clusters are numbered by their
    centers in lexicographic order, so the result depends only on the
    multiset of points and the seed. ``seed=None`` uses ``content_seed``.

    Raises:
        ShapeError: k < 1 or k larger than the number of points
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    n = points.shape[0]
    if k < 1 or k > n:
        raise ShapeError(f"k-means needs 1 <= K <= #points, got K={k} for {n} points")
    if seed is None:
        seed = content_seed(points)

    order = np.lexsort(points.T[::-1])
    model = KMeans(
        n_clusters=k,
        init="k-means++",
        n_init=n_init,
        max_iter=max_iter,
        random_state=seed,
        algorithm="lloyd",
    )
    with warnings.catch_warnings():
        # fewer distinct points than clusters; sklearn still returns K centers
        warnings.simplefilter("ignore", ConvergenceWarning)
        model.fit(points[order])

    centers = model.cluster_centers_
    relabel = np.empty(k, dtype=int)
    relabel[np.lexsort(centers.T[::-1])] = np.arange(k)
    labels = np.empty(n, dtype=int)
    labels[order] = relabel[model.labels_]
    centers = centers[np.argsort(relabel)]
    logger.debug("k-means K=%s on %s points: inertia %.6g", k, n, model.inertia_)
    return KMeansResult(labels=labels, centers=centers, inertia=float(model.inertia_))


def nearest_center(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the closest center for every point (first on ties)."""
    points = np.asarray(points, dtype=float)
    distances = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(distances, axis=1)
