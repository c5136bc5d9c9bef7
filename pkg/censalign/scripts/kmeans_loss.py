"""
KMeans+Loss baseline: cluster patients on resampled observed values, then,
with labels frozen, jointly fit per-subtype polynomials theta_k and
per-patient delays delta_i in [0, delta_max] by minimizing

    J = sum_i sum_{m,d present} (y[i,m,d] - f(kappa(x[i,m] + delta_i; theta[s_i, d])))^2

with a projected BFGS (dense inverse-Hessian update, backtracking Armijo
line search).
"""

import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logit

import censalign.config as cfg
from censalign.exceptions import DataValidationError, RankDeficiencyError
from censalign.schemas import AlignmentGrid, LinkFamily, LinkSpec
from censalign.utils.clustering import kmeans, nearest_center
from censalign.utils.data import Dataset, PaddedBatch, encoder_inputs, pad_batch, require_valid
from censalign.utils.polynomial import polyfit
from censalign.utils.utils import BaseClass

# Get script name dynamically
SCRIPT_NAME = os.path.splitext(os.path.basename(__file__))[0]

# Set up logging
logger = cfg.setup_logging(SCRIPT_NAME)

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 50
LOGIT_CLIP = 1e-3


def stage_one_features(dataset: Dataset, n_points: int = cfg.BASELINE_FEATURE_POINTS) -> np.ndarray:
    """Interpolated values resampled on ``n_points`` equally spaced times over each patient's span."""
    features = []
    for traj in dataset:
        filled = encoder_inputs(traj)[:, 1:]
        grid = np.linspace(traj.times[0], traj.times[-1], n_points)
        features.append(
            np.concatenate([np.interp(grid, traj.times, filled[:, d]) for d in range(traj.dim)])
        )
    return np.asarray(features)


@dataclass
class AlignmentLossProblem:
    """The squared-residual objective over w = [theta (K*D*(P+1)), delta (N)]."""

    batch: PaddedBatch
    labels: np.ndarray
    k: int
    link: LinkSpec
    delta_max: float

    @property
    def dim(self) -> int:
        return self.batch.values.shape[2]

    @property
    def n_theta(self) -> int:
        return self.k * self.dim * self.link.n_coefficients

    def pack(self, theta: np.ndarray, deltas: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(theta, dtype=float).reshape(-1), deltas])

    def unpack(self, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        theta = w[: self.n_theta].reshape(self.k, self.dim, self.link.n_coefficients)
        return theta, w[self.n_theta :]

    def project(self, w: np.ndarray) -> np.ndarray:
        w = w.copy()
        w[self.n_theta :] = np.clip(w[self.n_theta :], 0.0, self.delta_max)
        return w

    def _forward(self, w: np.ndarray):
        theta, deltas = self.unpack(w)
        per_patient = theta[self.labels]  # (N, D, P+1)
        shifted = self.batch.times + deltas[:, None]  # (N, M)
        exponents = np.arange(self.link.n_coefficients)
        powers = shifted[..., None] ** exponents  # (N, M, P+1)
        kappa = np.matmul(powers, np.swapaxes(per_patient, -1, -2))  # (N, M, D)
        means = self.link.apply(kappa)
        residual = (self.batch.values - means) * self.batch.cell_mask
        return theta, per_patient, shifted, powers, kappa, residual

    def objective(self, w: np.ndarray) -> float:
        residual = self._forward(w)[-1]
        return float((residual**2).sum())

    def gradient(self, w: np.ndarray) -> np.ndarray:
        theta, per_patient, shifted, powers, kappa, residual = self._forward(w)
        upstream = -2.0 * residual * self.link.derivative(kappa)  # (N, M, D)
        per_patient_grad = np.einsum("nmd,nmp->ndp", upstream, powers)
        grad_theta = np.zeros_like(theta)
        np.add.at(grad_theta, self.labels, per_patient_grad)
        exponents = np.arange(self.link.n_coefficients)
        # d kappa / d x: sum_p p theta_p x^(p-1)
        slope_powers = np.zeros_like(powers)
        slope_powers[..., 1:] = exponents[1:] * shifted[..., None] ** (exponents[1:] - 1)
        slope = np.matmul(slope_powers, np.swapaxes(per_patient, -1, -2))
        grad_delta = (upstream * slope).sum(axis=(1, 2))
        return self.pack(grad_theta, grad_delta)


@dataclass
class BfgsOutcome:
    w: np.ndarray
    objective: float
    iterations: int
    line_search_failed: bool = False
    history: List[float] = field(default_factory=list)


def projected_bfgs(
    problem: AlignmentLossProblem,
    w0: np.ndarray,
    max_iter: int = 300,
    gtol: float = 1e-8,
    ftol: float = 1e-14,
) -> BfgsOutcome:
    """
    Quasi-Newton descent with the delays projected onto their box after
    every step; the objective never increases across accepted steps.
    """
    w = problem.project(w0)
    value, grad = problem.objective(w), problem.gradient(w)
    n = len(w)
    identity = np.eye(n)
    hessian_inv = identity.copy()
    outcome = BfgsOutcome(w=w, objective=value, iterations=0, history=[value])

    for iteration in range(max_iter):
        if np.max(np.abs(w - problem.project(w - grad)), initial=0.0) < gtol:
            break
        direction = -hessian_inv @ grad
        if grad @ direction >= 0:
            hessian_inv = identity.copy()
            direction = -grad

        step, accepted = 1.0, False
        for _ in range(MAX_HALVINGS):
            candidate = problem.project(w + step * direction)
            candidate_value = problem.objective(candidate)
            if candidate_value <= value + ARMIJO_C1 * grad @ (candidate - w):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            logger.warning("Line search failed after %s halvings at iteration %s", MAX_HALVINGS, iteration)
            outcome.line_search_failed = True
            break

        new_grad = problem.gradient(candidate)
        s, y = candidate - w, new_grad - grad
        sy = s @ y
        if sy > 1e-12:
            if iteration == 0:
                hessian_inv = identity * (sy / (y @ y))
            rho = 1.0 / sy
            left = identity - rho * np.outer(s, y)
            hessian_inv = left @ hessian_inv @ left.T + rho * np.outer(s, s)
        improvement = value - candidate_value
        w, value, grad = candidate, candidate_value, new_grad
        outcome.history.append(value)
        outcome.iterations = iteration + 1
        if improvement <= ftol * (1.0 + abs(value)):
            break

    outcome.w, outcome.objective = w, value
    return outcome


def _initial_theta(
    problem: AlignmentLossProblem, delta0: float
) -> np.ndarray:
    """Per-cluster, per-dimension polyfit of the link-inverted pooled data."""
    batch, link = problem.batch, problem.link
    theta = np.zeros((problem.k, problem.dim, link.n_coefficients))
    values = batch.values
    if link.family is LinkFamily.SIGMOID:
        values = logit(np.clip(values, LOGIT_CLIP, 1.0 - LOGIT_CLIP))
    for s in range(problem.k):
        members = problem.labels == s
        for d in range(problem.dim):
            present = batch.cell_mask[members, :, d] > 0
            x = (batch.times[members] + delta0)[present]
            q = values[members, :, d][present]
            try:
                theta[s, d] = polyfit(x, q, link.degree)
            except RankDeficiencyError as e:
                logger.warning("Initial fit of subtype %s, dim %s left at zero: %s", s, d, e)
    return theta


@dataclass
class KMeansLossResult:
    ids: List[str]
    labels: np.ndarray
    theta: np.ndarray  # (K, D, P+1)
    deltas: np.ndarray
    objective: float
    centers: np.ndarray  # stage-1 feature centers
    link: LinkSpec
    line_search_failed: bool = False
    start_objectives: List[float] = field(default_factory=list)

    @property
    def delta_hat(self) -> np.ndarray:
        return self.deltas

    def to_dict(self) -> dict:
        return {
            "method": "kmeans-loss",
            "link": {"family": self.link.family.value, "degree": self.link.degree},
            "records": [
                {"id": tid, "label": int(self.labels[i]), "delta_hat": float(self.deltas[i])}
                for i, tid in enumerate(self.ids)
            ],
            "theta": self.theta,
            "objective": self.objective,
            "centers": self.centers,
            "line_search_failed": self.line_search_failed,
            "start_objectives": self.start_objectives,
        }


def kmeans_loss_fit(
    dataset: Dataset,
    k: int,
    link: Optional[LinkSpec] = None,
    grid: Optional[AlignmentGrid] = None,
    seed: int = 0,
) -> KMeansLossResult:
    require_valid(dataset)
    if len(dataset) == 0:
        raise DataValidationError("cannot fit an empty dataset")
    link = link or dataset.link
    grid = grid or AlignmentGrid()
    clusters = kmeans(stage_one_features(dataset), k, seed=seed)
    batch = pad_batch(dataset.trajectories, dataset.dim)
    problem = AlignmentLossProblem(batch, clusters.labels, k, link, grid.delta_max)

    best: Optional[BfgsOutcome] = None
    start_objectives = []
    for delta0 in (0.0, grid.delta_max / 2.0):
        w0 = problem.pack(_initial_theta(problem, delta0), np.full(len(dataset), delta0))
        start_objectives.append(problem.objective(w0))
        outcome = projected_bfgs(problem, w0)
        logger.info(
            "Start delta0=%.2f: objective %.6g -> %.6g in %s iterations",
            delta0,
            start_objectives[-1],
            outcome.objective,
            outcome.iterations,
        )
        if best is None or outcome.objective < best.objective:
            best = outcome

    theta, deltas = problem.unpack(best.w)
    return KMeansLossResult(
        ids=dataset.ids,
        labels=clusters.labels,
        theta=theta.copy(),
        deltas=deltas.copy(),
        objective=best.objective,
        centers=clusters.centers,
        link=link,
        line_search_failed=best.line_search_failed,
        start_objectives=start_objectives,
    )


@dataclass
class KMeansLossPrediction:
    ids: List[str]
    labels: np.ndarray
    deltas: np.ndarray
    objective: float

    @property
    def delta_hat(self) -> np.ndarray:
        return self.deltas


def kmeans_loss_predict(
    result: KMeansLossResult, dataset: Dataset, grid: Optional[AlignmentGrid] = None
) -> KMeansLossPrediction:
    """
    Held-out patients: label by the nearest stage-1 center, delay by
    exhaustive search over the grid with theta frozen (smallest delay on ties).
    """
    grid = grid or AlignmentGrid()
    labels = nearest_center(stage_one_features(dataset), result.centers)
    batch = pad_batch(dataset.trajectories, dataset.dim)
    points = grid.points
    per_patient = result.theta[labels]  # (N, D, P+1)
    shifted = batch.times[:, None, :] + points[None, :, None]  # (N, S, M)
    powers = shifted[..., None] ** np.arange(result.link.n_coefficients)
    means = result.link.apply(np.matmul(powers, np.swapaxes(per_patient, -1, -2)[:, None]))
    residual = (batch.values[:, None] - means) * batch.cell_mask[:, None]
    losses = (residual**2).sum(axis=(2, 3))  # (N, S)
    best = np.argmin(losses, axis=1)
    return KMeansLossPrediction(
        ids=batch.ids,
        labels=labels,
        deltas=points[best],
        objective=float(losses[np.arange(len(best)), best].sum()),
    )


class KMeansLossBaseline(BaseClass):
    """
    Fit the KMeans+Loss baseline and save base.json
    """

    def __init__(self):
        super().__init__(logger=logger.getChild("baseline"))

    def run(
        self,
        dataset: Dataset,
        k: int,
        out_path: Optional[str] = None,
        grid: Optional[AlignmentGrid] = None,
        seed: int = 0,
    ) -> KMeansLossResult:
        """
        Fit the baseline:
            1. Cluster resampled values with k-means
            2. Minimize the squared-residual objective over (theta, delta)
            3. Save the result (optional)
        """
        logger.info("1-2. Fitting KMeans+Loss with K=%s on %s trajectories", k, len(dataset))
        result = kmeans_loss_fit(dataset, k, grid=grid, seed=seed)
        if result.line_search_failed:
            logger.warning("Best start ended on a failed line search; returning best-so-far")

        if out_path:
            logger.info("3. Saving %s", out_path)
            self.write_json(result.to_dict(), out_path)
        return result
