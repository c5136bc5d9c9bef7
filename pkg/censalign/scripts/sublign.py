"""
SubLign: a recurrent variational encoder for per-trajectory latent z, a
decoder z -> polynomial coefficients Theta, and a one-hot delay delta chosen by
grid search over the alignment grid.

Training alternates (a) grid search of delta with frozen parameters and
(b) one full-batch Adam step on the summed ELBO, keeping the parameters of the
best training ELBO. Every trajectory of a fold is evaluated at once on a
padded batch.
"""

import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import logsumexp

import censalign.config as cfg
from censalign.engine.autodiff import Tensor, forward_backward
from censalign.engine.layers import GruCell, Mlp, SequenceEncoder, VanillaRnnCell
from censalign.engine.optim import (
    Adam,
    checkpoint_from_dict,
    checkpoint_to_dict,
    regularization_penalty,
)
from censalign.exceptions import DataValidationError, ShapeError, TrainingDivergedError
from censalign.schemas import AlignmentGrid, CellType, LinkFamily, LinkSpec, SubLignConfig
from censalign.utils.clustering import kmeans
from censalign.utils.data import Dataset, PaddedBatch, pad_batch, require_valid, reverse_time
from censalign.utils.polynomial import polyval
from censalign.utils.utils import BaseClass

# Get script name dynamically
SCRIPT_NAME = os.path.splitext(os.path.basename(__file__))[0]

# Set up logging
logger = cfg.setup_logging(SCRIPT_NAME)

LOG_2PI = math.log(2.0 * math.pi)


class SubLignModel:
    """Encoder phi (GRU body + mu / log-variance heads) and decoder gamma."""

    def __init__(self, config: SubLignConfig, dim: int, link: LinkSpec, aligned: bool = True):
        self.config = config
        self.dim = dim
        self.link = link
        self.aligned = aligned
        rng = np.random.default_rng(config.seed)
        cell_cls = GruCell if config.cell is CellType.GRU else VanillaRnnCell
        self.encoder = SequenceEncoder(cell_cls(1 + dim, config.rnn_hidden, rng, name="encoder"))
        self.mu_head = Mlp(config.rnn_hidden, config.mlp_hidden, config.latent_dim, rng, name="mu")
        self.logvar_head = Mlp(
            config.rnn_hidden, config.mlp_hidden, config.latent_dim, rng, name="logvar"
        )
        self.decoder = Mlp(
            config.latent_dim, config.mlp_hidden, dim * link.n_coefficients, rng, name="decoder"
        )

    @property
    def grid(self) -> AlignmentGrid:
        return self.config.grid

    def parameters(self) -> Dict[str, Tensor]:
        params = {}
        for part in (self.encoder, self.mu_head, self.logvar_head, self.decoder):
            params.update(part.parameters())
        return params

    def weights(self) -> List[Tensor]:
        return [
            w
            for part in (self.encoder, self.mu_head, self.logvar_head, self.decoder)
            for w in part.weights()
        ]

    # ------------------------------------------------------------------
    # Forward pieces
    # ------------------------------------------------------------------

    def encode(self, batch: PaddedBatch) -> Tuple[Tensor, Tensor]:
        """Posterior mean and log-variance, each (B, N_z)."""
        h = self.encoder(batch.inputs, batch.visit_mask)
        return self.mu_head(h), self.logvar_head(h)

    def theta(self, z: Tensor) -> Tensor:
        """Theta = g(z), shaped (B, D, P + 1)."""
        z = Tensor.lift(z)
        flat = self.decoder(z.reshape(-1, self.config.latent_dim))
        return flat.reshape(-1, self.dim, self.link.n_coefficients)

    def decode_means(self, theta: Tensor, times: np.ndarray, deltas: np.ndarray) -> Tensor:
        """f(kappa(x + delta; Theta[d])) for every visit and dimension, (B, M, D)."""
        shifted = np.asarray(times, dtype=float) + np.asarray(deltas, dtype=float)[:, None]
        powers = shifted[..., None] ** np.arange(self.link.n_coefficients)
        kappa = Tensor(powers, op="powers") @ theta.transpose()
        return kappa.sigmoid() if self.link.family is LinkFamily.SIGMOID else kappa

    def elbo_terms(
        self,
        batch: PaddedBatch,
        deltas: np.ndarray,
        eps: Optional[np.ndarray] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> Tensor:
        """
        Per-trajectory ELBO (B,): Gaussian log-likelihood with unit variance
        over present cells, minus log S for the one-hot delta against the
        uniform grid prior, minus kl_weight * KL(q(z) || N(0, I)).

        Args:
            eps: (n_mc, B, N_z) reparameterization noise; drawn from ``rng``
                when omitted
        """
        mu, logvar = self.encode(batch)
        if eps is None:
            rng = rng if rng is not None else np.random.default_rng(self.config.seed)
            eps = rng.standard_normal((self.config.n_mc,) + mu.shape)
        eps = np.asarray(eps, dtype=float)
        std = (logvar * 0.5).exp()
        recon = None
        for sample in eps:
            means = self.decode_means(self.theta(mu + std * sample), batch.times, deltas)
            term = ((means - batch.values) * batch.cell_mask).square().sum(axis=(1, 2)) * -0.5
            recon = term if recon is None else recon + term
        recon = recon * (1.0 / len(eps))
        constant = -0.5 * LOG_2PI * batch.cell_mask.sum(axis=(1, 2)) - math.log(self.grid.size)
        kl = (mu.square() + logvar.exp() - 1.0 - logvar).sum(axis=1) * 0.5
        return recon + constant - kl * self.config.kl_weight

    def posterior_mean(self, batch: PaddedBatch) -> np.ndarray:
        mu, _ = self.encode(batch)
        return mu.data.copy()

    # ------------------------------------------------------------------
    # Persistence
    # ------------------------------------------------------------------

    def load_parameters(self, values: Dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(values) != set(params):
            raise ShapeError(
                f"parameter names differ: missing {sorted(set(params) - set(values))}, "
                f"unexpected {sorted(set(values) - set(params))}"
            )
        for name, p in params.items():
            if values[name].shape != p.shape:
                raise ShapeError(f"{name}: shape {values[name].shape} != {p.shape}")
            p.data = np.array(values[name], dtype=float)

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def to_dict(self) -> dict:
        return {
            "config": self.config.model_dump(mode="json"),
            "dim": self.dim,
            "link": {"family": self.link.family.value, "degree": self.link.degree},
            "aligned": self.aligned,
            "params": checkpoint_to_dict(self.parameters()),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "SubLignModel":
        try:
            model = cls(
                SubLignConfig.from_dict(payload["config"]),
                int(payload["dim"]),
                LinkSpec.parse(payload["link"]["family"], payload["link"]["degree"]),
                aligned=bool(payload.get("aligned", True)),
            )
        except KeyError as e:
            raise DataValidationError(f"model file is missing key {e}") from e
        model.load_parameters(checkpoint_from_dict(payload["params"]))
        return model


# ----------------------------------------------------------------------
# Operations
# ----------------------------------------------------------------------


def decode_trajectory(
    model: SubLignModel, z: np.ndarray, times: np.ndarray, delta: float
) -> np.ndarray:
    """Predicted means (M, D) of one trajectory for latent z and delay delta."""
    if delta < 0:
        raise ShapeError(f"delta must be >= 0, got {delta}")
    theta = model.theta(Tensor(np.asarray(z, dtype=float).reshape(1, -1)))
    times = np.asarray(times, dtype=float).reshape(1, -1)
    return model.decode_means(theta, times, np.array([delta])).data[0]


def grid_search_delta(
    model: SubLignModel, batch: PaddedBatch, grid: Optional[AlignmentGrid] = None
) -> np.ndarray:
    """
    Delay per trajectory maximizing the reconstruction log-likelihood at
    z = mu(h) over every grid point; ties resolve to the smallest delay.
    """
    grid = grid or model.grid
    points = grid.points
    theta = model.theta(Tensor(model.posterior_mean(batch))).data  # (B, D, P+1)
    shifted = batch.times[:, None, :] + points[None, :, None]  # (B, S, M)
    powers = shifted[..., None] ** np.arange(model.link.n_coefficients)
    means = model.link.apply(np.matmul(powers, np.swapaxes(theta, -1, -2)[:, None]))
    residual = (means - batch.values[:, None]) * batch.cell_mask[:, None]
    scores = -0.5 * (residual**2).sum(axis=(2, 3))  # (B, S)
    return points[np.argmax(scores, axis=1)]


def _deltas(model: SubLignModel, batch: PaddedBatch) -> np.ndarray:
    if not model.aligned:
        return np.zeros(len(batch))
    return grid_search_delta(model, batch)


@dataclass
class TrainResult:
    model: SubLignModel
    elbo_log: List[float] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_elbo(self) -> float:
        return self.elbo_log[self.best_epoch]


def _prepare(dataset: Dataset, config: SubLignConfig) -> Dataset:
    require_valid(dataset)
    if len(dataset) == 0:
        raise DataValidationError("cannot fit an empty dataset")
    return reverse_time(dataset) if config.reverse else dataset


def train(dataset: Dataset, config: SubLignConfig, aligned: bool = True) -> TrainResult:
    """
    Alternate delta grid search and full-batch Adam steps for ``config.epochs``
    epochs, returning the parameters of the best training ELBO seen.

    Raises:
        TrainingDivergedError: the summed ELBO became NaN or infinite
    """
    dataset = _prepare(dataset, config)
    model = SubLignModel(config, dataset.dim, dataset.link, aligned=aligned)
    batch = pad_batch(dataset.trajectories, dataset.dim)
    params = model.parameters()
    optimizer = Adam(params, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed + 1)
    result = TrainResult(model=model)
    best_state, best_elbo = model.snapshot(), -np.inf

    for epoch in range(config.epochs):
        deltas = _deltas(model, batch)
        eps = rng.standard_normal((config.n_mc, len(batch), config.latent_dim))
        total = model.elbo_terms(batch, deltas, eps).sum()
        if not np.isfinite(total.item()):
            logger.error("ELBO diverged at epoch %s", epoch)
            raise TrainingDivergedError(epoch)
        loss = -total + regularization_penalty(
            model.weights(), config.reg_type, config.reg_strength
        )
        grads = forward_backward(loss, params)
        result.elbo_log.append(total.item())
        if total.item() > best_elbo:
            best_elbo, best_state, result.best_epoch = total.item(), model.snapshot(), epoch
        optimizer.step(grads)
        if epoch % config.log_every == 0 or epoch == config.epochs - 1:
            logger.info(
                "epoch %s/%s: mean ELBO %.4f", epoch + 1, config.epochs, total.item() / len(batch)
            )

    model.load_parameters(best_state)
    logger.info("Best training ELBO %.4f at epoch %s", best_elbo, result.best_epoch + 1)
    return result


def subnolign_train(dataset: Dataset, config: SubLignConfig) -> TrainResult:
    """``train`` with every delay pinned at 0."""
    return train(dataset, config, aligned=False)


@dataclass
class FitResult:
    """Per-trajectory latent means, delays and labels plus subtype centers."""

    ids: List[str]
    z: np.ndarray  # (N, N_z)
    delta_hat: Optional[np.ndarray]  # (N,), None when alignment is disabled
    labels: np.ndarray  # (N,)
    centers: np.ndarray  # (K, N_z)
    tau: np.ndarray  # (K, D, P+1)
    link: LinkSpec
    method: str = "sublign"
    elbo_log: List[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        records = []
        for i, tid in enumerate(self.ids):
            record = {"id": tid, "z": self.z[i], "label": int(self.labels[i])}
            record["delta_hat"] = None if self.delta_hat is None else float(self.delta_hat[i])
            records.append(record)
        return {
            "method": self.method,
            "link": {"family": self.link.family.value, "degree": self.link.degree},
            "records": records,
            "centers": self.centers,
            "tau": self.tau,
            "elbo_log": self.elbo_log,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FitResult":
        records = payload["records"]
        deltas = [r.get("delta_hat") for r in records]
        return cls(
            ids=[r["id"] for r in records],
            z=np.asarray([r["z"] for r in records], dtype=float),
            delta_hat=None if any(d is None for d in deltas) else np.asarray(deltas, dtype=float),
            labels=np.asarray([r["label"] for r in records], dtype=int),
            centers=np.asarray(payload["centers"], dtype=float),
            tau=np.asarray(payload["tau"], dtype=float),
            link=LinkSpec.parse(payload["link"]["family"], payload["link"]["degree"]),
            method=payload.get("method", "sublign"),
            elbo_log=list(payload.get("elbo_log", [])),
        )


def infer(
    model: SubLignModel,
    dataset: Dataset,
    k: Optional[int] = None,
    grid: Optional[AlignmentGrid] = None,
) -> FitResult:
    """
    z_i = mu(h_i), delta_i by grid search, k-means with K clusters on z and
    subtype coefficients tau_k = g(mu_k).

    Raises:
        ShapeError: K larger than the number of trajectories
    """
    dataset = _prepare(dataset, model.config)
    if k is None:
        k = model.config.k_clusters
    batch = pad_batch(dataset.trajectories, dataset.dim)
    z = model.posterior_mean(batch)
    deltas = None
    if model.aligned:
        deltas = grid_search_delta(model, batch, grid)
    clusters = kmeans(z, k, seed=model.config.seed)
    tau = model.theta(Tensor(clusters.centers)).data
    return FitResult(
        ids=batch.ids,
        z=z,
        delta_hat=deltas,
        labels=clusters.labels,
        centers=clusters.centers,
        tau=tau,
        link=model.link,
        method="sublign" if model.aligned else "subnolign",
    )


def infer_deltas(model: SubLignModel, dataset: Dataset) -> np.ndarray:
    """Grid-searched delays in dataset order (zeros for SubNoLign)."""
    dataset = _prepare(dataset, model.config)
    return _deltas(model, pad_batch(dataset.trajectories, dataset.dim))


def validation_elbo(model: SubLignModel, dataset: Dataset, seed: int = 0) -> float:
    """Mean per-trajectory ELBO with grid-searched delays and fixed-seed z samples."""
    dataset = _prepare(dataset, model.config)
    batch = pad_batch(dataset.trajectories, dataset.dim)
    deltas = _deltas(model, batch)
    terms = model.elbo_terms(batch, deltas, rng=np.random.default_rng(seed))
    return float(terms.data.mean())


def log_marginal_likelihood(
    model: SubLignModel,
    dataset: Dataset,
    trajectory_id: str,
    n_samples: int = 100_000,
    seed: int = 0,
    chunk: int = 2_000,
) -> Tuple[float, float]:
    """
    Importance-sampling estimate of log p(Y | X) for one trajectory with
    q(z) as proposal and an exhaustive sum over the uniform delay grid.

    Returns:
        (estimate, standard error of the estimate)
    """
    traj = _prepare(dataset.subset([trajectory_id]), model.config)
    batch = pad_batch(traj.trajectories, dataset.dim)
    mu, logvar = model.encode(batch)
    mu, std = mu.data[0], np.exp(0.5 * logvar.data[0])
    points = model.grid.points
    rng = np.random.default_rng(seed)
    n_present = batch.cell_mask.sum()
    log_weights = []
    for start in range(0, n_samples, chunk):
        eps = rng.standard_normal((min(chunk, n_samples - start), len(mu)))
        z = mu + std * eps
        theta = model.theta(Tensor(z)).data  # (C, D, P+1)
        shifted = batch.times[0][None, :] + points[:, None]  # (S, M)
        powers = shifted[..., None] ** np.arange(model.link.n_coefficients)  # (S, M, P+1)
        means = model.link.apply(
            np.matmul(powers[None], np.swapaxes(theta, -1, -2)[:, None])
        )  # (C, S, M, D)
        residual = (means - batch.values[0]) * batch.cell_mask[0]
        loglik = -0.5 * (residual**2).sum(axis=(2, 3)) - 0.5 * LOG_2PI * n_present
        log_p_y = logsumexp(loglik, axis=1) - math.log(len(points))
        log_prior = -0.5 * (z**2).sum(axis=1) - 0.5 * LOG_2PI * len(mu)
        log_q = (
            -0.5 * (eps**2).sum(axis=1) - np.log(std).sum() - 0.5 * LOG_2PI * len(mu)
        )
        log_weights.append(log_p_y + log_prior - log_q)
    log_weights = np.concatenate(log_weights)
    estimate = logsumexp(log_weights) - math.log(len(log_weights))
    ratios = np.exp(log_weights - estimate)
    stderr = float(np.std(ratios, ddof=1) / math.sqrt(len(ratios))) if len(ratios) > 1 else 0.0
    return float(estimate), stderr


def polynomial_curves(tau: np.ndarray, link: LinkSpec, times: np.ndarray) -> np.ndarray:
    """f(kappa(t; tau[k, d])) for every subtype, time and dimension, (K, T, D)."""
    times = np.asarray(times, dtype=float)
    k, dim, _ = tau.shape
    curves = np.empty((k, len(times), dim))
    for s in range(k):
        for d in range(dim):
            curves[s, :, d] = link.apply(polyval(tau[s, d], times))
    return curves


def subtype_curves(fit: FitResult, times: np.ndarray) -> np.ndarray:
    return polynomial_curves(fit.tau, fit.link, times)


def curves_table(tau: np.ndarray, link: LinkSpec, t_max: float, n_points: int = 101) -> pd.DataFrame:
    """Long table (subtype, t, dim_0..dim_D-1) of decoded subtype curves on [0, t_max]."""
    times = np.linspace(0.0, t_max, n_points)
    curves = polynomial_curves(tau, link, times)
    rows = [
        {"subtype": s, "t": float(t), **{f"dim_{d}": float(curves[s, i, d]) for d in range(curves.shape[2])}}
        for s in range(curves.shape[0])
        for i, t in enumerate(times)
    ]
    return pd.DataFrame(rows)


# ----------------------------------------------------------------------
# Pipeline steps
# ----------------------------------------------------------------------


class SubLignTrainer(BaseClass):
    """
    Train a SubLign (or SubNoLign) model and save it as model.json
    """

    def __init__(self):
        super().__init__(logger=logger.getChild("trainer"))

    def run(self, dataset: Dataset, config: SubLignConfig, out_path: str, aligned: bool = True) -> TrainResult:
        """
        Fit the model:
            1. Validate the dataset
            2. Train for the configured number of epochs
            3. Save the best parameters with config, dim and link

        Args:
            dataset: training data
            config: hyperparameters
            out_path: destination of model.json
            aligned: False trains SubNoLign (delays pinned at 0)
        """
        logger.info("1. Validating %s trajectories", len(dataset))
        require_valid(dataset)

        logger.info("2. Training %s for %s epochs", "SubLign" if aligned else "SubNoLign", config.epochs)
        result = train(dataset, config, aligned=aligned)

        logger.info("3. Saving model to %s", out_path)
        payload = result.model.to_dict()
        payload["elbo_log"] = result.elbo_log
        self.write_json(payload, out_path)
        return result


class SubLignInference(BaseClass):
    """
    Infer latent means, delays and subtypes with a saved model
    """

    def __init__(self):
        super().__init__(logger=logger.getChild("inference"))

    def run(self, model_path: str, dataset: Dataset, k: int, out_path: str) -> FitResult:
        """
        Run inference:
            1. Load the model
            2. Infer z, delta and labels
            3. Save fit.json and the decoded subtype curves next to it
        """
        logger.info("1. Loading model %s", model_path)
        payload = self.read_json(model_path)
        model = SubLignModel.from_dict(payload)

        logger.info("2. Inferring %s subtypes for %s trajectories", k, len(dataset))
        fit = infer(model, dataset, k)
        fit.elbo_log = list(payload.get("elbo_log", []))

        logger.info("3. Saving %s", out_path)
        self.write_json(fit.to_dict(), out_path)
        t_max = model.grid.delta_max + max(float(t.times[-1]) for t in dataset)
        curves_path = os.path.join(os.path.dirname(os.path.abspath(out_path)), "curves.csv")
        self.save_table(curves_table(fit.tau, fit.link, t_max), curves_path)
        return fit
