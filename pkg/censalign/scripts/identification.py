"""
Exact identification of subtype parameters, delays and labels from noiseless
data:
    1. Q = f^-1(Y)
    2. per trajectory, fit the canonical biomarker, take the smallest-real-part
       root xi_i and refit with that root moved to x = 0
    3. cluster the canonical coefficients, set eta_k = max xi over the members
       of subtype k and delta_i = eta_k - xi_i
    4. refit every subtype and dimension on the aligned times x + delta_i
"""

import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

import censalign.config as cfg
from censalign.exceptions import (
    DegeneratePolynomialError,
    IdentificationError,
    LinkDomainError,
    RankDeficiencyError,
)
from censalign.schemas import LinkSpec
from censalign.utils.clustering import kmeans
from censalign.utils.data import Dataset, require_valid
from censalign.utils.polynomial import (
    canonical_refit,
    inverse_link,
    poly_roots,
    polyfit,
    select_root,
)
from censalign.utils.utils import BaseClass

# Get script name dynamically
SCRIPT_NAME = os.path.splitext(os.path.basename(__file__))[0]

# Set up logging
logger = cfg.setup_logging(SCRIPT_NAME)


@dataclass
class IdentResult:
    ids: List[str]
    theta_hat: np.ndarray  # (K, D, P+1)
    deltas: np.ndarray  # (N,)
    labels: np.ndarray  # (N,)
    xi: np.ndarray  # (N,), NaN where the canonical polynomial is flat
    eta: np.ndarray  # (K,)
    link: LinkSpec
    diagnostics: List[str] = field(default_factory=list)

    @property
    def delta_hat(self) -> np.ndarray:
        return self.deltas

    def to_dict(self) -> dict:
        return {
            "method": "identify",
            "link": {"family": self.link.family.value, "degree": self.link.degree},
            "records": [
                {
                    "id": tid,
                    "label": int(self.labels[i]),
                    "delta_hat": float(self.deltas[i]),
                    "xi": None if np.isnan(self.xi[i]) else float(self.xi[i]),
                }
                for i, tid in enumerate(self.ids)
            ],
            "theta_hat": self.theta_hat,
            "eta": [None if np.isnan(e) else float(e) for e in self.eta],
            "diagnostics": self.diagnostics,
        }


def identify(
    dataset: Dataset, link: LinkSpec, k: int, canonical_dim: int = 0
) -> IdentResult:
    """
    Recover (theta, delta, s) up to a permutation of subtypes.

    Trajectories whose canonical polynomial is constant have no root: their
    xi is NaN, their delay is 0 and a diagnostic names them.

    Raises:
        IdentificationError: an assumption is violated (values outside the
            link range, too few distinct observations, ill-conditioned fits)
    """
    require_valid(dataset)
    if not 0 <= canonical_dim < dataset.dim:
        raise IdentificationError(f"canonical dimension {canonical_dim} outside 0..{dataset.dim - 1}")
    degree = link.degree
    diagnostics: List[str] = []
    fatal: List[str] = []
    q_values, canonical, xi = [], [], []

    for traj in dataset:
        try:
            q = inverse_link(traj.values, traj.observed, link, traj.id)
        except LinkDomainError as e:
            fatal.append(f"{traj.id}: link domain: {e}")
            continue
        present = traj.observed[:, canonical_dim]
        x, qc = traj.times[present], q[present, canonical_dim]
        try:
            theta = polyfit(x, qc, degree)
        except RankDeficiencyError as e:
            fatal.append(f"{traj.id}: canonical fit: {e}")
            continue
        try:
            roots = poly_roots(theta)
        except DegeneratePolynomialError:
            roots = []
        if roots:
            root = select_root(roots).real
            theta_tilde = canonical_refit(x, qc, root, degree)
        else:
            diagnostics.append(f"{traj.id}: flat canonical polynomial, delay undefined (set to 0)")
            root, theta_tilde = np.nan, theta
        q_values.append(q)
        canonical.append(theta_tilde)
        xi.append(root)

    if fatal:
        for message in fatal[:10]:
            logger.error(message)
        raise IdentificationError(f"{len(fatal)} trajectories violate identification assumptions", fatal)

    xi = np.asarray(xi, dtype=float)
    clusters = kmeans(np.asarray(canonical), k, seed=None)
    labels = clusters.labels

    eta = np.full(k, np.nan)
    for s in range(k):
        members = xi[(labels == s) & np.isfinite(xi)]
        if members.size:
            eta[s] = members.max()
    deltas = np.where(np.isfinite(xi), eta[labels] - xi, 0.0)

    theta_hat = np.full((k, dataset.dim, degree + 1), np.nan)
    for s in range(k):
        members = [i for i in range(len(dataset)) if labels[i] == s]
        for d in range(dataset.dim):
            x = np.concatenate(
                [dataset.trajectories[i].times[dataset.trajectories[i].observed[:, d]] + deltas[i] for i in members]
            )
            q = np.concatenate(
                [q_values[i][dataset.trajectories[i].observed[:, d], d] for i in members]
            )
            try:
                theta_hat[s, d] = polyfit(x, q, degree)
            except RankDeficiencyError as e:
                diagnostics.append(f"subtype {s}, dim {d}: {e}")

    for message in diagnostics:
        logger.warning(message)
    return IdentResult(
        ids=dataset.ids,
        theta_hat=theta_hat,
        deltas=deltas,
        labels=labels,
        xi=xi,
        eta=eta,
        link=link,
        diagnostics=diagnostics,
    )


class Identification(BaseClass):
    """
    Run exact identification on a dataset and save ident.json
    """

    def __init__(self):
        super().__init__(logger=logger.getChild("identification"))

    def run(self, dataset: Dataset, link: LinkSpec, k: int, out_path: Optional[str] = None) -> IdentResult:
        """
        Identify subtypes and delays:
            1. Recover parameters, delays and labels
            2. Save the result (optional)
        """
        logger.info(
            "1. Identifying %s subtypes (%s, degree %s) from %s trajectories",
            k,
            link.family.value,
            link.degree,
            len(dataset),
        )
        result = identify(dataset, link, k)

        if out_path:
            logger.info("2. Saving %s", out_path)
            self.write_json(result.to_dict(), out_path)
        return result
