"""
Synthetic benchmarks: the 3-D sigmoid pair, the six quadratic cases, random
cubic splines, noiseless draws from explicit polynomial parameters, and the
missingness / censoring-window transforms applied on top of them.
"""

import os
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import expit

import censalign.config as cfg
from censalign.exceptions import ConfigError, ShapeError
from censalign.schemas import GeneratorFamily, GeneratorSpec, LinkFamily, LinkSpec
from censalign.utils.data import Dataset, Trajectory, require_valid
from censalign.utils.dataset_io import write_dataset
from censalign.utils.polynomial import polyval
from censalign.utils.utils import BaseClass

# Get script name dynamically
SCRIPT_NAME = os.path.splitext(os.path.basename(__file__))[0]

# Set up logging
logger = cfg.setup_logging(SCRIPT_NAME)

# (subtype index, absolute disease times (M,)) -> noiseless values (M, D)
CurveFn = Callable[[int, np.ndarray], np.ndarray]


def _id_format(n: int) -> str:
    return f"p{{:0{max(4, len(str(n - 1)))}d}}"


def _sample_times(rng: np.random.Generator, n_visits: int, t_max: float) -> np.ndarray:
    times = rng.uniform(0.0, t_max, n_visits)
    while len(np.unique(times)) < n_visits:
        _, first = np.unique(times, return_index=True)
        colliding = np.setdiff1d(np.arange(n_visits), first)
        times[colliding] = rng.uniform(0.0, t_max, len(colliding))
    return np.sort(times)


def _sample_dataset(
    spec: GeneratorSpec,
    curve: CurveFn,
    dim: int,
    link: LinkSpec,
    rng: np.random.Generator,
) -> Dataset:
    """
    Shared protocol: s ~ Bern(p), t_m ~ Unif(0, T+) sorted, y_m ~ N(f_s(t_m), var I),
    then x_m = t_m - zeta with zeta = min t and true_delta = zeta.
    """
    if spec.n_visits < 1:
        raise ConfigError(f"n_visits must be >= 1, got {spec.n_visits}")
    scale = np.sqrt(spec.noise_var)
    id_format = _id_format(spec.n_patients)
    trajectories = []
    for i in range(spec.n_patients):
        subtype = int(rng.random() < spec.subtype_prob)
        times = _sample_times(rng, spec.n_visits, spec.t_max)
        values = curve(subtype, times) + scale * rng.standard_normal((spec.n_visits, dim))
        zeta = float(times[0])
        trajectories.append(
            Trajectory(
                id=id_format.format(i),
                times=times - zeta,
                values=values,
                observed=np.ones((spec.n_visits, dim), dtype=bool),
                true_subtype=subtype,
                true_delta=zeta,
            )
        )
    provenance = (
        f"{spec.name} seed={spec.seed} n={spec.n_patients} m={spec.n_visits} "
        f"noise_var={spec.noise_var!r} t_max={spec.t_max!r}"
    )
    return require_valid(Dataset(tuple(trajectories), dim, link, provenance, n_subtypes=2))


def _sigmoid_curve(subtype: int, times: np.ndarray) -> np.ndarray:
    coefficients = cfg.SIGMOID_SUBTYPES[subtype]
    return np.column_stack([expit(a + b * times) for a, b in coefficients])


def gen_sigmoid(spec: GeneratorSpec) -> Dataset:
    if spec.family is not GeneratorFamily.SIGMOID:
        raise ConfigError(f"gen_sigmoid got a {spec.family.value} spec")
    rng = np.random.default_rng(spec.seed)
    link = LinkSpec(family=LinkFamily.SIGMOID, degree=1)
    return _sample_dataset(spec, _sigmoid_curve, len(cfg.SIGMOID_SUBTYPES[0]), link, rng)


def gen_quadratic(spec: GeneratorSpec) -> Dataset:
    if spec.family is not GeneratorFamily.QUADRATIC:
        raise ConfigError(f"gen_quadratic got a {spec.family.value} spec")
    if spec.case not in cfg.QUADRATIC_CASES:
        raise ConfigError(f"Unknown quadratic case: {spec.case}")
    functions = cfg.QUADRATIC_CASES[spec.case]

    def curve(subtype: int, times: np.ndarray) -> np.ndarray:
        return polyval(np.asarray(functions[subtype]), times).reshape(-1, 1)

    rng = np.random.default_rng(spec.seed)
    link = LinkSpec(family=LinkFamily.IDENTITY, degree=2)
    return _sample_dataset(spec, curve, 1, link, rng)


def spline_subtypes(
    rng: np.random.Generator, monotone: bool, t_max: float, n_subtypes: int = 2
) -> List[List[CubicSpline]]:
    """Per subtype, one natural cubic spline per dimension through random control points."""
    abscissae = np.linspace(0.0, t_max, cfg.SPLINE_CONTROL_POINTS)
    splines = []
    for _ in range(n_subtypes):
        per_dim = []
        for _ in range(cfg.SPLINE_DIM):
            ordinates = rng.uniform(0.0, 1.0, cfg.SPLINE_CONTROL_POINTS)
            if monotone:
                ordinates = np.sort(ordinates)
            per_dim.append(CubicSpline(abscissae, ordinates, bc_type="natural"))
        splines.append(per_dim)
    return splines


def gen_spline(spec: GeneratorSpec) -> Dataset:
    """
    Misspecified benchmark: the subtype curves are splines, not sigmoids.
    ``spline-incr`` is paired with the sigmoid link, ``spline-any`` with a
    quadratic identity link.
    """
    if spec.family is not GeneratorFamily.SPLINE:
        raise ConfigError(f"gen_spline got a {spec.family.value} spec")
    rng = np.random.default_rng(spec.seed)
    splines = spline_subtypes(rng, spec.monotone, spec.t_max)

    def curve(subtype: int, times: np.ndarray) -> np.ndarray:
        return np.column_stack([spline(times) for spline in splines[subtype]])

    if spec.monotone:
        link = LinkSpec(family=LinkFamily.SIGMOID, degree=1)
    else:
        link = LinkSpec(family=LinkFamily.IDENTITY, degree=2)
    return _sample_dataset(spec, curve, cfg.SPLINE_DIM, link, rng)


def gen_from_params(
    theta: np.ndarray,
    link: LinkSpec,
    labels: Sequence[int],
    deltas: Sequence[float],
    times: Sequence[Sequence[float]],
    ids: Optional[Sequence[str]] = None,
) -> Dataset:
    """
    Noiseless trajectories y[m, d] = f(kappa(x_m + delta_i; theta[s_i, d])).

    Args:
        theta: (K, D, P + 1) ascending coefficients
        labels, deltas, times: per trajectory subtype, delay and observation times
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 3 or theta.shape[2] != link.n_coefficients:
        raise ShapeError(
            f"theta must be (K, D, {link.n_coefficients}) for {link.family.value} "
            f"degree {link.degree}, got {theta.shape}"
        )
    if not len(labels) == len(deltas) == len(times):
        raise ShapeError("labels, deltas and times must have the same length")
    n = len(labels)
    ids = list(ids) if ids is not None else [_id_format(n).format(i) for i in range(n)]
    dim = theta.shape[1]
    trajectories = []
    for tid, label, delta, x in zip(ids, labels, deltas, times):
        x = np.asarray(x, dtype=float)
        values = np.column_stack(
            [link.apply(polyval(theta[label, d], x + delta)) for d in range(dim)]
        )
        trajectories.append(
            Trajectory(
                id=tid,
                times=x,
                values=values,
                observed=np.ones(values.shape, dtype=bool),
                true_subtype=int(label),
                true_delta=float(delta),
            )
        )
    return require_valid(
        Dataset(tuple(trajectories), dim, link, "from-params", n_subtypes=theta.shape[0])
    )


GENERATORS = {
    GeneratorFamily.SIGMOID: gen_sigmoid,
    GeneratorFamily.QUADRATIC: gen_quadratic,
    GeneratorFamily.SPLINE: gen_spline,
}


def generate(spec: GeneratorSpec) -> Dataset:
    return GENERATORS[spec.family](spec)


# ----------------------------------------------------------------------
# Transforms
# ----------------------------------------------------------------------


def apply_missingness(dataset: Dataset, rate: float, seed: int = 0) -> Dataset:
    """
    Make each present cell missing independently with probability ``rate``;
    trajectories left with no present cell are dropped.
    """
    if not 0.0 <= rate <= 1.0:
        raise ConfigError(f"missing rate must lie in [0, 1], got {rate}")
    if rate == 0.0:
        return dataset
    rng = np.random.default_rng(seed)
    kept, dropped = [], 0
    for traj in dataset:
        observed = traj.observed & ~(rng.random(traj.observed.shape) < rate)
        if not observed.any():
            dropped += 1
            continue
        kept.append(replace(traj, observed=observed))
    logger.info("Missingness %.3f removed %s emptied trajectories", rate, dropped)
    return dataset.with_trajectories(
        kept, note=f"missing_rate={rate!r} seed={seed} dropped={dropped}"
    )


class CensorSide(str, Enum):
    FRONT = "front"
    BACK = "back"


@dataclass(frozen=True)
class CensorCut:
    """Remove the first (FRONT) or last (BACK) ``width`` time units of every trajectory."""

    side: CensorSide
    width: float

    def __post_init__(self):
        if not self.width >= 0:
            raise ConfigError(f"censoring width must be >= 0, got {self.width}")


def front_years(width: float) -> CensorCut:
    return CensorCut(CensorSide.FRONT, width)


def back_years(width: float) -> CensorCut:
    return CensorCut(CensorSide.BACK, width)


def censor_window(dataset: Dataset, cut: CensorCut) -> Dataset:
    """
    FRONT drops visits with time < w and re-zeroes the remaining times, adding
    the removed offset to ``censor_shift``; BACK drops visits with
    time > max(time) - w. Trajectories left without an observed cell are dropped.
    """
    kept, dropped = [], 0
    for traj in dataset:
        if cut.side is CensorSide.FRONT:
            keep = traj.times >= cut.width
        else:
            keep = traj.times <= traj.times[-1] - cut.width
        if not traj.observed[keep].any():
            dropped += 1
            continue
        shift = float(traj.times[keep][0]) if cut.side is CensorSide.FRONT else 0.0
        kept.append(traj.select_visits(keep, shift))
    if dropped:
        logger.info("Censoring %s %.3f emptied %s trajectories", cut.side.value, cut.width, dropped)
    return dataset.with_trajectories(
        kept, note=f"censor_{cut.side.value}={cut.width!r} dropped={dropped}"
    )


class SyntheticGenerator(BaseClass):
    """
    Generate a synthetic benchmark and write it as JSONL
    """

    def __init__(self, output_path: Optional[str] = None):
        super().__init__(logger=logger.getChild("generator"))
        self.output_path = output_path or os.path.join(cfg.DATA_DIR, "data.jsonl")

    def run(self, spec: GeneratorSpec, missing_rate: float = 0.0) -> Dataset:
        """
        Build a dataset from a generator recipe:
            1. Sample trajectories from the family's subtype functions
            2. Inject missingness (optional)
            3. Validate
            4. Write JSONL to the output path

        Args:
            spec: generator recipe
            missing_rate: probability of removing each observed cell

        Returns:
            The generated dataset
        """
        logger.info("1. Sampling %s patients from %s (seed %s)", spec.n_patients, spec.name, spec.seed)
        dataset = generate(spec)

        logger.info("2. Applying missingness rate %s", missing_rate)
        dataset = apply_missingness(dataset, missing_rate, seed=spec.seed)

        logger.info("3. Validating %s trajectories", len(dataset))
        require_valid(dataset)

        logger.info("4. Writing %s", self.output_path)
        write_dataset(dataset, self.output_path)
        return dataset
