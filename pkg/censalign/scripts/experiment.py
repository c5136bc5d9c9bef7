"""
Experiment harness: per trial, generate data, split it 60/20/20, select
SubLign / SubNoLign hyperparameters on validation ELBO, score every method on
the test fold and aggregate mean +- std across trials.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import censalign.config as cfg
from censalign.exceptions import CensAlignError, ConfigError
from censalign.schemas import ExperimentConfig, Method, SubLignConfig
from censalign.scripts.evaluation import score_fit
from censalign.scripts.identification import identify
from censalign.scripts.kmeans_loss import kmeans_loss_fit, kmeans_loss_predict
from censalign.scripts.sublign import (
    SubLignModel,
    curves_table,
    infer,
    infer_deltas,
    train,
    validation_elbo,
)
from censalign.scripts.synthetic import apply_missingness, back_years, censor_window, front_years, generate
from censalign.utils.data import Dataset
from censalign.utils.metrics import TrialScores, benjamini_hochberg, paired_ttest
from censalign.utils.utils import BaseClass

# Get script name dynamically
SCRIPT_NAME = os.path.splitext(os.path.basename(__file__))[0]

# Set up logging
logger = cfg.setup_logging(SCRIPT_NAME)

METRICS = ("ari", "swaps", "pearson")
FOLDS = ("train", "val", "test")


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def make_folds(ids: List[str], fractions: Tuple[float, float, float], seed: int) -> Dict[str, List[str]]:
    """Random partition of ``ids`` into train / val / test; each fold keeps dataset order."""
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = int(round(fractions[0] * len(ids)))
    n_val = int(round(fractions[1] * len(ids)))
    cuts = {
        "train": set(order[:n_train]),
        "val": set(order[n_train : n_train + n_val]),
        "test": set(order[n_train + n_val :]),
    }
    return {name: [tid for i, tid in enumerate(ids) if i in members] for name, members in cuts.items()}


@dataclass
class TrialData:
    trial: int
    seed: int
    dataset: Dataset
    folds: Dict[str, List[str]]

    def fold(self, name: str) -> Dataset:
        return self.dataset.subset(self.folds[name])

    @property
    def split_sizes(self) -> Dict[str, int]:
        return {name: len(self.folds[name]) for name in FOLDS}


@dataclass
class MethodOutcome:
    trial: int
    method: str
    scores: Optional[TrialScores] = None
    selected: Optional[Dict[str, Any]] = None
    validation: Optional[float] = None
    censor_probe: Optional[Dict[str, Any]] = None
    error: Optional[str] = None
    curves: Optional[pd.DataFrame] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "method": self.method,
            "scores": None if self.scores is None else self.scores.to_dict(),
            "selected": self.selected,
            "validation": self.validation,
            "censor_probe": self.censor_probe,
            "error": self.error,
        }


# ----------------------------------------------------------------------
# Censor probe
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CensorProbeResult:
    fraction: float
    n_compared: int
    n_excluded: int

    def to_dict(self) -> dict:
        return {"fraction": self.fraction, "n_compared": self.n_compared, "n_excluded": self.n_excluded}


def _trim(traj, n_visits: int, from_front: bool):
    if traj.n_visits <= n_visits:
        return traj
    keep = np.zeros(traj.n_visits, dtype=bool)
    if from_front:
        keep[traj.n_visits - n_visits :] = True
        return traj.select_visits(keep, float(traj.times[keep][0]))
    keep[:n_visits] = True
    return traj.select_visits(keep)


def run_censor_probe(model: SubLignModel, dataset: Dataset, width: float) -> CensorProbeResult:
    """
    Fraction of trajectories whose delay inferred after removing the first
    ``width`` time units exceeds the delay inferred after removing the last
    ``width`` units. The cut that kept more visits is trimmed (from its own
    side) to the other's visit count; trajectories emptied by either cut are
    excluded and counted.
    """
    front = {t.id: t for t in censor_window(dataset, front_years(width))}
    back = {t.id: t for t in censor_window(dataset, back_years(width))}
    shared = [tid for tid in dataset.ids if tid in front and tid in back]
    excluded = len(dataset) - len(shared)
    if not shared:
        return CensorProbeResult(fraction=float("nan"), n_compared=0, n_excluded=excluded)

    front_trajs, back_trajs = [], []
    for tid in shared:
        n_visits = min(front[tid].n_visits, back[tid].n_visits)
        front_trajs.append(_trim(front[tid], n_visits, from_front=True))
        back_trajs.append(_trim(back[tid], n_visits, from_front=False))
    front_deltas = infer_deltas(model, dataset.with_trajectories(front_trajs))
    back_deltas = infer_deltas(model, dataset.with_trajectories(back_trajs))
    fraction = float(np.mean(front_deltas > back_deltas))
    logger.info("Censor probe w=%s: %.3f of %s trajectories (%s excluded)", width, fraction, len(shared), excluded)
    return CensorProbeResult(fraction=fraction, n_compared=len(shared), n_excluded=excluded)


# ----------------------------------------------------------------------
# Reporting
# ----------------------------------------------------------------------


def _mean_std(values: List[float]) -> Tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else float("nan")
    return mean, std


def _metric_values(outcomes: List[MethodOutcome], method: str, metric: str) -> List[float]:
    return [
        getattr(o.scores, metric)
        for o in outcomes
        if o.method == method and o.scores is not None and getattr(o.scores, metric) is not None
    ]


def render_report(outcomes: List[MethodOutcome], methods: List[str]) -> Tuple[pd.DataFrame, str]:
    """
    One row per method with mean and sample standard deviation (N - 1) of
    every metric across the successful trials.

    Returns:
        (CSV table, aligned text table)
    """
    columns = ["method", "n_trials"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    rows, text_rows = [], []
    for method in methods:
        row: Dict[str, Any] = {
            "method": method,
            "n_trials": sum(1 for o in outcomes if o.method == method and o.ok),
        }
        text_row = {"METHOD": method}
        for metric in METRICS:
            mean, std = _mean_std(_metric_values(outcomes, method, metric))
            row[f"{metric}_mean"], row[f"{metric}_std"] = mean, std
            if np.isnan(mean):
                text_row[metric.upper()] = "-"
            elif np.isnan(std):
                text_row[metric.upper()] = f"{mean:.3f}"
            else:
                text_row[metric.upper()] = f"{mean:.3f} ± {std:.3f}"
        rows.append(row)
        text_rows.append(text_row)
    table = pd.DataFrame(rows, columns=columns)
    text_table = pd.DataFrame(text_rows, columns=["METHOD"] + [m.upper() for m in METRICS])
    text = text_table.to_string(index=False) if len(text_table) else "  ".join(text_table.columns)
    return table, text + "\n"


def significance_table(outcomes: List[MethodOutcome], methods: List[str]) -> pd.DataFrame:
    """Paired t-tests of SubLign against every other method, BH-adjusted across all rows."""
    columns = ["method", "metric", "n_trials", "t", "p", "degenerate", "p_adjusted"]
    reference = Method.SUBLIGN.value
    if reference not in methods:
        return pd.DataFrame(columns=columns)
    rows = []
    for method in methods:
        if method == reference:
            continue
        for metric in METRICS:
            pairs = []
            for trial in sorted({o.trial for o in outcomes}):
                a = _trial_metric(outcomes, reference, trial, metric)
                b = _trial_metric(outcomes, method, trial, metric)
                if a is not None and b is not None:
                    pairs.append((a, b))
            if len(pairs) < 2:
                continue
            result = paired_ttest([a for a, _ in pairs], [b for _, b in pairs])
            rows.append(
                {
                    "method": method,
                    "metric": metric,
                    "n_trials": len(pairs),
                    "t": result.t,
                    "p": result.p,
                    "degenerate": result.degenerate,
                }
            )
    table = pd.DataFrame(rows, columns=columns[:-1])
    table["p_adjusted"] = benjamini_hochberg(table["p"].to_numpy(dtype=float)) if len(table) else []
    return table


def _trial_metric(outcomes: List[MethodOutcome], method: str, trial: int, metric: str) -> Optional[float]:
    for o in outcomes:
        if o.method == method and o.trial == trial and o.scores is not None:
            return getattr(o.scores, metric)
    return None


@dataclass
class ExperimentReport:
    table: pd.DataFrame
    text: str
    significance: pd.DataFrame
    outcomes: List[MethodOutcome] = field(default_factory=list)
    failed_methods: List[str] = field(default_factory=list)


# ----------------------------------------------------------------------
# Experiment
# ----------------------------------------------------------------------


class Experiment(BaseClass):
    """
    Run a synthetic experiment and write report tables, raw per-trial
    results, folds and decoded curves
    """

    def __init__(self, out_dir: Optional[str] = None):
        super().__init__(logger=logger.getChild("experiment"))
        self.out_dir = out_dir or cfg.RESULTS_DIR

    def run(self, config: ExperimentConfig) -> ExperimentReport:
        """
        Run every trial:
            1. Generate each trial's dataset and folds
            2. Train every (trial, method, grid point) on the thread pool
            3. Select on validation, score on test, probe censoring
            4. Aggregate and write the reports
        """
        methods = [m.value for m in config.methods]
        grid = config.grid_points()
        logger.info(
            "Experiment %s: %s trials, methods %s, %s grid points",
            config.generator.name,
            config.n_trials,
            methods,
            len(grid),
        )

        logger.info("1. Generating data and folds")
        trials = [self._prepare_trial(config, t) for t in range(config.n_trials)]
        for data in trials:
            self.write_json(data.folds, os.path.join(self.out_dir, "folds", f"trial-{data.trial}.json"))

        logger.info("2. Fitting on %s worker threads", config.max_workers)
        fitted = self._fit_concurrent(config, trials, methods, grid)

        logger.info("3. Selecting, scoring and probing")
        outcomes = []
        for data in trials:
            for method in methods:
                outcome = self._finish(config, data, method, fitted)
                outcomes.append(outcome)
                self.write_json(
                    outcome.to_dict(),
                    os.path.join(self.out_dir, "raw", f"trial-{data.trial}-{method}.json"),
                )
                if outcome.curves is not None:
                    self.save_table(
                        outcome.curves,
                        os.path.join(self.out_dir, "curves", f"trial-{data.trial}-{method}.csv"),
                    )

        logger.info("4. Writing reports")
        table, text = render_report(outcomes, methods)
        significance = significance_table(outcomes, methods)
        self.save_table(table, os.path.join(self.out_dir, "report.csv"))
        with open(os.path.join(self.out_dir, "report.txt"), "w", encoding="utf-8", newline="\n") as file:
            file.write(text)
        self.save_table(significance, os.path.join(self.out_dir, "significance.csv"))
        logger.info("\n%s", text)

        failed = [m for m in methods if not any(o.ok for o in outcomes if o.method == m)]
        for method in failed:
            logger.error("Method %s failed in every trial", method)
        return ExperimentReport(table, text, significance, outcomes, failed)

    def _prepare_trial(self, config: ExperimentConfig, trial: int) -> TrialData:
        seed = trial_seed(config.seed, trial)
        spec = config.generator.model_copy(update={"seed": seed})
        dataset = apply_missingness(generate(spec), config.missing_rate, seed=seed)
        folds = make_folds(dataset.ids, config.split_fractions, seed)
        logger.info("Trial %s: %s trajectories, folds %s", trial, len(dataset), {k: len(v) for k, v in folds.items()})
        return TrialData(trial=trial, seed=seed, dataset=dataset, folds=folds)

    def _fit_task(self, data: TrialData, method: str, sublign: SubLignConfig, grid_index: int):
        train_fold, val_fold = data.fold("train"), data.fold("val")
        if method in (Method.SUBLIGN.value, Method.SUBNOLIGN.value):
            result = train(train_fold, sublign, aligned=method == Method.SUBLIGN.value)
            return result.model, validation_elbo(result.model, val_fold, seed=data.seed)
        if method == Method.KMEANS_LOSS.value:
            result = kmeans_loss_fit(train_fold, sublign.k_clusters, grid=sublign.grid, seed=data.seed)
            # lower objective is better; negate so every criterion is maximized
            return result, -kmeans_loss_predict(result, val_fold, sublign.grid).objective
        return None, None

    def _fit_concurrent(
        self,
        config: ExperimentConfig,
        trials: List[TrialData],
        methods: List[str],
        grid: List[SubLignConfig],
    ) -> Dict[Tuple[int, str, int], Tuple[Any, Any]]:
        tasks = {}
        for data in trials:
            for method in methods:
                if method in (Method.SUBLIGN.value, Method.SUBNOLIGN.value):
                    for index, point in enumerate(grid):
                        tasks[(data.trial, method, index)] = (data, point.model_copy(update={"seed": data.seed}))
                elif method == Method.KMEANS_LOSS.value:
                    tasks[(data.trial, method, 0)] = (data, config.sublign)

        fitted: Dict[Tuple[int, str, int], Tuple[Any, Any]] = {}
        with ThreadPoolExecutor(max_workers=config.max_workers) as executor:
            future_to_key = {
                executor.submit(self._fit_task, data, key[1], point, key[2]): key
                for key, (data, point) in tasks.items()
            }
            for future in as_completed(future_to_key):
                key = future_to_key[future]
                try:
                    fitted[key] = future.result()
                    logger.info("Fitted trial %s %s grid point %s", *key)
                except Exception as e:
                    logger.error("Fit failed for trial %s %s grid point %s: %s", *key, e)
                    fitted[key] = (None, e)
        return fitted

    def _finish(
        self,
        config: ExperimentConfig,
        data: TrialData,
        method: str,
        fitted: Dict[Tuple[int, str, int], Tuple[Any, Any]],
    ) -> MethodOutcome:
        outcome = MethodOutcome(trial=data.trial, method=method)
        test_fold = data.fold("test")
        try:
            if method == Method.IDENTIFY.value:
                result = identify(test_fold, test_fold.link, config.sublign.k_clusters)
                outcome.curves = curves_table(result.theta_hat, result.link, self._t_max(config))
                outcome.scores = self._score(result, test_fold, data, method)
                return outcome

            candidates = sorted(
                (key[2], value) for key, value in fitted.items() if key[:2] == (data.trial, method)
            )
            good = [(i, fit, crit) for i, (fit, crit) in candidates if fit is not None]
            if not good:
                errors = [str(crit) for _, (_, crit) in candidates]
                raise CensAlignError(f"every fit failed: {errors[:3]}")
            # first index wins ties so selection is order-independent
            index, fit, criterion = max(good, key=lambda item: (item[2], -item[0]))
            outcome.validation = float(criterion)

            if method == Method.KMEANS_LOSS.value:
                prediction = kmeans_loss_predict(fit, test_fold, config.sublign.grid)
                outcome.selected = {"start_objectives": fit.start_objectives}
                outcome.curves = curves_table(fit.theta, fit.link, self._t_max(config))
                outcome.scores = self._score(prediction, test_fold, data, method)
                return outcome

            outcome.selected = fit.config.model_dump(mode="json")
            result = infer(fit, test_fold, config.sublign.k_clusters)
            outcome.curves = curves_table(result.tau, result.link, self._t_max(config))
            outcome.scores = self._score(result, test_fold, data, method)
            if config.censor_window is not None and method == Method.SUBLIGN.value:
                outcome.censor_probe = run_censor_probe(fit, test_fold, config.censor_window).to_dict()
        except (CensAlignError, ValueError, ArithmeticError) as e:
            logger.error("Trial %s %s failed: %s", data.trial, method, e)
            outcome.error = f"{type(e).__name__}: {e}"
            outcome.curves = None
        return outcome

    @staticmethod
    def _score(fit, test_fold: Dataset, data: TrialData, method: str) -> TrialScores:
        scores = score_fit(fit, test_fold, trial=data.trial, method=method)
        scores.split_sizes = data.split_sizes
        return scores

    @staticmethod
    def _t_max(config: ExperimentConfig) -> float:
        return config.generator.t_max + config.sublign.grid.delta_max


def load_experiment_config(path: str) -> ExperimentConfig:
    reader = BaseClass(logger=logger.getChild("config"))
    try:
        payload = reader.read_json(path)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Cannot read experiment config {path}: {e}") from e
    return ExperimentConfig.from_dict(payload)
