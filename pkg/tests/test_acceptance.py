"""
Benchmark reproductions on the synthetic suites.

Everything marked ``slow`` trains full-size models over five trials and is
deselected by default; run with ``pytest -m slow``.
"""

import numpy as np
import pytest

from censalign.schemas import ExperimentConfig
from censalign.scripts.experiment import Experiment
from censalign.scripts.identification import identify
from censalign.utils.metrics import adjusted_rand_index, match_permutation
from tests.conftest import QUADRATIC
from tests.test_identification import random_instance


def _run(tmp_path_factory, name, **overrides):
    payload = {"n_trials": 5, "methods": ["sublign"], "seed": 0}
    payload.update(overrides)
    out_dir = tmp_path_factory.mktemp(name)
    return Experiment(str(out_dir)).run(ExperimentConfig.from_dict(payload))


def _mean(report, method, metric):
    row = report.table.set_index("method").loc[method]
    return row[f"{metric}_mean"]


# ----------------------------------------------------------------------
# Sigmoid benchmark
# ----------------------------------------------------------------------


@pytest.fixture(scope="module")
def sigmoid_report(tmp_path_factory):
    return _run(
        tmp_path_factory,
        "sigmoid",
        generator={"family": "sigmoid", "n_patients": 1000, "n_visits": 4, "noise_var": 0.25},
        methods=["sublign", "subnolign", "kmeans-loss"],
        preset="fast",
        censor_window=1.0,
    )


@pytest.mark.slow
def test_sublign_recovers_sigmoid_subtypes_and_stages(sigmoid_report):
    assert sigmoid_report.failed_methods == []
    assert _mean(sigmoid_report, "sublign", "ari") >= 0.85
    assert _mean(sigmoid_report, "sublign", "swaps") <= 0.15
    assert _mean(sigmoid_report, "sublign", "pearson") >= 0.75


@pytest.mark.slow
def test_baselines_rank_below_sublign(sigmoid_report):
    sublign = _mean(sigmoid_report, "sublign", "ari")
    kmeans_loss = _mean(sigmoid_report, "kmeans-loss", "ari")
    assert sublign > kmeans_loss
    assert 0.52 <= kmeans_loss <= 0.82
    assert _mean(sigmoid_report, "subnolign", "ari") < sublign


@pytest.mark.slow
def test_front_censoring_reads_as_later_stage(sigmoid_report):
    fractions = [
        o.censor_probe["fraction"] for o in sigmoid_report.outcomes if o.method == "sublign" and o.censor_probe
    ]
    assert len(fractions) == 5
    assert np.mean(fractions) > 0.6


# ----------------------------------------------------------------------
# Missingness and misspecification
# ----------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.parametrize(
    "missing_rate, threshold",
    [(0.0, 0.90), (0.5, 0.70)],
    ids=["dense", "half-missing"],
)
def test_long_sequences_with_missingness(tmp_path_factory, missing_rate, threshold):
    report = _run(
        tmp_path_factory,
        f"missing-{missing_rate}",
        generator={"family": "sigmoid", "n_patients": 1000, "n_visits": 17},
        missing_rate=missing_rate,
    )
    assert _mean(report, "sublign", "ari") >= threshold


@pytest.mark.slow
def test_monotone_spline_data_under_sigmoid_model(tmp_path_factory):
    report = _run(
        tmp_path_factory,
        "spline",
        generator={"family": "spline", "monotone": True, "n_patients": 1000},
    )
    assert _mean(report, "sublign", "ari") >= 0.60


# ----------------------------------------------------------------------
# Quadratic suite
# ----------------------------------------------------------------------


@pytest.mark.slow
def test_opposite_quadratics_are_separated_and_aligned(tmp_path_factory):
    report = _run(
        tmp_path_factory,
        "quad6",
        generator={"family": "quadratic", "case": 6, "n_patients": 1000},
        preset="quadratic",
    )
    assert _mean(report, "sublign", "ari") >= 0.95
    assert _mean(report, "sublign", "pearson") >= 0.8


@pytest.mark.slow
def test_flat_subtype_is_still_clustered(tmp_path_factory):
    report = _run(
        tmp_path_factory,
        "quad2",
        generator={"family": "quadratic", "case": 2, "n_patients": 1000},
        preset="quadratic",
    )
    assert _mean(report, "sublign", "ari") >= 0.90


# ----------------------------------------------------------------------
# Exact identification
# ----------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(100, 200), ids=[f"seed{i}" for i in range(100, 200)])
def test_identification_is_exact_on_random_instances(seed):
    theta, labels, deltas, data = random_instance(seed)
    result = identify(data, QUADRATIC, k=2)
    np.testing.assert_allclose(result.deltas, deltas, atol=1e-6)
    assert adjusted_rand_index(labels, result.labels) == pytest.approx(1.0)
    assert match_permutation(theta, result.theta_hat)[1] < 1e-6
