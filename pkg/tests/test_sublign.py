import math
from dataclasses import replace

import numpy as np
import pytest

import censalign.config as cfg
import censalign.scripts.sublign as sublign_module
from censalign.engine.autodiff import Tensor, forward_backward, gradient_check
from censalign.exceptions import DataValidationError, ShapeError, TrainingDivergedError
from censalign.schemas import (
    AlignmentGrid,
    CellType,
    GeneratorFamily,
    GeneratorSpec,
    LinkFamily,
    LinkSpec,
    RegType,
    SubLignConfig,
)
from censalign.scripts.sublign import (
    FitResult,
    SubLignInference,
    SubLignModel,
    SubLignTrainer,
    curves_table,
    decode_trajectory,
    grid_search_delta,
    infer,
    infer_deltas,
    log_marginal_likelihood,
    subnolign_train,
    subtype_curves,
    train,
    validation_elbo,
)
from censalign.scripts.synthetic import gen_from_params, gen_sigmoid
from censalign.utils.data import Dataset, Trajectory, pad_batch, reverse_time
from censalign.utils.dataset_io import read_dataset, write_dataset
from tests.conftest import QUADRATIC, SIGMOID_1D, rig_decoder, sigmoid_trajectory

LOG_2PI = math.log(2.0 * math.pi)


# ----------------------------------------------------------------------
# Decoder
# ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "times, delta",
    [([4.0], 0.0), ([3.0], 1.0), ([0.0], 4.0)],
    ids=["no-delay", "split", "all-delay"],
)
def test_rigged_sigmoid_decoder_crosses_half_at_four(rigged_sigmoid_model, times, delta):
    means = decode_trajectory(rigged_sigmoid_model, np.zeros(2), times, delta)
    assert means.shape == (1, 1)
    assert means[0, 0] == pytest.approx(0.5)


def test_rigged_quadratic_decoder(tiny_config):
    model = rig_decoder(SubLignModel(tiny_config, dim=1, link=QUADRATIC), [5.0, -2.2, 0.25])
    means = decode_trajectory(model, np.ones(2), [0.0, 1.0, 2.0], 0.0)
    np.testing.assert_allclose(means[:, 0], [5.0, 3.05, 1.6])


def test_decoder_layout_is_dimension_major(tiny_config):
    model = rig_decoder(SubLignModel(tiny_config, dim=2, link=QUADRATIC), [1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    means = decode_trajectory(model, np.zeros(2), [0.0, 3.0], 0.0)
    np.testing.assert_allclose(means, [[1.0, 0.0], [1.0, 3.0]])


def test_negative_delay_is_rejected(rigged_sigmoid_model):
    with pytest.raises(ShapeError):
        decode_trajectory(rigged_sigmoid_model, np.zeros(2), [0.0], -0.2)


# ----------------------------------------------------------------------
# ELBO and grid search
# ----------------------------------------------------------------------


def test_elbo_of_perfect_reconstruction_under_prior(rigged_sigmoid_model):
    full = sigmoid_trajectory("full", [0.0, 1.0, 2.0], delta=0.0)
    partial = Trajectory(
        id="partial",
        times=[0.0, 0.5],
        values=full.values[:2],
        observed=[[True], [False]],
    )
    batch = pad_batch([full, partial], dim=1)
    terms = rigged_sigmoid_model.elbo_terms(batch, np.zeros(2), rng=np.random.default_rng(0))
    size = rigged_sigmoid_model.grid.size
    expected = [-0.5 * LOG_2PI * 3 - math.log(size), -0.5 * LOG_2PI * 1 - math.log(size)]
    np.testing.assert_allclose(terms.data, expected, atol=1e-10)


@pytest.mark.parametrize("delta", [0.0, 1.4, 2.0, 4.0], ids=["zero", "inner", "two", "edge"])
def test_grid_search_recovers_generating_shift(rigged_sigmoid_model, delta):
    traj = sigmoid_trajectory("g", [0.0, 0.6, 1.5], delta=delta)
    found = grid_search_delta(rigged_sigmoid_model, pad_batch([traj], dim=1))
    assert found[0] == pytest.approx(delta)


def test_grid_search_with_coarser_grid(rigged_sigmoid_model):
    traj = sigmoid_trajectory("g", [0.0, 0.6, 1.5], delta=2.0)
    grid = AlignmentGrid(delta_max=3.0, step=0.5)
    assert grid_search_delta(rigged_sigmoid_model, pad_batch([traj], dim=1), grid)[0] == pytest.approx(2.0)


def test_constant_decoder_ties_resolve_to_zero(rigged_sigmoid_model):
    rig_decoder(rigged_sigmoid_model, [0.3, 0.0])
    traj = sigmoid_trajectory("c", [0.0, 1.0], delta=3.0)
    assert grid_search_delta(rigged_sigmoid_model, pad_batch([traj], dim=1))[0] == 0.0


def test_log_marginal_likelihood_of_exact_decoder(rigged_sigmoid_model):
    traj = sigmoid_trajectory("m", [0.0, 1.0], delta=0.0)
    data = Dataset((traj,), dim=1, link=SIGMOID_1D)
    estimate, stderr = log_marginal_likelihood(rigged_sigmoid_model, data, "m", n_samples=500, chunk=200)
    # every grid delay is equally likely a priori; only delta = 0 reconstructs exactly
    deltas = rigged_sigmoid_model.grid.points
    shifted = 1.0 / (1.0 + np.exp(-(-4.0 + traj.times[None, :] + deltas[:, None])))
    loglik = -0.5 * ((shifted - traj.values[:, 0]) ** 2).sum(axis=1) - LOG_2PI
    expected = np.log(np.mean(np.exp(loglik)))
    assert estimate == pytest.approx(expected, abs=1e-9)
    assert stderr == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("delta", [0.0, 1.0, 3.2], ids=["zero", "one", "late"])
def test_elbo_is_below_the_marginal_likelihood(tiny_config, delta):
    model = rig_decoder(SubLignModel(tiny_config, dim=1, link=SIGMOID_1D), [-4.0, 1.0])
    data = Dataset((sigmoid_trajectory("b", [0.0, 0.8, 1.6], delta=delta),), dim=1, link=SIGMOID_1D)
    estimate, stderr = log_marginal_likelihood(model, data, "b", n_samples=20_000)
    assert validation_elbo(model, data) <= estimate + 3.0 * stderr


@pytest.mark.parametrize(
    "delta, c",
    [(0.0, 1.0), (0.6, 2.0), (1.4, 2.6)],
    ids=["from-zero", "inner", "to-edge"],
)
def test_later_generation_stage_moves_the_delay_by_the_same_amount(rigged_sigmoid_model, delta, c):
    times = [0.0, 0.6, 1.5]
    batch = pad_batch([sigmoid_trajectory("a", times, delta), sigmoid_trajectory("b", times, delta + c)], dim=1)
    found = grid_search_delta(rigged_sigmoid_model, batch)
    assert found[1] - found[0] == pytest.approx(c)


def test_translated_visit_times_move_the_delay_back(rigged_sigmoid_model):
    traj = sigmoid_trajectory("a", [0.0, 0.6, 1.5], delta=2.4)
    later = Trajectory(id="b", times=traj.times + 1.0, values=traj.values, observed=traj.observed)
    found = grid_search_delta(rigged_sigmoid_model, pad_batch([traj, later], dim=1))
    np.testing.assert_allclose(found, [2.4, 1.4])


# ----------------------------------------------------------------------
# Gradients
# ----------------------------------------------------------------------


def _random_batch(rng, dim, link, n=3):
    trajectories = []
    for i in range(n):
        m = int(rng.integers(2, 5))
        times = np.concatenate([[0.0], np.sort(rng.uniform(0.1, 3.0, m - 1))])
        if link.family is LinkFamily.SIGMOID:
            values = rng.uniform(0.05, 0.95, (m, dim))
        else:
            values = rng.normal(size=(m, dim))
        observed = rng.random((m, dim)) > 0.3
        observed[0, 0] = True
        trajectories.append(Trajectory(id=f"r{i}", times=times, values=values, observed=observed))
    return pad_batch(trajectories, dim)


@pytest.mark.parametrize("seed", range(100), ids=[f"seed{i}" for i in range(100)])
def test_elbo_gradients_match_central_differences(seed):
    rng = np.random.default_rng(seed)
    link = SIGMOID_1D if seed % 2 == 0 else QUADRATIC
    config = SubLignConfig(
        latent_dim=2,
        rnn_hidden=3,
        mlp_hidden=3,
        n_mc=2,
        grid=AlignmentGrid(delta_max=2.0, step=0.5),
        seed=seed,
    )
    model = SubLignModel(config, dim=2, link=link)
    batch = _random_batch(rng, 2, link)
    deltas = rng.choice(config.grid.points, size=len(batch))
    eps = rng.standard_normal((config.n_mc, len(batch), config.latent_dim))
    error = gradient_check(lambda: model.elbo_terms(batch, deltas, eps).sum(), model.parameters(), h=1e-6)
    assert error <= 1e-4


# ----------------------------------------------------------------------
# Missing cells
# ----------------------------------------------------------------------


def _holey_dataset(junk):
    """Six 2-D trajectories whose missing cells store ``junk``."""
    rng = np.random.default_rng(5)
    trajectories = []
    for i in range(6):
        values = rng.uniform(0.1, 0.9, (4, 2))
        observed = rng.random((4, 2)) > 0.35
        observed[0] = True
        values[~observed] = junk
        trajectories.append(
            Trajectory(id=f"h{i}", times=[0.0, 0.7, 1.6, 2.4], values=values, observed=observed)
        )
    return Dataset(tuple(trajectories), dim=2, link=SIGMOID_1D)


def _elbo_and_gradients(model, batch, deltas, eps):
    terms = model.elbo_terms(batch, deltas, eps)
    return terms.data.copy(), forward_backward(-terms.sum(), model.parameters())


def _assert_same_elbo_and_gradients(model, first, second, deltas):
    eps = np.random.default_rng(0).standard_normal((1, len(first), model.config.latent_dim))
    terms_a, grads_a = _elbo_and_gradients(model, first, deltas, eps)
    terms_b, grads_b = _elbo_and_gradients(model, second, deltas, eps)
    np.testing.assert_array_equal(terms_a, terms_b)
    for name in grads_a:
        np.testing.assert_array_equal(grads_a[name], grads_b[name])


@pytest.mark.parametrize("junk", [123.0, -7.5], ids=["large", "negative"])
def test_stored_value_of_a_missing_cell_changes_nothing(tiny_config, junk):
    model = SubLignModel(tiny_config, dim=2, link=SIGMOID_1D)
    clean, dirty = _holey_dataset(0.0), _holey_dataset(junk)
    first, second = pad_batch(clean.trajectories, 2), pad_batch(dirty.trajectories, 2)
    np.testing.assert_array_equal(first.inputs, second.inputs)
    _assert_same_elbo_and_gradients(model, first, second, np.full(len(clean), 0.6))
    fit_a, fit_b = infer(model, clean, k=2), infer(model, dirty, k=2)
    np.testing.assert_array_equal(fit_a.z, fit_b.z)
    np.testing.assert_array_equal(fit_a.delta_hat, fit_b.delta_hat)


def test_masked_batch_cells_are_ignored_by_elbo_and_grid_search(tiny_config):
    model = SubLignModel(tiny_config, dim=2, link=SIGMOID_1D)
    batch = pad_batch(_holey_dataset(0.0).trajectories, 2)
    junk = replace(batch, values=np.where(batch.cell_mask > 0, batch.values, 1e3))
    assert not np.array_equal(junk.values, batch.values)
    _assert_same_elbo_and_gradients(model, batch, junk, np.full(len(batch), 1.2))
    np.testing.assert_array_equal(grid_search_delta(model, batch), grid_search_delta(model, junk))


# ----------------------------------------------------------------------
# Training and inference
# ----------------------------------------------------------------------


@pytest.fixture
def sigmoid_data(small_sigmoid_spec):
    return gen_sigmoid(small_sigmoid_spec)


def test_training_is_deterministic(sigmoid_data, tiny_config):
    first = train(sigmoid_data, tiny_config)
    second = train(sigmoid_data, tiny_config)
    assert first.elbo_log == second.elbo_log
    assert len(first.elbo_log) == tiny_config.epochs
    assert all(np.isfinite(first.elbo_log))
    for name, value in first.model.snapshot().items():
        np.testing.assert_array_equal(value, second.model.snapshot()[name])


def test_best_epoch_is_kept(sigmoid_data, tiny_config):
    result = train(sigmoid_data, tiny_config)
    assert result.best_elbo == max(result.elbo_log)


def test_training_with_vanilla_cell_and_regularization(sigmoid_data, tiny_config):
    config = tiny_config.model_copy(update={"cell": CellType.VANILLA, "reg_type": RegType.L2, "reg_strength": 0.1})
    assert np.isfinite(train(sigmoid_data, config).best_elbo)


def test_nan_objective_stops_training(sigmoid_data, tiny_config, monkeypatch):
    monkeypatch.setattr(
        SubLignModel,
        "elbo_terms",
        lambda self, batch, deltas, eps=None, rng=None: Tensor(np.full(len(batch), np.nan)),
    )
    with pytest.raises(TrainingDivergedError) as excinfo:
        train(sigmoid_data, tiny_config)
    assert excinfo.value.epoch == 0


def test_empty_dataset_is_rejected(tiny_config):
    with pytest.raises(DataValidationError):
        train(Dataset((), dim=1, link=SIGMOID_1D), tiny_config)


def test_single_subtype_inference(sigmoid_data, tiny_config):
    model = train(sigmoid_data, tiny_config).model
    fit = infer(model, sigmoid_data, k=1)
    assert set(fit.labels) == {0}
    np.testing.assert_allclose(fit.centers[0], fit.z.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(fit.tau[0], model.theta(Tensor(fit.z.mean(axis=0))).data[0], atol=1e-8)
    assert fit.tau.shape == (1, 3, 2)
    assert np.all((fit.delta_hat >= 0) & (fit.delta_hat <= tiny_config.grid.delta_max))


def test_identical_trajectories_get_identical_results(tiny_config):
    traj = sigmoid_trajectory("a", [0.0, 0.4, 1.1], delta=1.0)
    twin = sigmoid_trajectory("b", [0.0, 0.4, 1.1], delta=1.0)
    other = sigmoid_trajectory("c", [0.0, 2.0], delta=0.0, label=1)
    data = Dataset((traj, twin, other), dim=1, link=SIGMOID_1D)
    model = SubLignModel(tiny_config, dim=1, link=SIGMOID_1D)
    fit = infer(model, data, k=2)
    np.testing.assert_allclose(fit.z[0], fit.z[1], rtol=0, atol=1e-12)
    assert fit.delta_hat[0] == fit.delta_hat[1]
    assert fit.labels[0] == fit.labels[1]


def test_subnolign_has_no_delays(sigmoid_data, tiny_config):
    model = subnolign_train(sigmoid_data, tiny_config).model
    fit = infer(model, sigmoid_data, k=2)
    assert fit.delta_hat is None and fit.method == "subnolign"
    np.testing.assert_array_equal(infer_deltas(model, sigmoid_data), np.zeros(len(sigmoid_data)))


def test_subnolign_is_sublign_with_delays_pinned_at_zero(tiny_config, monkeypatch):
    rng = np.random.default_rng(4)
    times = [np.concatenate([[0.0], np.sort(rng.uniform(0.2, 4.0, 3))]) for _ in range(12)]
    data = gen_from_params(np.asarray(cfg.SIGMOID_SUBTYPES), LinkSpec(), np.arange(12) % 2, np.zeros(12), times)
    unaligned = subnolign_train(data, tiny_config)
    monkeypatch.setattr(sublign_module, "grid_search_delta", lambda model, batch, grid=None: np.zeros(len(batch)))
    pinned = train(data, tiny_config)
    assert pinned.elbo_log == unaligned.elbo_log
    for name, value in unaligned.model.snapshot().items():
        np.testing.assert_array_equal(value, pinned.model.snapshot()[name])


def _mean_abs_residual(model, dataset):
    fit = infer(model, dataset, k=2)
    residuals = [
        np.abs(decode_trajectory(model, fit.z[i], traj.times, fit.delta_hat[i]) - traj.values)[traj.observed]
        for i, traj in enumerate(dataset)
    ]
    return float(np.mean(np.concatenate(residuals)))


def test_training_fits_noiseless_sigmoid_data():
    data = gen_sigmoid(
        GeneratorSpec(family=GeneratorFamily.SIGMOID, n_patients=200, n_visits=4, noise_var=0.0, seed=0)
    )
    config = SubLignConfig(
        latent_dim=2,
        rnn_hidden=20,
        mlp_hidden=20,
        learning_rate=0.02,
        epochs=1500,
        kl_weight=0.0,
        seed=0,
    )
    assert _mean_abs_residual(train(data, config).model, data) < 0.05


def test_zero_clusters_is_rejected(sigmoid_data, tiny_config):
    with pytest.raises(ShapeError):
        infer(SubLignModel(tiny_config, 3, LinkSpec()), sigmoid_data, k=0)


def test_log_marginal_likelihood_of_reverse_model_reads_reversed_series(tiny_config):
    forward_model = SubLignModel(tiny_config, dim=1, link=SIGMOID_1D)
    reverse_model = SubLignModel(tiny_config.model_copy(update={"reverse": True}), dim=1, link=SIGMOID_1D)
    data = Dataset((sigmoid_trajectory("r", [0.0, 0.5, 1.7], delta=1.0),), dim=1, link=SIGMOID_1D)
    expected = log_marginal_likelihood(forward_model, reverse_time(data), "r", n_samples=400, chunk=200)
    assert log_marginal_likelihood(reverse_model, data, "r", n_samples=400, chunk=200) == expected


def test_validation_elbo_is_reproducible(sigmoid_data, tiny_config):
    model = train(sigmoid_data, tiny_config).model
    assert validation_elbo(model, sigmoid_data, seed=3) == validation_elbo(model, sigmoid_data, seed=3)


def test_reverse_time_training(sigmoid_data, tiny_config):
    config = tiny_config.model_copy(update={"reverse": True, "epochs": 2})
    assert len(train(sigmoid_data, config).elbo_log) == 2


# ----------------------------------------------------------------------
# Persistence and pipeline steps
# ----------------------------------------------------------------------


def test_model_dict_round_trip(sigmoid_data, tiny_config):
    model = train(sigmoid_data, tiny_config).model
    restored = SubLignModel.from_dict(model.to_dict())
    before, after = infer(model, sigmoid_data, k=2), infer(restored, sigmoid_data, k=2)
    np.testing.assert_array_equal(before.z, after.z)
    np.testing.assert_array_equal(before.delta_hat, after.delta_hat)


def test_model_file_missing_key():
    with pytest.raises(DataValidationError):
        SubLignModel.from_dict({"config": {}, "link": {"family": "sigmoid", "degree": 1}})


def test_fit_result_round_trip(sigmoid_data, tiny_config):
    fit = infer(SubLignModel(tiny_config, 3, LinkSpec()), sigmoid_data, k=2)
    restored = FitResult.from_dict(fit.to_dict())
    assert restored.ids == fit.ids
    np.testing.assert_array_equal(restored.labels, fit.labels)
    np.testing.assert_allclose(restored.tau, fit.tau)


def test_curves_table_shape():
    tau = np.array([[[-4.0, 1.0], [0.0, 1.0]], [[-1.0, 1.0], [2.0, 0.0]]])
    table = curves_table(tau, LinkSpec(), t_max=8.0, n_points=5)
    assert list(table.columns) == ["subtype", "t", "dim_0", "dim_1"]
    assert len(table) == 10
    row = table[(table.subtype == 0) & (table.t == 4.0)].iloc[0]
    assert row.dim_0 == pytest.approx(0.5)


def test_subtype_curves_evaluate_the_fitted_polynomials(sigmoid_data, tiny_config):
    fit = infer(SubLignModel(tiny_config, 3, LinkSpec()), sigmoid_data, k=2)
    curves = subtype_curves(fit, [0.0, 2.5, 5.0])
    assert curves.shape == (2, 3, 3)
    expected = 1.0 / (1.0 + np.exp(-(fit.tau[1, 2, 0] + fit.tau[1, 2, 1] * 2.5)))
    assert curves[1, 1, 2] == pytest.approx(expected)


def test_trainer_and_inference_write_outputs(tmp_path, sigmoid_data, tiny_config):
    data_path, model_path, fit_path = tmp_path / "d.jsonl", tmp_path / "model.json", tmp_path / "fit" / "fit.json"
    write_dataset(sigmoid_data, str(data_path))
    SubLignTrainer().run(read_dataset(str(data_path)), tiny_config, str(model_path))
    fit = SubLignInference().run(str(model_path), sigmoid_data, 2, str(fit_path))
    assert fit_path.exists() and (tmp_path / "fit" / "curves.csv").exists()
    assert len(fit.elbo_log) == tiny_config.epochs
