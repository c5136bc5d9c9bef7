import numpy as np
import pytest

from censalign.schemas import AlignmentGrid, GeneratorFamily, GeneratorSpec, LinkFamily, LinkSpec, SubLignConfig
from censalign.scripts.sublign import SubLignModel
from censalign.utils.data import Dataset, Trajectory

SIGMOID_1D = LinkSpec(family=LinkFamily.SIGMOID, degree=1)
QUADRATIC = LinkSpec(family=LinkFamily.IDENTITY, degree=2)


def rig_decoder(model: SubLignModel, theta) -> SubLignModel:
    """Make the decoder ignore z and always emit ``theta`` (flattened D x (P+1))."""
    model.decoder.W2.data = np.zeros_like(model.decoder.W2.data)
    model.decoder.b2.data = np.asarray(theta, dtype=float).reshape(-1)
    return model


def rig_prior_posterior(model: SubLignModel) -> SubLignModel:
    """q(z) = N(0, I) for every input."""
    for head in (model.mu_head, model.logvar_head):
        head.W2.data = np.zeros_like(head.W2.data)
        head.b2.data = np.zeros_like(head.b2.data)
    return model


@pytest.fixture
def tiny_config():
    return SubLignConfig(
        latent_dim=2,
        rnn_hidden=6,
        mlp_hidden=6,
        epochs=4,
        learning_rate=0.01,
        grid=AlignmentGrid(delta_max=4.0, step=0.2),
        seed=7,
    )


@pytest.fixture
def two_trajectories():
    return Dataset(
        (
            Trajectory.from_rows("a", [0.0, 1.0, 2.5], [[0.1, 1.0], [0.2, None], [0.4, 3.0]]),
            Trajectory.from_rows("b", [0.0, 0.5], [[0.3, 2.0], [None, 2.5]], true_subtype=1, true_delta=1.5),
        ),
        dim=2,
        link=QUADRATIC,
    )


@pytest.fixture
def small_sigmoid_spec():
    return GeneratorSpec(family=GeneratorFamily.SIGMOID, n_patients=24, n_visits=4, noise_var=0.0, seed=3)


@pytest.fixture
def rigged_sigmoid_model(tiny_config):
    """1-D sigmoid model whose decoder always returns sigma(-4 + t) and whose posterior is the prior."""
    model = SubLignModel(tiny_config, dim=1, link=SIGMOID_1D)
    rig_decoder(model, [-4.0, 1.0])
    return rig_prior_posterior(model)


def sigmoid_trajectory(tid: str, times, delta: float, label: int = 0) -> Trajectory:
    times = np.asarray(times, dtype=float)
    values = 1.0 / (1.0 + np.exp(-(-4.0 + times + delta)))
    return Trajectory(
        id=tid,
        times=times,
        values=values.reshape(-1, 1),
        observed=np.ones((len(times), 1), dtype=bool),
        true_subtype=label,
        true_delta=delta,
    )
