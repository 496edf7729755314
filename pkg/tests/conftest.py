import numpy as np
import pytest

from kktforge import data, kkt, net, trainer


def random_params(rng, k=6, d=4, scale=1.0) -> net.NetworkParams:
    return net.NetworkParams(
        rng.normal(size=(k, d)) * scale,
        rng.normal(size=k) * scale,
        rng.normal(size=k) * scale,
    )


def away_from_boundaries(params, rng, margin=1e-3, scale=1.5):
    """Random input whose preactivations all clear `margin`."""
    while True:
        x = rng.normal(size=params.input_dim) * scale
        if np.min(np.abs(params.W @ x + params.b)) > margin:
            return x


def planted_exact_kkt(d=2, a=2.0, v=1.0):
    """A 2-neuron network and symmetric 2-point set forming an exact
    stationary point: theta equals the multiplier-weighted gradient sum.

    Points +/- a*e1 with labels +/-1; lambda = 1/sqrt(1+a^2) for both.
    Requires a > 1 so each neuron is strictly inactive on the other point.
    """
    assert a > 1
    lam = 1.0 / np.sqrt(1.0 + a * a)
    W = np.zeros((2, d))
    W[0, 0] = a * v * lam
    W[1, 0] = -a * v * lam
    b = np.array([v * lam, v * lam])
    vv = np.array([v, -v])
    params = net.NetworkParams(W, b, vv)
    X = np.zeros((2, d))
    X[0, 0] = a
    X[1, 0] = -a
    dataset = data.LabeledDataset(X, np.array([1.0, -1.0]))
    return params, dataset, np.array([lam, lam])


@pytest.fixture(scope="session")
def two_point_dataset():
    X = np.zeros((2, 3))
    X[0, 0] = 1.0
    X[1, 0] = -1.0
    return data.LabeledDataset(X, np.array([1.0, -1.0]))


@pytest.fixture(scope="session")
def two_point_trained(two_point_dataset):
    cfg = trainer.TrainConfig(width=4, max_epochs=20_000, target_loss=1e-10, seed=3)
    return trainer.train_to_kkt(two_point_dataset, cfg)


@pytest.fixture(scope="session")
def small_trained_fixture():
    """One near-KKT fixture at the n=30/d=15/k=40 scale, with certificate."""
    ds = data.gen_sphere_dataset(30, 15, seed=7)
    cfg = trainer.TrainConfig(width=40, max_epochs=30_000, target_loss=1e-5, seed=7)
    params, _ = trainer.train_to_kkt(ds, cfg)
    lam = kkt.fit_multipliers(params, ds)
    cert = kkt.certify(params, ds, lam)
    return params, ds, lam, cert
