"""Shared fixtures: small blob tasks and a solver trained on them."""

import numpy as np
import pytest

from genetic_rehearsal import SolverNetwork, TrainConfig, make_blobs, train

BLOB_TRAIN_CFG = TrainConfig(epochs=60, batch_size=32, learning_rate=0.01, seed=3)


def diagonal_solver(scale: float = 10.0) -> SolverNetwork:
    """Two inputs, two classes; class 0 wins where x0 > x1.

    Confidence for class 0 is ``sigmoid(2 * scale * (x0 - x1))``.
    """
    return SolverNetwork(
        w1=np.eye(2),
        b1=np.zeros(2),
        w2=np.array([[scale, -scale], [-scale, scale]]),
        b2=np.zeros(2),
    )


@pytest.fixture(scope="session")
def blob_data():
    return make_blobs(200, 3, rng=1), make_blobs(100, 3, rng=2)


@pytest.fixture(scope="session")
def blob_solver(blob_data):
    """Trained 2-16-3 solver; copy it before training it further."""
    train_ds, _ = blob_data
    net, _ = train(SolverNetwork.initialize(2, 16, 3, rng=0), train_ds, BLOB_TRAIN_CFG)
    return net
