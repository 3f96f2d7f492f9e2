import numpy as np
import pytest

from xea import data, gbdt, mlp


@pytest.fixture(scope="session")
def schema():
    return data.make_schema()


@pytest.fixture(scope="session")
def small_dataset(schema):
    return data.generate(schema, 1500, 8, seed=7)


@pytest.fixture(scope="session")
def trained_mlp(small_dataset):
    model = mlp.init(small_dataset.schema.size, [16], seed=3)
    config = mlp.TrainConfig(epochs=60, seed=3)
    return mlp.train(model, small_dataset, config)


@pytest.fixture(scope="session")
def trained_gbdt(small_dataset):
    return gbdt.train_gbdt(small_dataset, n_trees=30, seed=5)


@pytest.fixture(scope="session")
def background(small_dataset):
    return np.array(small_dataset.X[:16])
