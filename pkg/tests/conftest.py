import numpy as np
import pytest

from vsezsl.datamodel import generate_synthetic
from vsezsl.oracle import OracleConfig, build_oracle, oracle_codebook
from vsezsl.trainer import TrainConfig, train

# desk-scale settings shared by the integration tests
ORACLE_CFG = dict(K=8, epochs=20, lr=1e-3)
TRAIN_CFG = dict(K=8, epochs=20, lr_step1=1e-4, lr_step2=1e-3, mapper_steps=100)


@pytest.fixture(scope="session")
def synth():
    return generate_synthetic(seed=0)


@pytest.fixture(scope="session")
def dataset(synth):
    return synth[0]


@pytest.fixture(scope="session")
def planted(synth):
    return synth[1]


@pytest.fixture(scope="session")
def oracle(dataset):
    return build_oracle(dataset, OracleConfig(**ORACLE_CFG), seed=101)


@pytest.fixture(scope="session")
def oracle_book(oracle, dataset):
    return oracle_codebook(oracle, dataset)


@pytest.fixture(scope="session")
def visual_ckpt(dataset, oracle):
    return train(dataset, TrainConfig(mode="visual", **TRAIN_CFG), oracle)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, one line per criterion, echoed after the run
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
