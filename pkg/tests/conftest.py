import pytest

from rgrl.envs import OpfBattery, SafeCartPole, SpringPendulum


@pytest.fixture
def cartpole():
    return SafeCartPole()


@pytest.fixture
def pendulum():
    return SpringPendulum()


@pytest.fixture(scope="session")
def opf():
    return OpfBattery()


@pytest.fixture(scope="session")
def opf_model(opf):
    return opf.constraint_model()
