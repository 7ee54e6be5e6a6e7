import pytest

from sdauth import crypto
from sdauth.simnet import adversary, ivn, scenario


@pytest.fixture(scope="session")
def small_plan():
    return scenario.scalability_plan(50)


@pytest.fixture(scope="session")
def small_world(small_plan):
    return scenario.build_world(small_plan, crypto.PROFILE_ED25519)


@pytest.fixture(scope="session")
def attack_world():
    return scenario.build_world(adversary.attack_plan(), crypto.PROFILE_ED25519)


@pytest.fixture(scope="session")
def ivn_plan():
    return ivn.generate_ivn_plan()


@pytest.fixture(scope="session")
def ivn_world(ivn_plan):
    # RSA-2048 for all 660 identities: the slowest fixture in the suite
    return scenario.build_world(ivn_plan, crypto.DEFAULT_PROFILE)


@pytest.hookimpl(wrapper=True, tryfirst=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    setattr(item, "rep_" + rep.when, rep)
    return rep
