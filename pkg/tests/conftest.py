import numpy as np
import pytest

from rlreg.env import EnvConfig
from rlreg.evaluation import calibrate_trs
from rlreg.nn import NetworkConfig, SharedParameters, init_network
from rlreg.synthdata import PerturbationRange, generate_pair
from rlreg.trainer import A3CConfig, run_sl


@pytest.fixture(scope="session")
def pair32():
    return generate_pair(7, 32)


@pytest.fixture(scope="session")
def pair48():
    return generate_pair(3, 48)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TOY_RANGE = PerturbationRange(tx=(-3, 3, 1), ty=(0, 0, 1), angle=(0, 0, 1), scale=(1, 1, 0.05))
TOY_NET = NetworkConfig(input_size=16, conv=((8, 4, 2), (8, 3, 1), (16, 3, 1)), fc_width=64,
                        recurrent_width=64)


@pytest.fixture(scope="session")
def toy_agent():
    """Teacher-trained agent for horizontal shifts of one 16x16 pair, with its
    calibrated stopping threshold."""
    pair = generate_pair(11, 16)
    env = EnvConfig(max_steps=20, obs_size=16)
    cfg = A3CConfig(workers=1, lr=1e-3, t_max=5, max_episodes=600, env=env,
                    perturbation=TOY_RANGE, seed=0)
    shared = SharedParameters(init_network(TOY_NET, 0))
    run_sl(cfg, [pair], shared)
    trs = calibrate_trs(shared.params, [pair], env, TOY_RANGE, n_runs=16, max_steps=20)
    return shared.params, trs


# -- acceptance summary ----------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""
    def _record(number: int, passed: bool, detail: str) -> None:
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
