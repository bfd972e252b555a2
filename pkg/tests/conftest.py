import json
from pathlib import Path

import numpy as np
import pytest

from bailout import config
from bailout.levy_model import AuxiliaryProblem, JumpLaw, LevyModel, RegimeModel
from bailout.payoff import PayoffFunction

MODELS = Path(__file__).resolve().parents[1] / "models"

SQRT2 = float(np.sqrt(2.0))


def brownian_problem(payoff=None, **kw):
    """gamma=1, sigma=sqrt(2), delta=0.5, beta=1.5, q=0.1, r=0.5."""
    args = dict(delta=0.5, beta=1.5, q=0.1, r=0.5)
    args.update(kw)
    return AuxiliaryProblem(LevyModel.brownian(1.0, SQRT2), payoff=payoff or PayoffFunction.zero(), **args)


def cl_problem(payoff=None, c=2.0, lam=1.0, mu=1.0, **kw):
    args = dict(delta=0.5, beta=1.5, q=0.1, r=0.5)
    args.update(kw)
    return AuxiliaryProblem(LevyModel.cramer_lundberg(c, lam, mu), payoff=payoff or PayoffFunction.zero(), **args)


def concave_payoff():
    return PayoffFunction(np.array([0.0, 1.0, 2.0, 4.0]), np.array([0.0, 1.2, 1.9, 2.5]), 0.2)


def two_state_regime(beta=2.0):
    doc = json.loads((MODELS / "two_state.json").read_text())["regime"]
    doc["beta"] = beta
    return config.regime_from_dict(doc)


def symmetric_regime():
    m = LevyModel.cramer_lundberg(2.0, 1.0, 1.0)
    return RegimeModel(
        Q=np.array([[-0.4, 0.4], [0.4, -0.4]]),
        levy=[m, m],
        delta=[0.8, 0.8],
        discount=[0.1, 0.1],
        beta=2.0,
        jumps={(0, 1): JumpLaw(), (1, 0): JumpLaw()},
    )


@pytest.fixture
def bm_prob():
    return brownian_problem()


@pytest.fixture
def cl_prob():
    return cl_problem()


@pytest.fixture(scope="session")
def regime():
    return two_state_regime()


# ---- acceptance reporting ---------------------------------------------------
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
