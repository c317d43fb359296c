"""Shared fixtures and model builders for the test suite"""

from pathlib import Path

import numpy as np
import pytest

from hidden_order_hmm.hmm import HmmModel
from hidden_order_hmm.hsmm import HsmmModel
from hidden_order_hmm.patches import Label, Patch

FIXTURES = Path(__file__).parent / "fixtures"


def three_state_generator() -> HmmModel:
    """Buy / neutral / sell generator with the pooled market-member estimates"""
    stay = np.array([0.89, 0.85, 0.89])
    transition = np.empty((3, 3))
    for i in range(3):
        transition[i] = (1.0 - stay[i]) / 2.0
        transition[i, i] = stay[i]
    buy = np.array([0.95, 0.51, 0.06])
    return HmmModel(
        transition=transition,
        emission=np.column_stack((1.0 - buy, buy)),
        initial=np.full(3, 1.0 / 3.0),
    )


def uniform_sojourn_hsmm(low: int = 5, high: int = 15, max_sojourn: int = 30) -> HsmmModel:
    """Two well-separated states, sojourns uniform on {low..high}"""
    sojourn = np.zeros((2, max_sojourn))
    sojourn[:, low - 1 : high] = 1.0 / (high - low + 1)
    return HsmmModel(
        transition=np.array([[0.0, 1.0], [1.0, 0.0]]),
        emission=np.array([[0.1, 0.9], [0.9, 0.1]]),
        initial=np.array([0.5, 0.5]),
        sojourn=sojourn,
    )


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def generator_model() -> HmmModel:
    return three_state_generator()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def make_patch(**overrides) -> Patch:
    """A buy patch of 20 transactions with consistent metrics, fields overridable"""
    values = dict(
        member_id="M001",
        period=2004,
        label=Label.BUY,
        state=0,
        first_index=0,
        last_index=19,
        t_first=1073034000.0,
        t_last=1073034570.0,
        duration_T=570.0,
        N_buy=19,
        N_sell=1,
        N_tot=20,
        V_buy=19000.0,
        V_sell=1000.0,
        V_tot=20000.0,
        buy_volume_ratio=0.95,
        market_order_count=10,
        market_order_fraction=0.5,
        participation_rate=0.2,
    )
    values.update(overrides)
    return Patch(**values)
