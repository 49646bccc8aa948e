import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from tripletdiff.diffusion.schedule import NoiseSchedule, make_schedule, q_sample, timestep_embedding
from tripletdiff.errors import ConfigError, ContractError


def test_alpha_bar_two_step():
    s = NoiseSchedule(np.array([0.1, 0.2]))
    np.testing.assert_allclose(s.alpha_bar, [0.9, 0.72])


def test_linear_1000_decreasing_and_small():
    s = make_schedule("linear", 1000, 1e-4, 0.02)
    prod, expect = 1.0, []
    for i in range(1000):  # independent running product
        prod *= 1.0 - (1e-4 + (0.02 - 1e-4) * i / 999)
        expect.append(prod)
    np.testing.assert_allclose(s.alpha_bar, expect, rtol=1e-10)
    assert np.all(np.diff(s.alpha_bar) < 0) and s.alpha_bar[-1] < 0.01


def test_cosine_schedule_valid():
    s = make_schedule("cosine", 200)
    assert np.all(np.diff(s.alpha_bar) < 0) and s.alpha_bar[0] > 0.99


@pytest.mark.parametrize("args", [("linear", 0), ("linear", 10, 0.0, 0.1), ("linear", 10, 0.1, 1.0), ("sigmoid", 10)])
def test_schedule_errors(args):
    with pytest.raises(ConfigError):
        make_schedule(*args)


def test_q_sample_special_cases():
    s = NoiseSchedule(np.array([0.1, 0.2]))
    x0 = np.array([0.3, -0.5])
    np.testing.assert_allclose(q_sample(x0, 2, np.zeros(2), s), math.sqrt(0.72) * x0)
    assert q_sample(1.0, 2, 1.0, s) == pytest.approx(1.3777, abs=1e-4)
    np.testing.assert_allclose(q_sample(x0, 1, x0 * 0 + 7, NoiseSchedule(np.array([1e-300]))), x0)
    with pytest.raises(IndexError):
        q_sample(x0, 3, x0, s)
    with pytest.raises(ContractError):
        q_sample(x0, 1, np.zeros(3), s)


def test_q_sample_matches_stepwise_chain():
    """Simulate x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps_t and compare moments."""
    beta = np.array([0.1, 0.2])
    rng = np.random.default_rng(0)
    n = 100_000
    x = np.ones(n)
    for b in beta:
        x = np.sqrt(1 - b) * x + np.sqrt(b) * rng.standard_normal(n)
    ab = NoiseSchedule(beta).alpha_bar[-1]
    assert abs(x.mean() - np.sqrt(ab)) < 4 * np.sqrt((1 - ab) / n)
    assert abs(x.var() - (1 - ab)) < 0.01


def test_q_sample_torch_batch():
    s = make_schedule("linear", 10, 0.01, 0.2)
    x0 = torch.ones(3, 3, 2, 2)
    t = torch.tensor([1, 5, 10])
    out = q_sample(x0, t, torch.zeros_like(x0), s)
    np.testing.assert_allclose(out[:, 0, 0, 0].numpy(), np.sqrt(s.alpha_bar[[0, 4, 9]]), rtol=1e-6)


def test_timestep_embedding_zero_and_odd():
    e = timestep_embedding(0, 64)
    assert np.all(e[:32] == 0) and np.all(e[32:] == 1)
    with pytest.raises(ConfigError):
        timestep_embedding(1, 63)


def test_timestep_embedding_no_collisions():
    e = timestep_embedding(np.arange(1, 1001), 64)
    d = np.linalg.norm(e[:, None] - e[None], axis=-1)
    assert d[~np.eye(1000, dtype=bool)].min() > 1e-3


@given(st.integers(0, 5000))
def test_timestep_embedding_numpy_torch_agree(t):
    np.testing.assert_allclose(timestep_embedding(torch.tensor(t), 16).numpy(), timestep_embedding(t, 16),
                               atol=1e-9)
