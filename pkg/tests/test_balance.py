import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tripletdiff.balance import (SamplingPlan, frame_weights, instrument_frequencies, instrument_mass,
                                 normalize_mode, sample_indices)
from tripletdiff.data import ToyWorldConfig, make_toy_dataset
from tripletdiff.errors import ConfigError, DataError

from conftest import frames_with_instruments

G, C = 0, 1


def test_instrument_counts_dedup_per_frame():
    ds = frames_with_instruments([[G], [G], [C]])
    assert instrument_frequencies(ds) == {G: 2, C: 1}
    assert instrument_frequencies(frames_with_instruments([[G, G]])) == {G: 1}


def test_toy_instrument_counts_uniform():
    n = 4800
    ds = make_toy_dataset(ToyWorldConfig(skew=0.0, image_size=16), n)
    c = np.array(list(instrument_frequencies(ds).values()))
    se = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(c - n / 4) < 3 * se)


def test_instrument_weights_90_10():
    ds = frames_with_instruments([[G]] * 90 + [[C]] * 10)
    plan = frame_weights(ds, "instrument-balanced")
    np.testing.assert_allclose(plan.frame_weights[:90], 1 / 90)
    np.testing.assert_allclose(plan.frame_weights[90:], 1 / 10)
    mass = instrument_mass(plan, ds)
    assert mass[G] == pytest.approx(0.5) and mass[C] == pytest.approx(0.5)
    idx = sample_indices(plan, np.random.default_rng(0), 100_000)
    assert abs(np.mean(idx >= 90) - 0.5) < 3 * np.sqrt(0.25 / 100_000)
    idx = sample_indices(frame_weights(ds, "uniform"), np.random.default_rng(0), 100_000)
    assert abs(np.mean(idx >= 90) - 0.1) < 3 * np.sqrt(0.09 / 100_000)


def test_mixed_frame_weight():
    ds = frames_with_instruments([[G]] * 89 + [[G, C]] + [[C]] * 9)
    assert frame_weights(ds, "instrument").frame_weights[89] == pytest.approx((1 / 90 + 1 / 10) / 2)
    assert (1 / 90 + 1 / 10) / 2 == pytest.approx(0.0556, abs=1e-4)


def test_triplet_mode_weights():
    ds = frames_with_instruments([[G]] * 3 + [[C]])
    np.testing.assert_allclose(frame_weights(ds, "triplet").frame_weights, [1 / 3] * 3 + [1.0])


def test_sample_uniform_law():
    plan = SamplingPlan("uniform", np.ones(10), {}, "")
    idx = sample_indices(plan, np.random.default_rng(1), 100_000)
    freq = np.bincount(idx, minlength=10) / 100_000
    assert np.all(np.abs(freq - 0.1) < 3 * 0.00095)


def test_sample_small_weight():
    eps = 1e-3
    w = np.array([eps, 1 - eps])
    n = 1_000_000
    idx = sample_indices(SamplingPlan("x", w, {}, ""), np.random.default_rng(2), n)
    assert abs(np.mean(idx == 0) - eps) < 3 * np.sqrt(eps * (1 - eps) / n)


def test_sample_deterministic():
    plan = SamplingPlan("x", np.arange(1, 6.0), {}, "")
    a = sample_indices(plan, np.random.default_rng(5), 50)
    b = sample_indices(plan, np.random.default_rng(5), 50)
    np.testing.assert_array_equal(a, b)


@given(st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=20), st.sampled_from([0.25, 2.0, 8.0]))
def test_power_of_two_scaling_leaves_draws_unchanged(w, c):
    w = np.array(w)
    a = sample_indices(SamplingPlan("x", w, {}, ""), np.random.default_rng(3), 200)
    b = sample_indices(SamplingPlan("x", w * c, {}, ""), np.random.default_rng(3), 200)
    np.testing.assert_array_equal(a, b)
    assert a.min() >= 0 and a.max() < len(w)


def test_invariants_and_errors(tmp_path):
    with pytest.raises(ConfigError):
        normalize_mode("verb")
    with pytest.raises(DataError):
        SamplingPlan("x", np.array([1.0, 0.0]), {}, "")
    ds = frames_with_instruments([[G], [C]])
    plan = frame_weights(ds, "instrument")
    with pytest.raises(DataError):
        plan.write_csv(tmp_path / "w.csv", frames_with_instruments([[G], [C], [C]]))
    plan.write_csv(tmp_path / "w.csv", ds)
    rows = list(csv.DictReader(open(tmp_path / "w.csv")))
    assert [float(r["weight"]) for r in rows] == [1.0, 1.0]
