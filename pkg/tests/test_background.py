from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from thermotrack.background import (
    BackgroundModel,
    gated_update,
    init_background,
    subset,
    update_background,
)
from thermotrack.core import ThermalFrame, UsageError


def test_identical_frames_give_ridge_only():
    bg = init_background([np.full(64, 20.0)] * 100)
    assert np.all(bg.mu == 20.0)
    assert np.allclose(bg.cov, 1e-4 * np.eye(64))
    assert bg.frames_seen == 100


def test_init_needs_two_frames():
    with pytest.raises(UsageError):
        init_background([np.full(64, 20.0)])


def test_init_mean_converges():
    rng = np.random.default_rng(11)
    m, n = 8, 10_000
    mu_true = rng.normal(22.0, 1.0, m)
    a = rng.normal(0.0, 0.3, (m, m))
    cov_true = a @ a.T + 0.01 * np.eye(m)
    y = rng.multivariate_normal(mu_true, cov_true, n)
    bg = init_background(y)
    assert np.all(np.abs(bg.mu - mu_true) < 3 * np.sqrt(np.diag(cov_true) / n))
    assert np.allclose(bg.cov, np.cov(y, rowvar=False) + 1e-4 * np.eye(m))


def test_init_accepts_frames():
    frames = [ThermalFrame(1, i, np.full(4, 20.0 + i)) for i in range(3)]
    assert init_background(frames).mu == pytest.approx([21.0] * 4)


def test_update_example():
    bg = init_background([np.full(64, 20.0)] * 2)
    new = update_background(bg, np.full(64, 25.0))
    assert np.allclose(new.mu, 20.05)
    assert new.frames_seen == bg.frames_seen + 1


def test_fixed_point():
    bg = BackgroundModel(np.arange(4.0), np.eye(4))
    new = update_background(bg, np.arange(4.0))
    assert np.array_equal(new.mu, bg.mu)


def test_geometric_convergence_and_half_life():
    bg = BackgroundModel(np.zeros(3), np.eye(3))
    target = np.full(3, 10.0)
    gaps = [np.linalg.norm(bg.mu - target)]
    for _ in range(200):
        bg = update_background(bg, target)
        gaps.append(np.linalg.norm(bg.mu - target))
    ratios = np.array(gaps[1:]) / np.array(gaps[:-1])
    assert np.allclose(ratios, 0.99)
    half = math.ceil(math.log(0.5) / math.log(0.99))
    assert half == 69
    assert gaps[half] <= gaps[0] / 2 < gaps[half - 1]


def test_ridge_does_not_accumulate():
    bg = init_background([np.full(4, 20.0)] * 2)
    for _ in range(500):
        bg = update_background(bg, np.full(4, 20.0))
    assert np.allclose(bg.cov, 1e-4 * np.eye(4))


def test_diagonal_mode_stays_diagonal():
    rng = np.random.default_rng(0)
    bg = init_background(rng.normal(20, 1, (10, 5)), diagonal=True)
    bg = BackgroundModel(bg.mu, np.diag(np.diag(bg.cov)), diagonal=True)
    for _ in range(20):
        bg = update_background(bg, rng.normal(20, 1, 5))
    assert np.count_nonzero(bg.cov - np.diag(np.diag(bg.cov))) == 0


frames_strategy = arrays(np.float64, (30, 6), elements=st.floats(15.0, 35.0))


@given(frames_strategy)
def test_covariance_stays_spd(ys):
    bg = init_background(ys[:2])
    for y in ys[2:]:
        bg = update_background(bg, y)
        assert np.allclose(bg.cov, bg.cov.T)
        assert np.linalg.eigvalsh(bg.cov).min() > 0


@given(frames_strategy, st.lists(st.integers(0, 5), min_size=1, max_size=6, unique=True))
def test_subset_commutes_with_mean_update(ys, idx):
    mask = np.zeros(6, dtype=bool)
    mask[idx] = True
    bg = init_background(ys[:5])
    a, _ = subset(update_background(bg, ys[5]), mask)
    sub_mu, sub_cov = subset(bg, mask)
    b = update_background(BackgroundModel(sub_mu, sub_cov), ys[5][mask]).mu
    assert np.allclose(a, b)


def test_subset_examples():
    bg = BackgroundModel(np.arange(6.0), 0.3 * np.eye(6))
    mu, cov = subset(bg, np.ones(6, dtype=bool))
    assert np.array_equal(mu, bg.mu) and np.array_equal(cov, bg.cov)
    one = np.zeros(6, dtype=bool)
    one[2] = True
    assert subset(bg, one)[0].tolist() == [2.0] and subset(bg, one)[1].tolist() == [[0.3]]
    four = np.array([1, 1, 0, 1, 1, 0], dtype=bool)
    assert np.array_equal(subset(bg, four)[1], 0.3 * np.eye(4))
    with pytest.raises(UsageError):
        subset(bg, np.zeros(6, dtype=bool))


def test_gated_update_skips_occupied_frames():
    bg = BackgroundModel(np.zeros(3), np.eye(3))
    y = np.ones(3)
    assert gated_update(bg, y, [0, 1]) is bg
    assert gated_update(bg, y, [0, 0], enabled=False) is bg
    assert np.allclose(gated_update(bg, y, [0, 0]).mu, 0.01)


def test_background_is_immutable():
    bg = BackgroundModel(np.zeros(3), np.eye(3))
    with pytest.raises(ValueError):
        bg.mu[0] = 1.0
