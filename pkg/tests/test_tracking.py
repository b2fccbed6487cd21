from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_background
from oracles import brute_force_track, dense_logpdf, occupied_vs_empty, srelu, truncated_walk_matrix
from thermotrack.background import BackgroundModel
from thermotrack.core import ThermalFrame, UsageError, distance_grid
from thermotrack.signature import signature
from thermotrack.tracking import (
    detect_occupancy,
    init_track_state,
    log_likelihood_empty,
    log_likelihood_occupied,
    occupancy_test,
    random_walk_log_kernel,
    rmse_report,
    step_std,
    step_track,
    track_records,
)


def _noisy(bg, seed, k=None, d=None, sig=None):
    rng = np.random.default_rng(seed)
    y = rng.multivariate_normal(bg.mu, bg.cov)
    if k is not None:
        y = y + signature(sig, k, d) + sig.sigma_T * rng.standard_normal() * sig.layout.rois[k].mask
    return y


@pytest.mark.parametrize("k", range(5))
def test_likelihoods_match_dense_oracle(k, wall_sig, dense_bg):
    y = _noisy(dense_bg, k, k, 1.3, wall_sig)
    mask = wall_sig.layout.rois[k].mask
    for d in (0.25, 1.3, 3.5):
        ref = dense_logpdf(y, dense_bg.mu, dense_bg.cov, mask, srelu(d), 1.5**2)
        assert log_likelihood_occupied(y, dense_bg, wall_sig, k, d) == pytest.approx(ref, rel=1e-12)
    ref0 = dense_logpdf(y, dense_bg.mu, dense_bg.cov, mask)
    assert log_likelihood_empty(y, dense_bg, wall_sig, k) == pytest.approx(ref0, rel=1e-12)


def test_likelihood_at_mean_is_normaliser(wall_sig, dense_bg):
    k, d = 2, 1.0
    mask = wall_sig.layout.rois[k].mask
    y = dense_bg.mu + signature(wall_sig, k, d)
    n = mask.sum()
    cov = dense_bg.cov[np.ix_(mask, mask)] + 1.5**2 * np.eye(n)
    norm = -0.5 * (n * math.log(2 * math.pi) + np.linalg.slogdet(cov)[1])
    assert log_likelihood_occupied(y, dense_bg, wall_sig, k, d) == pytest.approx(norm, rel=1e-12)
    assert log_likelihood_empty(dense_bg.mu, dense_bg, wall_sig, k) > log_likelihood_empty(
        dense_bg.mu + 0.01, dense_bg, wall_sig, k
    )


@given(st.floats(0.0, 3.0), st.floats(0.01, 2.0))
def test_likelihood_decreases_away_from_mean(scale, extra):
    from thermotrack.config import wall_layout
    from thermotrack.signature import SignatureModel

    sig = SignatureModel(wall_layout())
    bg = random_background(seed=3)
    direction = np.random.default_rng(0).normal(size=64)
    base = bg.mu + signature(sig, 1, 2.0)
    a = log_likelihood_occupied(base + scale * direction, bg, sig, 1, 2.0)
    b = log_likelihood_occupied(base + (scale + extra) * direction, bg, sig, 1, 2.0)
    assert b < a


@pytest.mark.parametrize("d", [0.25, 1.0, 3.5])
def test_empty_beats_occupied_at_background_mean(wall_sig, dense_bg, d):
    for k in range(5):
        assert log_likelihood_empty(dense_bg.mu, dense_bg, wall_sig, k) > log_likelihood_occupied(
            dense_bg.mu, dense_bg, wall_sig, k, d
        )


def test_distance_outside_grid_rejected(wall_sig, dense_bg):
    with pytest.raises(UsageError):
        log_likelihood_occupied(dense_bg.mu, dense_bg, wall_sig, 0, 3.6)
    with pytest.raises(UsageError):
        log_likelihood_occupied(dense_bg.mu, dense_bg, wall_sig, 0)


def test_detection_examples(wall_sig, dense_bg):
    assert detect_occupancy(dense_bg.mu, dense_bg, wall_sig, 3) == 0
    y = dense_bg.mu + signature(wall_sig, 3, 1.0)
    assert detect_occupancy(y, dense_bg, wall_sig, 3) == 1


@pytest.mark.parametrize("seed", range(6))
def test_detection_matches_finite_sum_oracle(seed, wall_sig, dense_bg, params):
    k = seed % 5
    y = _noisy(dense_bg, seed, k if seed % 2 else None, 0.25 + 0.5 * seed, wall_sig)
    grid = distance_grid(wall_sig.layout, params)
    log0, log1 = occupied_vs_empty(y, dense_bg.mu, dense_bg.cov, wall_sig.layout.rois[k].mask,
                                   grid, 4.5, 1.1, 1.5, 0.25, 3.5, 0.25)
    t = occupancy_test(y, dense_bg, wall_sig, k)
    assert t.log_empty == pytest.approx(log0, rel=1e-12)
    assert t.log_occupied == pytest.approx(log1, rel=1e-12)
    assert t.occupied == (log1 > log0)


def test_kernel_rows_normalised_and_truncated(wall, params):
    grid = distance_grid(wall, params)
    logk = random_walk_log_kernel(grid, step_std(params))
    assert step_std(params) == pytest.approx(0.15)
    assert np.allclose(np.exp(logk).sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(np.exp(logk), truncated_walk_matrix(grid, 0.15), atol=1e-12)
    ident = random_walk_log_kernel(grid, 0.0)
    assert np.array_equal(np.exp(ident), np.eye(grid.size))


@given(st.floats(0.01, 5.0))
def test_kernel_rows_sum_to_one(std):
    grid = np.arange(14) * 0.25 + 0.25
    assert np.allclose(np.exp(random_walk_log_kernel(grid, std)).sum(axis=1), 1.0, atol=1e-12)


def test_empty_scene_stays_empty(wall_sig):
    bg = BackgroundModel(np.full(64, 22.0), 0.0064 * np.eye(64))
    state = init_track_state(wall_sig)
    rng = np.random.default_rng(0)
    for t in range(30):
        state = step_track(state, ThermalFrame(1, t, 22.0 + 0.08 * rng.standard_normal(64)), bg, wall_sig)
        assert not state.occupancy.any()
        for r in state.rois:
            assert np.allclose(r.posterior.probs, 1 / 14)


@pytest.mark.parametrize("d_star", [0.5, 1.25, 2.75])
def test_stationary_noiseless_target(wall_sig, d_star):
    bg = BackgroundModel(np.full(64, 22.0), 0.0064 * np.eye(64))
    grid = distance_grid(wall_sig.layout, wall_sig.params)
    j = int(np.argmin(np.abs(grid - d_star)))
    y = bg.mu + signature(wall_sig, 1, d_star)
    state = init_track_state(wall_sig)
    prev_mass = 0.0
    for t in range(20):
        state = step_track(state, ThermalFrame(1, t, y), bg, wall_sig)
        r = state.rois[1]
        assert r.occupied and r.d_hat == pytest.approx(d_star)
        assert r.theta_hat == -18.0
        mass = r.posterior.probs[j]
        assert mass >= prev_mass - 1e-6
        prev_mass = mass


def test_single_step_equals_prior_times_likelihood(wall_sig, dense_bg, params):
    grid = distance_grid(wall_sig.layout, params)
    y1 = _noisy(dense_bg, 1, 0, 1.0, wall_sig)
    y2 = _noisy(dense_bg, 2, 0, 1.2, wall_sig)
    s1 = step_track(init_track_state(wall_sig), y1, dense_bg, wall_sig)
    s2 = step_track(s1, y2, dense_bg, wall_sig)
    mask = wall_sig.layout.rois[0].mask
    lik = np.exp([dense_logpdf(y2, dense_bg.mu, dense_bg.cov, mask, srelu(d), 2.25) for d in grid])
    prior = s1.rois[0].posterior.probs @ truncated_walk_matrix(grid, 0.15)
    expected = prior * lik / np.sum(prior * lik)
    assert s2.rois[0].occupied
    assert np.max(np.abs(s2.rois[0].posterior.probs - expected)) < 1e-9


def test_recursion_matches_brute_force(wall_sig, params):
    bg = random_background(seed=9, scale=0.08)
    rng = np.random.default_rng(4)
    grid = distance_grid(wall_sig.layout, params)
    d = 1.5
    frames = []
    for t in range(40):
        d = float(np.clip(d + 0.15 * rng.standard_normal(), 0.25, 3.5))
        present = (t // 10) % 2 == 0
        frames.append(_noisy(bg, 100 + t, 2, d, wall_sig) if present else _noisy(bg, 100 + t))
    state = init_track_state(wall_sig)
    got = []
    for y in frames:
        state = step_track(state, y, bg, wall_sig)
        got.append(state)
    for k in range(5):
        ref = brute_force_track(frames, bg.mu, bg.cov, wall_sig.layout.rois[k].mask, grid,
                                4.5, 1.1, 1.5, 0.25, 3.5, 0.25, 0.15)
        for s, (occ, post) in zip(got, ref):
            assert s.rois[k].occupied == occ
            assert np.max(np.abs(s.rois[k].posterior.probs - post)) < 1e-9


@given(st.floats(-5.0, 5.0), st.integers(0, 1000))
def test_shift_invariance(c, seed):
    from thermotrack.config import wall_layout
    from thermotrack.signature import SignatureModel

    sig = SignatureModel(wall_layout())
    bg = random_background(seed=1)
    shifted = BackgroundModel(bg.mu + c, bg.cov)
    y = _noisy(bg, seed, seed % 5, 0.5 + (seed % 7) * 0.4, sig)
    a = step_track(init_track_state(sig), y, bg, sig)
    b = step_track(init_track_state(sig), y + c, shifted, sig)
    assert np.array_equal(a.occupancy, b.occupancy)
    for ra, rb in zip(a.rois, b.rois):
        assert np.allclose(ra.posterior.probs, rb.posterior.probs, atol=1e-9)


@given(st.integers(0, 10_000))
def test_posteriors_normalised(seed):
    from thermotrack.config import wall_layout
    from thermotrack.signature import SignatureModel

    sig = SignatureModel(wall_layout())
    bg = random_background(seed=2)
    state = init_track_state(sig)
    for t in range(3):
        state = step_track(state, _noisy(bg, seed * 3 + t, seed % 5, 1.0, sig), bg, sig)
        for r in state.rois:
            assert abs(r.posterior.probs.sum() - 1.0) < 1e-9
            if r.occupied:
                assert 0.25 <= r.d_hat <= 3.5


def test_argmax_ties_go_to_smaller_distance(wall_sig):
    from thermotrack.tracking import DistancePosterior

    grid = np.array([0.25, 0.5, 0.75])
    post = DistancePosterior(0, grid, np.log([0.4, 0.4, 0.2]))
    assert post.argmax() == 0.25


def test_ceiling_layout_rejected(ceiling_sig):
    bg = BackgroundModel(np.zeros(64), np.eye(64))
    with pytest.raises(UsageError):
        step_track(init_track_state(ceiling_sig), np.zeros(64), bg, ceiling_sig)


def test_track_records_shape(wall_sig):
    bg = BackgroundModel(np.full(64, 22.0), 0.0064 * np.eye(64))
    y = bg.mu + signature(wall_sig, 4, 1.0)
    state = step_track(init_track_state(wall_sig), ThermalFrame(5, 300, y), bg, wall_sig)
    recs = track_records(state, 5, with_posterior=True)
    assert len(recs) == 5
    assert recs[4]["occupied"] and recs[4]["d_hat_m"] == 1.0 and recs[4]["theta_hat_deg"] == 30.0
    assert recs[0]["d_hat_m"] is None and recs[0]["sensor_id"] == "5" and recs[0]["ts_ms"] == 300
    assert sum(recs[0]["posterior"]) == pytest.approx(1.0)


def _truth(ts, d, theta):
    return {"ts_ms": ts, "bodies": [{"roi": 0, "d_m": d, "theta_deg": theta}]}


def _est(ts, d, theta, occupied=True):
    return {"ts_ms": ts, "roi": 0, "occupied": occupied, "d_hat_m": d, "theta_hat_deg": theta}


def test_rmse_perfect_and_biased():
    truth = [_truth(t, 1.0, 0.0) for t in range(5)]
    assert rmse_report([_est(t, 1.0, 0.0) for t in range(5)], truth).distance_rmse == 0.0
    rep = rmse_report([_est(t, 1.25, 0.0) for t in range(5)], truth)
    assert rep.distance_rmse == pytest.approx(0.25)
    assert rep.aoa_rmse == 0.0
    assert rep.row(1.0).n == 5


def test_rmse_counts_missed_and_extra():
    truth = [_truth(0, 1.0, 0.0), _truth(1, 1.0, 0.0)]
    est = [_est(0, 1.0, 0.0), {**_est(0, 1.0, 18.0), "roi": 3}, _est(1, 1.0, 0.0, occupied=False)]
    rep = rmse_report(est, truth)
    assert (rep.n, rep.missed, rep.extra) == (1, 1, 1)


def test_rmse_prefers_strongest_detection():
    truth = [_truth(0, 1.0, 5.0)]
    est = [{**_est(0, 2.0, 0.0), "log_ratio": 1.0}, {**_est(0, 1.0, 18.0), "log_ratio": 9.0}]
    rep = rmse_report(est, truth)
    assert rep.aoa_rmse == pytest.approx(13.0)
    assert rep.distance_rmse == 0.0


def test_rmse_needs_overlap():
    with pytest.raises(UsageError):
        rmse_report([_est(0, 1.0, 0.0)], [_truth(5, 1.0, 0.0)])
