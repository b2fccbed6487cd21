from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import srelu
from thermotrack.core import UsageError, encode_frame
from thermotrack.screening import estimate_body_temperature
from thermotrack.simulator import (
    Body,
    Scene,
    Trajectory,
    corridor_scene,
    default_background,
    empty_frames,
    gen_trajectory,
    roi_of_position,
    synth_frame,
    synth_frames,
    synth_screening_subject,
    wall_scene,
)


def _static(pos, n=5):
    return Body(gen_trajectory("static", {"position": pos, "n_steps": n}))


def test_empty_scene_without_noise_is_background(wall):
    mu = np.linspace(20, 25, 64)
    scene = Scene(wall, mu, np.zeros((64, 64)), n_frames=3)
    for t in range(3):
        assert np.array_equal(synth_frame(scene, t)[0].temps, mu)


def test_noiseless_body_matches_signature(wall, params):
    p = params.__class__(**{**params.to_dict(), "sigma_T": 1e-300})
    mu = np.full(64, 22.0)
    scene = Scene(wall, mu, np.zeros((64, 64)), (_static((1.25, 0.0)),), p)
    frame, truth = synth_frame(scene, 0)
    k = truth["bodies"][0]["roi"]
    assert k == 2 and truth["occupancy"] == [0, 0, 1, 0, 0]
    expected = mu + srelu(1.25) * wall.rois[k].mask
    assert np.allclose(frame.temps, expected, atol=1e-12)


def test_monte_carlo_mean(wall):
    mu, cov = default_background()
    scene = Scene(wall, mu, cov, (_static((2.0, 20.0), n=10_000),))
    frames, truth = synth_frames(scene)
    k = truth[0]["bodies"][0]["roi"]
    mask = wall.rois[k].mask
    mean = np.mean([f.temps for f in frames], axis=0)
    expected = mu + srelu(2.0) * mask
    std = np.where(mask, np.sqrt(0.08**2 + 1.5**2), 0.08)
    assert np.all(np.abs(mean - expected) < 3 * std / np.sqrt(10_000))


def test_fixed_seed_is_bit_identical(ceiling):
    a = synth_frames(corridor_scene(ceiling, 2, seed=5, episodes=3))
    b = synth_frames(corridor_scene(ceiling, 2, seed=5, episodes=3))
    assert [encode_frame(f) for f in a[0]] == [encode_frame(f) for f in b[0]]
    assert all(np.array_equal(x.temps, y.temps) for x, y in zip(a[0], b[0]))
    assert a[1] == b[1]
    c = synth_frames(corridor_scene(ceiling, 2, seed=6, episodes=3))
    assert a[1] != c[1]


def test_frames_can_be_drawn_in_any_order(wall):
    mu, cov = default_background()
    scene = Scene(wall, mu, cov, (_static((1.0, 0.0), n=6),), seed=3)
    forward = [synth_frame(scene, t)[0].temps for t in range(6)]
    assert np.array_equal(synth_frame(scene, 4)[0].temps, forward[4])


def test_body_outside_rois_dropped(wall):
    mu, cov = default_background()
    scene = Scene(wall, mu, cov, (_static((5.0, 0.0), n=1),))
    _, truth = synth_frame(scene, 0)
    assert truth["bodies"] == [] and sum(truth["occupancy"]) == 0


def test_roi_lookup(wall, ceiling):
    assert roi_of_position(wall, (1.0, -29.0)) == 0
    assert roi_of_position(wall, (1.0, 0.0)) == 2
    assert roi_of_position(wall, (1.0, 29.0)) == 4
    assert roi_of_position(wall, (1.0, 40.0)) is None
    assert roi_of_position(ceiling, ceiling.rois[7].footprint_m) == 7
    assert roi_of_position(ceiling, (5.0, 5.0)) is None


def test_horizon_checked(wall):
    mu, cov = default_background()
    with pytest.raises(UsageError):
        synth_frame(Scene(wall, mu, cov, n_frames=2), 2)


def test_zeta_enforced(ceiling):
    mu, cov = default_background()
    bodies = tuple(_static(ceiling.rois[k].footprint_m) for k in range(4))
    with pytest.raises(ValueError):
        Scene(ceiling, mu, cov, bodies)


@settings(max_examples=15)
@given(st.integers(1, 3), st.integers(0, 1000))
def test_corridor_truth_respects_zeta(n, seed):
    from thermotrack.config import ceiling_layout

    _, truth = synth_frames(corridor_scene(ceiling_layout(), n, seed=seed, episodes=2))
    assert all(sum(r["occupancy"]) <= 3 for r in truth)
    assert max(sum(r["occupancy"]) for r in truth) >= 1


def test_trajectory_examples():
    st_ = gen_trajectory("static", {"position": (1.0, 5.0), "n_steps": 4})
    assert np.all(st_.positions == [1.0, 5.0])
    still = gen_trajectory("random_walk", {"position": (1.0, 0.0), "n_steps": 50, "speed": 0.0})
    assert np.all(still.positions[:, 0] == 1.0)
    walk = gen_trajectory("random_walk", {"position": (0.3, 0.0), "n_steps": 500, "speed": 2.0}, seed=1)
    assert walk.positions[:, 0].min() >= 0.25 and walk.positions[:, 0].max() <= 3.5
    corridor = gen_trajectory("corridor_pass", {"start": (0.0, 0.0), "length": 3.0, "speed": 0.5, "dt": 0.3})
    assert len(corridor) == 20
    assert corridor.positions[1, 0] == pytest.approx(0.15)
    with pytest.raises(UsageError):
        gen_trajectory("teleport", {})


def test_trajectory_offset():
    tr = Trajectory([[1.0, 0.0], [2.0, 0.0]], start=3)
    assert tr.at(2) is None and tr.at(4)[0] == 2.0 and tr.at(5) is None


def test_screening_subject_example():
    s = synth_screening_subject(38.0, [0.5], 23.0, seed=0, noise=False)
    hot = s.frames[0].temps[s.hot_index[0]]
    assert hot == pytest.approx(30.081, abs=5e-4)
    assert estimate_body_temperature(hot, 0.5, 23.0) == pytest.approx(38.0, abs=1e-9)
    assert np.count_nonzero(s.frames[0].temps != 23.0) == 1


def test_screening_subject_without_contrast():
    s = synth_screening_subject(20.0, [0.3, 0.8], 20.0, seed=0, noise=False)
    assert np.allclose([f.temps[i] for f, i in zip(s.frames, s.hot_index)], 20.0)


def test_screening_subject_checks_ambient():
    with pytest.raises(UsageError):
        synth_screening_subject(37.0, [0.5], 35.0, seed=0)


def test_wall_scene_layout(wall):
    scene = wall_scene(wall, 1.0, seed=1, segments=3, steps=10)
    frames, truth = synth_frames(scene)
    assert len(frames) == 33
    assert truth[10]["bodies"] == [] and truth[11]["bodies"][0]["d_m"] == 1.0
    with pytest.raises(UsageError):
        corridor_scene(wall, 1)


def test_empty_frames_have_no_bodies(ceiling):
    mu, cov = default_background()
    frames = empty_frames(ceiling, mu, cov, 20, seed=0)
    assert len(frames) == 20
    assert abs(np.mean([f.temps for f in frames]) - 23.0) < 0.05
