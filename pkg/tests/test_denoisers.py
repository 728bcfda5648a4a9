import numpy as np
import pytest

from skipdiff.controller import roll_out, run_adaptive, run_baseline, ControllerConfig
from skipdiff.denoisers import (
    GmmDenoiser,
    GmmModel,
    ReplayDenoiser,
    gmm_epsilon,
    gmm_lipschitz_bound,
    gmm_log_density,
    replay_epsilon,
)
from skipdiff.latent import Trajectory
from skipdiff.schedulers import NoiseLevel, ScheduleKind, build_ddim_plan, build_euler_ve_plan, initial_latent

VE = ScheduleKind.VE
VP = ScheduleKind.VP


def test_single_gaussian_closed_form():
    m = GmmModel.single(1, 1.0)
    assert gmm_epsilon(m, [1.0], NoiseLevel(VE, 1.0)).tolist() == [0.5]
    x = np.array([0.3, -2.0, 5.0])
    m3 = GmmModel.single(3, 0.4)
    np.testing.assert_allclose(gmm_epsilon(m3, x, NoiseLevel(VE, 2.5)), 2.5 * x / (0.16 + 6.25), rtol=1e-15)


def test_symmetric_pair_at_origin():
    mu = np.array([[1.0, -0.5], [-1.0, 0.5]])
    m = GmmModel(np.array([0.5, 0.5]), mu, np.array([0.3, 0.3]))
    for lvl in (NoiseLevel(VE, 0.7), NoiseLevel(VP, 0.4)):
        assert np.allclose(gmm_epsilon(m, np.zeros(2), lvl), 0.0, atol=1e-15)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        NoiseLevel(VE, -0.1)


@pytest.mark.parametrize("level", [NoiseLevel(VE, 0.8), NoiseLevel(VE, 5.0), NoiseLevel(VP, 0.3),
                                   NoiseLevel(VP, 0.95)])
def test_matches_finite_difference_of_log_density(level):
    model = GmmModel.random(5, n_components=3, dim=2)
    rng = np.random.default_rng(0)
    s = level.noise_std
    h = 1e-5
    for _ in range(20):
        x = rng.standard_normal(2) * (1 + s)
        grad = np.array([
            (gmm_log_density(model, x + h * e, level) - gmm_log_density(model, x - h * e, level)) / (2 * h)
            for e in np.eye(2)
        ])
        np.testing.assert_allclose(gmm_epsilon(model, x, level), -s * grad, rtol=1e-6, atol=1e-9)


def test_extreme_noise_levels_stay_finite(model):
    x = np.full(model.dim, 300.0)
    for sigma in (0.002, 80.0):
        assert np.all(np.isfinite(gmm_epsilon(model, x, NoiseLevel(VE, sigma))))
    assert np.all(np.isfinite(gmm_epsilon(model, x, NoiseLevel(VP, 4e-5))))


def test_lipschitz_single_gaussian_exact():
    m = GmmModel.single(3, 1.0)
    assert gmm_lipschitz_bound(m, NoiseLevel(VE, 1.0)) == 0.5
    assert gmm_lipschitz_bound(GmmModel.single(3, 0.5), NoiseLevel(VE, 1e-12)) < 1e-11
    assert gmm_lipschitz_bound(m, NoiseLevel(VE, 0.0)) == 0.0


def _max_sampled_slope(model, level, n, rng):
    s = level.noise_std
    a = level.mean_scale
    worst = 0.0
    for _ in range(n):
        k = rng.integers(model.n_components)
        x = a * model.means[k] + rng.standard_normal(model.dim) * (s + a * model.scales[k]) * rng.uniform(0.2, 2)
        d = rng.standard_normal(model.dim)
        d *= rng.uniform(1e-4, 1.0) / np.linalg.norm(d)
        slope = np.linalg.norm(gmm_epsilon(model, x + d, level) - gmm_epsilon(model, x, level)) / np.linalg.norm(d)
        worst = max(worst, slope)
    return worst


@pytest.mark.parametrize("level", [NoiseLevel(VE, 0.3), NoiseLevel(VE, 1.0), NoiseLevel(VP, 0.5)])
def test_lipschitz_bound_dominates_sampled_slopes(level):
    rng = np.random.default_rng(2)
    equal = GmmModel(np.array([0.4, 0.6]), np.array([[1.0, 0.0], [-1.0, 0.5]]), np.array([0.3, 0.3]))
    unequal = GmmModel(np.array([0.3, 0.7]), np.array([[1.5, 0.0], [-0.5, 0.5]]), np.array([0.2, 0.6]))
    for m in (equal, unequal):
        assert gmm_lipschitz_bound(m, level) >= _max_sampled_slope(m, level, 10_000, rng)


def test_eval_counter_tracks_predictions(model):
    plan = build_euler_ve_plan(20)
    den = GmmDenoiser(model)
    x_T = initial_latent(plan, 0, model.dim)
    traj, rep = run_adaptive(plan, den, x_T, ControllerConfig(delta=0.05))
    assert den.eval_counter == rep.eval_count == int(traj.evaluated.sum())
    assert den.spawn().eval_counter == 0


def test_replay_returns_recorded_vectors(model):
    plan = build_euler_ve_plan(50)
    traj, _ = run_adaptive(plan, GmmDenoiser(model), initial_latent(plan, 1, model.dim),
                           ControllerConfig(delta=0.1))
    for i in range(1, 51):
        assert np.array_equal(replay_epsilon(traj, i), traj.noises[50 - i])
    skipped = [j for j in range(50) if not traj.evaluated[j]]
    assert skipped
    j = skipped[0]
    last_eval = max(k for k in range(j) if traj.evaluated[k])
    assert np.array_equal(replay_epsilon(traj, 50 - j), traj.noises[last_eval])
    with pytest.raises(KeyError):
        replay_epsilon(traj, 0)
    with pytest.raises(KeyError):
        replay_epsilon(traj, 51)


def test_replay_reproduces_baseline_after_serialisation(model, tmp_path):
    plan = build_ddim_plan(30)
    x_T = initial_latent(plan, 9, model.dim)
    base, _ = run_baseline(plan, GmmDenoiser(model), x_T)
    base.to_jsonl(tmp_path / "b.jsonl")
    loaded = Trajectory.from_jsonl(tmp_path / "b.jsonl")
    den = ReplayDenoiser(loaded)
    again = roll_out(plan, den, x_T, 0, lambda j: True)
    assert np.array_equal(again.final, base.final)
    assert den.eval_counter == 30


def test_model_validation():
    with pytest.raises(ValueError):
        GmmModel(np.array([0.5, 0.6]), np.zeros((2, 2)), np.ones(2))
    with pytest.raises(ValueError):
        GmmModel(np.array([1.0]), np.zeros((1, 2)), np.array([0.0]))
    with pytest.raises(ValueError):
        GmmModel(np.array([0.5, 0.5]), np.zeros((3, 2)), np.ones(2))
    with pytest.raises(ValueError):
        GmmModel.from_dict({"weights": [1.0], "means": [[0.0]]})


def test_model_dict_round_trip(model):
    back = GmmModel.from_dict(model.to_dict())
    for name in ("weights", "means", "scales"):
        assert np.array_equal(getattr(back, name), getattr(model, name))


def test_default_model_shape(model):
    assert model.n_components == 3 and model.dim == 16
    assert np.all((model.scales >= 0.2) & (model.scales <= 1.0))
