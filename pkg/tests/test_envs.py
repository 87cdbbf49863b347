import numpy as np
import pytest

from prefdiff.envs import (
    MixtureSpec,
    PointMassEnv,
    behavior_policy,
    default_toy_mixture,
    make_pointmass_dataset,
    make_toy_dataset,
    mode_coverage,
    ood_fraction,
    oracle_policy,
    rollout,
    rollout_batch,
    sample_mixture,
    toy_reward,
)
from prefdiff.errors import NonFiniteError, ShapeError, ValidationError


# -- toy mixture -----------------------------------------------------------------


def test_toy_reward_values():
    assert toy_reward(np.array([1.0, 1.0])) == pytest.approx(np.sqrt(2.0), abs=1e-12)
    assert toy_reward(np.array([0.0, 0.0])) == 0.0
    assert toy_reward(np.array([1.0, -1.0])) == 0.0


def test_toy_reward_linear():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.standard_normal((2, 2))
        a, b = rng.standard_normal(2)
        assert toy_reward(a * x + b * y) == pytest.approx(a * toy_reward(x) + b * toy_reward(y), rel=1e-12, abs=1e-12)


def test_default_mixture_shape():
    spec = default_toy_mixture()
    assert spec.means.shape == (5, 2)
    assert np.allclose(np.linalg.norm(spec.means, axis=1), 2.0)
    assert spec.weights.sum() == pytest.approx(1.0, abs=1e-15)
    # one mode sits on the reward diagonal: reward = radius * cos(angle - 45 deg)
    rewards = toy_reward(spec.means)
    assert rewards.max() == pytest.approx(2.0, abs=1e-12)


def test_mixture_spec_validation():
    with pytest.raises(ValidationError):
        MixtureSpec(np.zeros((2, 2)), 0.0, np.array([0.5, 0.5]))
    with pytest.raises(ValidationError):
        MixtureSpec(np.zeros((2, 2)), 1.0, np.array([0.6, 0.6]))
    with pytest.raises(ShapeError):
        MixtureSpec(np.zeros((2, 3)), 1.0, np.array([0.5, 0.5]))


def test_single_component_sample_moments():
    spec = MixtureSpec(np.array([[2.0, 3.0]]), 0.5, np.array([1.0]))
    n = 100_000
    samples = sample_mixture(spec, n, np.random.default_rng(1))
    se = 0.5 / np.sqrt(n)
    assert np.all(np.abs(samples.mean(axis=0) - [2.0, 3.0]) < 4 * se)
    assert np.all(np.abs(samples.var(axis=0) / 0.25 - 1.0) < 0.02)


def test_degenerate_weights_use_single_component():
    spec = MixtureSpec(np.array([[5.0, 5.0], [-5.0, -5.0]]), 0.1, np.array([1.0, 0.0]))
    samples = sample_mixture(spec, 2000, np.random.default_rng(2))
    assert np.all(np.linalg.norm(samples - [5.0, 5.0], axis=1) < 2.0)


def test_component_frequencies_match_weights():
    spec = MixtureSpec(np.array([[4.0, 0.0], [-4.0, 0.0], [0.0, 4.0]]), 0.2, np.array([0.5, 0.3, 0.2]))
    n = 100_000
    samples = sample_mixture(spec, n, np.random.default_rng(3))
    freqs = mode_coverage(samples, spec)
    for freq, w in zip(freqs, spec.weights):
        se = np.sqrt(w * (1 - w) / n)
        assert abs(freq - w) < 3 * se


def test_ood_fraction_trivial_cases():
    spec = default_toy_mixture()
    assert ood_fraction(spec.means.copy(), spec) == 0.0
    far = spec.means[0] + np.array([10.0 * spec.std, 0.0])
    assert ood_fraction(far[None, :], spec, radius_mult=3.0) == 1.0


def test_ood_fraction_matches_gaussian_tail_for_true_samples():
    spec = default_toy_mixture()  # modes far apart relative to std
    n = 200_000
    samples = sample_mixture(spec, n, np.random.default_rng(5))
    frac = ood_fraction(samples, spec, radius_mult=3.0)
    target = np.exp(-4.5)  # 2-D isotropic Gaussian mass beyond 3 sigma
    se = np.sqrt(target * (1 - target) / n)
    assert abs(frac - target) < 4 * se


def test_ood_fraction_monotone_in_radius():
    spec = default_toy_mixture()
    samples = sample_mixture(spec, 5000, np.random.default_rng(6))
    fracs = [ood_fraction(samples, spec, radius_mult=r) for r in (1.0, 2.0, 3.0, 4.0)]
    assert all(a >= b for a, b in zip(fracs, fracs[1:]))


def test_ood_fraction_rejects_empty_and_bad_radius():
    spec = default_toy_mixture()
    with pytest.raises(ValidationError):
        ood_fraction(np.zeros((0, 2)), spec)
    with pytest.raises(ValidationError):
        ood_fraction(np.zeros((3, 2)), spec, radius_mult=0.0)


# -- point mass ---------------------------------------------------------------------


def test_env_dynamics_deterministic_and_clipped():
    env = PointMassEnv()
    pos = np.array([0.9, -0.9])
    action = np.array([0.5, -0.5])  # exceeds a_max, gets clipped
    nxt1 = env.step(pos, action)
    nxt2 = env.step(pos, action)
    assert np.array_equal(nxt1, nxt2)
    assert np.array_equal(nxt1, np.array([1.0, -1.0]))  # arena clip


def test_oracle_policy_succeeds_from_any_start():
    env = PointMassEnv()
    out = rollout_batch(env, oracle_policy(env), 500, np.random.default_rng(0))
    assert out["success"].all()


def test_zero_policy_fails_unless_started_at_goal():
    env = PointMassEnv()
    zero = lambda states: np.zeros_like(np.atleast_2d(states))
    far = rollout(env, lambda s: np.zeros(2), np.random.default_rng(0), start=np.array([0.9, 0.9]))
    assert not far["success"]
    at_goal = rollout(env, lambda s: np.zeros(2), np.random.default_rng(0), start=env.goal.copy())
    assert at_goal["success"]


def test_behavior_policy_reaches_intermediate_success():
    env = PointMassEnv()
    rng = np.random.default_rng(0)
    out = rollout_batch(env, behavior_policy(env, rng), 2000, rng)
    rate = out["success"].mean()
    # seeded regression anchor for the noisy-suboptimal data collector
    assert rate == pytest.approx(0.554, abs=1e-12)
    assert 0.2 < rate < 0.6


def test_rollout_rejects_non_finite_action():
    env = PointMassEnv()
    with pytest.raises(NonFiniteError):
        rollout(env, lambda s: np.array([np.nan, 0.0]), np.random.default_rng(0))


def test_rollout_records_consistent_shapes_and_returns():
    env = PointMassEnv(horizon=7)
    res = rollout(env, lambda s: np.array([0.1, 0.0]), np.random.default_rng(1), start=np.array([-0.5, 0.0]))
    assert res["states"].shape == (7, 2)
    assert res["actions"].shape == (7, 2)
    assert res["rewards"].shape == (7,)
    assert res["return"] == pytest.approx(float(res["rewards"].sum()))


def test_rollout_batch_deterministic_per_seed():
    env = PointMassEnv()
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(11)
        outs.append(rollout_batch(env, behavior_policy(env, rng), 50, rng))
    assert np.array_equal(outs[0]["states"], outs[1]["states"])
    assert np.array_equal(outs[0]["success"], outs[1]["success"])


# -- dataset builders ------------------------------------------------------------------


def test_pointmass_dataset_round_trips_env_spec():
    env = PointMassEnv()
    ds = make_pointmass_dataset(env, 20, np.random.default_rng(0))
    assert len(ds.episodes) == 20
    assert ds.state_dim == 2 and ds.action_dim == 2
    restored = PointMassEnv.from_json(ds.meta["env"])
    assert np.array_equal(restored.goal, env.goal)
    assert restored.success_radius == env.success_radius
    # rewards recomputable from positions after each step
    ep = ds.episodes[0]
    for i in range(len(ep) - 1):
        assert ep.rewards[i] == pytest.approx(float(-np.linalg.norm(ep.states[i + 1] - env.goal)), abs=1e-12)


def test_toy_dataset_has_zero_dim_states_and_reward_labels():
    spec = default_toy_mixture()
    ds = make_toy_dataset(spec, 50, np.random.default_rng(0))
    assert ds.state_dim == 0 and ds.action_dim == 2
    assert all(len(ep) == 1 for ep in ds.episodes)
    for ep in ds.episodes:
        assert ep.rewards[0] == pytest.approx(toy_reward(ep.actions[0]), abs=1e-12)
    restored = MixtureSpec.from_json(ds.meta["mixture"])
    assert np.array_equal(restored.means, spec.means)
