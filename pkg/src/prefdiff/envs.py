"""Desk-scale testbeds.

Two tasks exercise the pipeline end to end:

* a 2-D Gaussian mixture treated as an unconditional generative task
  (zero-dimensional states, k = 1 segments), scored by a fixed linear
  reward along the diagonal direction, with an out-of-distribution
  fraction quantifying how far generated samples stray from the modes;
* a point-mass goal-reaching MDP with a box-bounded action space, scored
  by success at the final step, with a scripted noisy-suboptimal behavior
  policy to generate offline data.

Rewards here are evaluator/teacher-side quantities; the learned policy
never sees them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Episode, OfflineDataset
from .errors import NonFiniteError, ShapeError, ValidationError

SQRT2 = float(np.sqrt(2.0))


@dataclass
class MixtureSpec:
    means: np.ndarray    # (m, 2)
    std: float
    weights: np.ndarray  # (m,) on the simplex

    def __post_init__(self) -> None:
        self.means = np.asarray(self.means, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.means.ndim != 2 or self.means.shape[1] != 2:
            raise ShapeError(f"means must be (m, 2), got {self.means.shape}")
        if self.weights.shape != (self.means.shape[0],):
            raise ShapeError("need one weight per component")
        if self.std <= 0.0:
            raise ValidationError(f"std must be > 0, got {self.std}")
        if np.any(self.weights < 0.0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must be non-negative and sum to 1 within 1e-12")

    def to_json(self) -> dict:
        return {"means": self.means.tolist(), "std": self.std, "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "MixtureSpec":
        return cls(np.array(obj["means"]), float(obj["std"]), np.array(obj["weights"]))


def default_toy_mixture() -> MixtureSpec:
    """Five equal modes on a radius-2 circle, one centered on the reward axis."""
    angles = np.deg2rad(45.0 + 72.0 * np.arange(5))
    means = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return MixtureSpec(means=means, std=0.15, weights=np.full(5, 0.2))


def toy_reward(x) -> float | np.ndarray:
    """Projection onto the unit diagonal: (x1 + x2) / sqrt(2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 2:
        raise ShapeError(f"expected 2-D points, got shape {x.shape}")
    r = (x[..., 0] + x[..., 1]) / SQRT2
    return float(r) if r.ndim == 0 else r


def sample_mixture(spec: MixtureSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """n i.i.d. draws: component by weight, then isotropic Gaussian."""
    if n < 1:
        raise ValidationError(f"need n >= 1 samples, got {n}")
    comps = rng.choice(len(spec.weights), size=n, p=spec.weights)
    return spec.means[comps] + spec.std * rng.standard_normal((n, 2))


def ood_fraction(samples: np.ndarray, spec: MixtureSpec, radius_mult: float = 3.0) -> float:
    """Fraction of samples farther than radius_mult * std from every mode."""
    if radius_mult <= 0.0:
        raise ValidationError(f"radius_mult must be > 0, got {radius_mult}")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2 or samples.shape[0] < 1:
        raise ValidationError(f"samples must be a non-empty (n, 2) array, got {samples.shape}")
    dists = np.linalg.norm(samples[:, None, :] - spec.means[None, :, :], axis=2)
    return float(np.mean(dists.min(axis=1) > radius_mult * spec.std))


def mode_coverage(samples: np.ndarray, spec: MixtureSpec) -> np.ndarray:
    """Fraction of samples nearest to each component mean."""
    samples = np.asarray(samples, dtype=np.float64)
    dists = np.linalg.norm(samples[:, None, :] - spec.means[None, :, :], axis=2)
    nearest = dists.argmin(axis=1)
    return np.bincount(nearest, minlength=len(spec.weights)) / samples.shape[0]


@dataclass
class PointMassEnv:
    """Deterministic 2-D navigation inside a square arena.

    Positions are clipped to [-arena, arena]^2 and actions to
    [-a_max, a_max]^2; each step adds the action to the position. The
    per-step reward is the negative distance to the goal, and an episode
    succeeds when the final position lands within success_radius of it.
    Episodes start in the outer rim of the arena (sup-norm distance at
    least start_rim * arena from the center) so every episode contains a
    real travel phase before the parked phase near the goal.
    """

    goal: np.ndarray = field(default_factory=lambda: np.zeros(2))
    arena: float = 1.0
    a_max: float = 0.25
    horizon: int = 32
    success_radius: float = 0.14
    start_rim: float = 0.7

    def __post_init__(self) -> None:
        self.goal = np.asarray(self.goal, dtype=np.float64)
        if self.goal.shape != (2,):
            raise ShapeError("goal must be a 2-D point")
        if self.horizon < 1 or self.a_max <= 0.0 or self.arena <= 0.0 or self.success_radius <= 0.0:
            raise ValidationError("horizon, a_max, arena, success_radius must be positive")
        if not 0.0 <= self.start_rim < 1.0:
            raise ValidationError(f"start_rim must lie in [0, 1), got {self.start_rim}")

    def step(self, pos: np.ndarray, action: np.ndarray) -> np.ndarray:
        action = np.clip(action, -self.a_max, self.a_max)
        return np.clip(pos + action, -self.arena, self.arena)

    def reward(self, pos: np.ndarray) -> np.ndarray:
        return -np.linalg.norm(pos - self.goal, axis=-1)

    def sample_starts(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform draws from the rim band via rejection sampling."""
        starts = np.empty((n, 2))
        filled = 0
        while filled < n:
            cand = rng.uniform(-self.arena, self.arena, size=(2 * (n - filled) + 8, 2))
            keep = cand[np.abs(cand).max(axis=1) >= self.start_rim * self.arena]
            take = min(len(keep), n - filled)
            starts[filled:filled + take] = keep[:take]
            filled += take
        return starts

    def to_json(self) -> dict:
        return {
            "goal": self.goal.tolist(),
            "arena": self.arena,
            "a_max": self.a_max,
            "horizon": self.horizon,
            "success_radius": self.success_radius,
            "start_rim": self.start_rim,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PointMassEnv":
        return cls(
            goal=np.array(obj["goal"]),
            arena=float(obj["arena"]),
            a_max=float(obj["a_max"]),
            horizon=int(obj["horizon"]),
            success_radius=float(obj["success_radius"]),
            start_rim=float(obj.get("start_rim", 0.0)),
        )


def rollout_batch(
    env: PointMassEnv,
    policy,
    n: int,
    rng: np.random.Generator,
    starts: np.ndarray | None = None,
) -> dict:
    """Run n episodes in lockstep; `policy` maps (n, 2) states to actions.

    Returns stacked states/actions/rewards plus per-episode success flags
    and summed returns. Episode starts are uniform over the arena unless
    given explicitly.
    """
    if n < 1:
        raise ValidationError(f"need n >= 1 episodes, got {n}")
    if starts is None:
        pos = env.sample_starts(n, rng)
    else:
        pos = np.array(starts, dtype=np.float64).reshape(n, 2)
    states = np.empty((env.horizon, n, 2))
    actions = np.empty((env.horizon, n, 2))
    rewards = np.empty((env.horizon, n))
    for step in range(env.horizon):
        act = np.asarray(policy(pos), dtype=np.float64)
        if act.shape != (n, 2):
            raise ShapeError(f"policy returned shape {act.shape}, expected ({n}, 2)")
        if not np.all(np.isfinite(act)):
            raise NonFiniteError(f"policy returned non-finite actions at step {step}")
        states[step] = pos
        actions[step] = np.clip(act, -env.a_max, env.a_max)
        pos = env.step(pos, act)
        rewards[step] = env.reward(pos)
    final_dist = np.linalg.norm(pos - env.goal, axis=1)
    return {
        "states": states.transpose(1, 0, 2),
        "actions": actions.transpose(1, 0, 2),
        "rewards": rewards.T,
        "success": final_dist < env.success_radius,
        "returns": rewards.sum(axis=0),
    }


def rollout(env: PointMassEnv, policy, rng: np.random.Generator, start: np.ndarray | None = None) -> dict:
    """One episode with a single-state policy; returns the same record shape."""
    def batched(states: np.ndarray) -> np.ndarray:
        return np.asarray(policy(states[0]), dtype=np.float64)[None, :]

    out = rollout_batch(env, batched, 1, rng, starts=None if start is None else np.asarray(start)[None, :])
    return {
        "states": out["states"][0],
        "actions": out["actions"][0],
        "rewards": out["rewards"][0],
        "success": bool(out["success"][0]),
        "return": float(out["returns"][0]),
    }


def oracle_policy(env: PointMassEnv):
    """Greedy optimal in this env: head straight for the goal."""
    def act(states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        return np.clip(env.goal[None, :] - states, -env.a_max, env.a_max)
    return act


def behavior_policy(
    env: PointMassEnv,
    rng: np.random.Generator,
    noise_std: float = 0.06,
    random_prob: float = 0.45,
    burst_len: int = 1,
):
    """Noisy-suboptimal data collector: oracle plus Gaussian noise, with
    random-action episodes mixed in.

    With burst_len = 1 each step independently plays a uniformly random
    action with probability random_prob. With burst_len > 1 a random action
    is held for burst_len consecutive steps once triggered (a distracted
    operator), with the trigger rate scaled so the expected fraction of
    random steps stays near random_prob. The closure carries per-episode
    burst state, so build a fresh policy for every rollout batch.
    """
    if burst_len < 1:
        raise ValidationError(f"burst_len must be >= 1, got {burst_len}")
    start_prob = random_prob if burst_len == 1 else random_prob / (burst_len * (1.0 - random_prob) + random_prob)
    state = {"remaining": None, "action": None}

    def act(states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        n = states.shape[0]
        if state["remaining"] is None or len(state["remaining"]) != n:
            state["remaining"] = np.zeros(n, dtype=int)
            state["action"] = np.zeros((n, 2))
        base = env.goal[None, :] - states + noise_std * rng.standard_normal((n, 2))
        trigger = (state["remaining"] == 0) & (rng.random(n) < start_prob)
        fresh = rng.uniform(-env.a_max, env.a_max, size=(n, 2))
        state["action"] = np.where(trigger[:, None], fresh, state["action"])
        state["remaining"] = np.where(trigger, burst_len, state["remaining"])
        bursting = state["remaining"] > 0
        state["remaining"] = np.maximum(state["remaining"] - 1, 0)
        return np.clip(np.where(bursting[:, None], state["action"], base), -env.a_max, env.a_max)

    return act


def make_pointmass_dataset(
    env: PointMassEnv,
    n_episodes: int,
    rng: np.random.Generator,
    noise_std: float = 0.06,
    random_prob: float = 0.45,
    burst_len: int = 1,
) -> OfflineDataset:
    """Offline episodes from the scripted behavior policy."""
    policy = behavior_policy(env, rng, noise_std=noise_std, random_prob=random_prob, burst_len=burst_len)
    out = rollout_batch(env, policy, n_episodes, rng)
    episodes = [
        Episode(out["states"][i], out["actions"][i], out["rewards"][i]) for i in range(n_episodes)
    ]
    meta = {
        "env": env.to_json(),
        "task": "pointmass",
        "behavior": {"noise_std": noise_std, "random_prob": random_prob, "burst_len": burst_len},
    }
    return OfflineDataset(episodes, meta=meta)


def make_toy_dataset(spec: MixtureSpec, n_samples: int, rng: np.random.Generator) -> OfflineDataset:
    """Mixture draws as length-1 episodes with zero-dimensional states."""
    points = sample_mixture(spec, n_samples, rng)
    rewards = toy_reward(points)
    episodes = [
        Episode(np.zeros((1, 0)), points[i:i + 1], np.array([rewards[i]])) for i in range(n_samples)
    ]
    return OfflineDataset(episodes, meta={"mixture": spec.to_json(), "task": "toy"})
