"""Segment-level view of the diffusion policy.

A segment is a length-k run of (state, action) pairs; its denoising mean
square error (D-MSE) is the average squared residual between injected noise
and the model's prediction, taken over all k * action_dim entries. Averaging
(rather than summing) keeps the scale independent of k, so one temperature
works across segment lengths. All k elements of a segment are noised at the
same diffusion step.

The optional `reward_sum` field exists for the labeling teacher and the
evaluators only; no loss in this package reads it, and labeled segments
carry it erased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .diffusion import NoiseModel
from .errors import ShapeError, ValidationError


@dataclass
class Segment:
    states: np.ndarray   # (k, state_dim)
    actions: np.ndarray  # (k, action_dim)
    reward_sum: float | None = None

    def __post_init__(self) -> None:
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ShapeError("states and actions must be 2-D (k, dim) arrays")
        if self.states.shape[0] != self.actions.shape[0] or self.actions.shape[0] < 1:
            raise ShapeError(
                f"states ({self.states.shape[0]} rows) and actions ({self.actions.shape[0]} rows) must share k >= 1"
            )

    @property
    def k(self) -> int:
        return self.actions.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    def without_reward(self) -> "Segment":
        return Segment(self.states, self.actions, None)


@dataclass
class SegmentBatch:
    segments: list[Segment]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValidationError("segment batch is empty")
        first = self.segments[0]
        for seg in self.segments[1:]:
            if (seg.k, seg.state_dim, seg.action_dim) != (first.k, first.state_dim, first.action_dim):
                raise ShapeError("segments in a batch must have identical shapes")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def k(self) -> int:
        return self.segments[0].k

    def stacked_states(self) -> np.ndarray:
        return np.stack([s.states for s in self.segments])

    def stacked_actions(self) -> np.ndarray:
        return np.stack([s.actions for s in self.segments])


def batch_dmse_lifted(
    leaves: list[Tensor],
    model: NoiseModel,
    states: np.ndarray,   # (B, k, state_dim)
    actions: np.ndarray,  # (B, k, action_dim)
    ts: np.ndarray,       # (B,) ints in [1, T]
    eps: np.ndarray,      # (B, k, action_dim)
) -> Tensor:
    """Per-segment D-MSE as a (B,) tensor, differentiable in the parameters.

    Every element of segment i is noised at the shared step ts[i]; the
    residual mean runs over all k * action_dim entries.
    """
    B, k, adim = actions.shape
    if eps.shape != actions.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match actions shape {actions.shape}")
    if np.any(ts < 1) or np.any(ts > model.schedule.T):
        raise ValidationError("diffusion steps out of range")
    abar = model.schedule.alpha_bars[ts - 1]
    noisy = np.sqrt(abar)[:, None, None] * actions + np.sqrt(1.0 - abar)[:, None, None] * eps
    flat_states = states.reshape(B * k, states.shape[2])
    flat_noisy = noisy.reshape(B * k, adim)
    flat_t = np.repeat(ts, k)
    pred = model.predict_lifted(leaves, flat_noisy, flat_states, flat_t)
    resid = Tensor(eps.reshape(B * k, adim)) - pred
    return (resid ** 2).reshape(B, k * adim).mean(axis=1)


def batch_dmse(model: NoiseModel, states, actions, ts, eps) -> np.ndarray:
    """Plain-array twin of `batch_dmse_lifted`."""
    from .nn import lift

    return batch_dmse_lifted(lift(model.params, requires_grad=False), model, states, actions, ts, eps).data


def segment_dmse(model: NoiseModel, seg: Segment, t: int, eps: np.ndarray) -> float:
    """D-MSE of one segment at one diffusion step with given noise."""
    model.schedule.check_t(int(t))
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != seg.actions.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match actions shape {seg.actions.shape}")
    vals = batch_dmse(model, seg.states[None], seg.actions[None], np.array([int(t)]), eps[None])
    return float(vals[0])


def avg_dmse(model: NoiseModel, batch: SegmentBatch, rng: np.random.Generator, n_draws: int) -> float:
    """Monte-Carlo average D-MSE over a batch of segments.

    Each draw assigns every segment a fresh uniform step in [1, T] and fresh
    standard-normal noise; the estimate averages over draws and segments.
    Draw order per round: steps first, then noise.
    """
    if n_draws < 1:
        raise ValidationError(f"n_draws must be >= 1, got {n_draws}")
    states = batch.stacked_states()
    actions = batch.stacked_actions()
    B, k, adim = actions.shape
    total = 0.0
    for _ in range(n_draws):
        ts = rng.integers(1, model.schedule.T + 1, size=B)
        eps = rng.standard_normal((B, k, adim))
        total += float(batch_dmse(model, states, actions, ts, eps).mean())
    return total / n_draws
