"""Training objectives and alignment diagnostics.

The behavior-cloning loss is the standard simplified noise-prediction
objective. The alignment losses all share one preference term, the per-pair
D-MSE gap between winner and loser, wrapped in a negated logistic:

    loss = -mean_i Sigmoid(-rho * (gap_i + regularizer))

and differ only in the regularizer:

* fkpd: mu * (average D-MSE over a fresh minibatch from the offline data)
  minus a constant bias b. Gradients flow through the regularizer, pulling
  the policy to keep the whole dataset likely (a cross-entropy estimate of
  the forward KL to the behavior distribution).
* rkpd: minus the same D-MSE gap evaluated under a frozen reference copy of
  the pre-alignment network. No gradient touches the reference, so this
  term only re-biases the logistic per pair.
* nrpd: no regularizer at all.

All three losses therefore live in (-1, 0). Every draw of (t, noise) is
made before any regularizer draw, so fkpd with mu = 0, b = 0 consumes the
same random stream as nrpd and produces identical values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .autodiff import Tensor, loss_gradient, sigmoid
from .data import PreferencePair
from .diffusion import NoiseModel
from .errors import NonFiniteError, ShapeError, ValidationError
from .nn import lift
from .segments import Segment, SegmentBatch, batch_dmse, batch_dmse_lifted, segment_dmse

VARIANTS = ("fkpd", "rkpd", "nrpd")


@dataclass
class AlignConfig:
    """Hyperparameters of the alignment phase.

    b = None means "set adaptively at alignment start to the pre-alignment
    average D-MSE", which keeps the logistic near its linear regime. The
    nrpd variant ignores mu and b entirely.
    """

    variant: str = "fkpd"
    rho: float = 5.0
    mu: float = 1.0
    b: float | None = None
    pref_batch_size: int = 32
    reg_batch_size: int = 32
    n_noise_draws: int = 1

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.rho <= 0.0:
            raise ValidationError(f"rho must be > 0, got {self.rho}")
        if self.mu < 0.0:
            raise ValidationError(f"mu must be >= 0, got {self.mu}")
        if self.pref_batch_size < 1 or self.reg_batch_size < 1 or self.n_noise_draws < 1:
            raise ValidationError("batch sizes and n_noise_draws must be >= 1")


@dataclass
class LossReport:
    """Decomposition of one alignment-loss evaluation.

    The mean logistic argument recomposes as -rho * (preference +
    regularization); accuracy is the fraction of pairs whose winner scored
    the lower D-MSE under the same draws.
    """

    total: float
    preference: float
    regularization: float
    accuracy: float

    def __post_init__(self) -> None:
        for name in ("total", "preference", "regularization", "accuracy"):
            if not np.isfinite(getattr(self, name)):
                raise NonFiniteError(f"loss report field {name} is not finite")


def bc_loss(
    model: NoiseModel,
    states: np.ndarray,
    actions: np.ndarray,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Noise-prediction loss on a minibatch of (state, action) rows.

    Each row gets its own uniform diffusion step and standard-normal noise;
    the loss is the mean squared residual over all entries. Returns the
    scalar loss and the flat parameter gradient.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or actions.shape[0] < 1:
        raise ValidationError("need a non-empty batch of action rows")
    if states.shape[0] != actions.shape[0]:
        raise ShapeError("states and actions must have matching batch sizes")
    n = actions.shape[0]
    ts = rng.integers(1, model.schedule.T + 1, size=n)
    eps = rng.standard_normal(actions.shape)
    abar = model.schedule.alpha_bars[ts - 1]
    noisy = np.sqrt(abar)[:, None] * actions + np.sqrt(1.0 - abar)[:, None] * eps
    leaves = lift(model.params)
    pred = model.predict_lifted(leaves, noisy, states, ts)
    loss = ((Tensor(eps) - pred) ** 2).mean()
    return float(loss.data), loss_gradient(loss, leaves)


def bt_probability(r_plus: float, r_minus: float, rho: float) -> float:
    """Pairwise win probability: logistic of the temperature-scaled score gap."""
    if not (np.isfinite(r_plus) and np.isfinite(r_minus) and np.isfinite(rho)):
        raise NonFiniteError("bt_probability needs finite inputs")
    return float(expit(rho * (r_plus - r_minus)))


def _pair_stacks(pairs: list[PreferencePair]) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    if not pairs:
        raise ValidationError("preference batch is empty")
    first = pairs[0].winner
    for p in pairs:
        for seg in (p.winner, p.loser):
            if (seg.k, seg.state_dim, seg.action_dim) != (first.k, first.state_dim, first.action_dim):
                raise ShapeError("pairs in a batch must have identical shapes")
    w_states = np.stack([p.winner.states for p in pairs])
    w_actions = np.stack([p.winner.actions for p in pairs])
    l_states = np.stack([p.loser.states for p in pairs])
    l_actions = np.stack([p.loser.actions for p in pairs])
    return w_states, w_actions, l_states, l_actions


def _pair_dmse(leaves, model, states, actions, ts, eps, n_draws: int) -> Tensor:
    """D-MSE per pair, averaged over the draw axis; returns a (B,) tensor."""
    d, B, k, adim = eps.shape
    tiled_states = np.tile(states, (d, 1, 1))
    tiled_actions = np.tile(actions, (d, 1, 1))
    vals = batch_dmse_lifted(leaves, model, tiled_states, tiled_actions, ts.ravel(), eps.reshape(d * B, k, adim))
    return vals.reshape(d, B).mean(axis=0)


def _preference_core(
    model: NoiseModel,
    pairs: list[PreferencePair],
    cfg: AlignConfig,
    rng: np.random.Generator,
    reg_batch: SegmentBatch | None,
    ref_model: NoiseModel | None,
) -> tuple[LossReport, np.ndarray]:
    w_states, w_actions, l_states, l_actions = _pair_stacks(pairs)
    B, k, adim = w_actions.shape
    d = cfg.n_noise_draws

    # Pair draws come first so that variants with and without a regularizer
    # share the same stream: one step per pair per draw, fresh noise for
    # winner and loser.
    ts = rng.integers(1, model.schedule.T + 1, size=(d, B))
    eps_plus = rng.standard_normal((d, B, k, adim))
    eps_minus = rng.standard_normal((d, B, k, adim))

    leaves = lift(model.params)
    d_plus = _pair_dmse(leaves, model, w_states, w_actions, ts, eps_plus, d)
    d_minus = _pair_dmse(leaves, model, l_states, l_actions, ts, eps_minus, d)
    pref = d_plus - d_minus

    if cfg.variant == "fkpd":
        if reg_batch is None:
            raise ValidationError("fkpd needs a regularization batch from the offline data")
        if cfg.b is None:
            raise ValidationError("fkpd needs the bias b resolved before evaluation")
        ts_r = rng.integers(1, model.schedule.T + 1, size=len(reg_batch))
        eps_r = rng.standard_normal((len(reg_batch), reg_batch.k, adim))
        reg_vals = batch_dmse_lifted(leaves, model, reg_batch.stacked_states(), reg_batch.stacked_actions(), ts_r, eps_r)
        reg_shift = reg_vals.mean() * cfg.mu - cfg.b
        args = (pref + reg_shift) * (-cfg.rho)
        reg_value = float(reg_shift.data)
    elif cfg.variant == "rkpd":
        if ref_model is None:
            raise ValidationError("rkpd needs the frozen pre-alignment reference model")
        ref_leaves = lift(ref_model.params, requires_grad=False)
        ref_plus = _pair_dmse(ref_leaves, ref_model, w_states, w_actions, ts, eps_plus, d).data
        ref_minus = _pair_dmse(ref_leaves, ref_model, l_states, l_actions, ts, eps_minus, d).data
        ref_gap = -(ref_plus - ref_minus)
        args = (pref + Tensor(ref_gap)) * (-cfg.rho)
        reg_value = float(ref_gap.mean())
    else:
        args = pref * (-cfg.rho)
        reg_value = 0.0

    if not np.all(np.isfinite(args.data)):
        raise NonFiniteError("non-finite logistic argument in the alignment loss")
    loss = -(sigmoid(args).mean())
    report = LossReport(
        total=float(loss.data),
        preference=float(pref.data.mean()),
        regularization=reg_value,
        accuracy=float(np.mean(pref.data < 0.0)),
    )
    return report, loss_gradient(loss, leaves)


def fkpd_loss(
    model: NoiseModel,
    pairs: list[PreferencePair],
    reg_batch: SegmentBatch,
    cfg: AlignConfig,
    rng: np.random.Generator,
) -> tuple[LossReport, np.ndarray]:
    """Preference loss with the forward-KL (dataset D-MSE) regularizer."""
    if cfg.variant != "fkpd":
        raise ValidationError(f"config variant is {cfg.variant!r}, expected 'fkpd'")
    return _preference_core(model, pairs, cfg, rng, reg_batch, None)


def rkpd_loss(
    model: NoiseModel,
    ref_model: NoiseModel,
    pairs: list[PreferencePair],
    cfg: AlignConfig,
    rng: np.random.Generator,
) -> tuple[LossReport, np.ndarray]:
    """Preference loss regularized against a frozen reference network."""
    if cfg.variant != "rkpd":
        raise ValidationError(f"config variant is {cfg.variant!r}, expected 'rkpd'")
    if ref_model is None:
        raise ValidationError("rkpd needs the frozen pre-alignment reference model")
    return _preference_core(model, pairs, cfg, rng, None, ref_model)


def nrpd_loss(
    model: NoiseModel,
    pairs: list[PreferencePair],
    cfg: AlignConfig,
    rng: np.random.Generator,
) -> tuple[LossReport, np.ndarray]:
    """Unregularized preference loss."""
    if cfg.variant != "nrpd":
        raise ValidationError(f"config variant is {cfg.variant!r}, expected 'nrpd'")
    return _preference_core(model, pairs, cfg, rng, None, None)


def implicit_accuracy(model: NoiseModel, pairs: list[PreferencePair], rng: np.random.Generator) -> float:
    """Fraction of pairs whose winner has the lower D-MSE, one draw per pair."""
    w_states, w_actions, l_states, l_actions = _pair_stacks(pairs)
    B, k, adim = w_actions.shape
    ts = rng.integers(1, model.schedule.T + 1, size=B)
    eps_plus = rng.standard_normal((B, k, adim))
    eps_minus = rng.standard_normal((B, k, adim))
    d_plus = batch_dmse(model, w_states, w_actions, ts, eps_plus)
    d_minus = batch_dmse(model, l_states, l_actions, ts, eps_minus)
    return float(np.mean(d_plus - d_minus < 0.0))


def improvement_factor(u0: float, u1: float) -> float:
    """Relative change of the evaluation metric across alignment."""
    if u0 == 0.0:
        raise ValidationError("improvement factor is undefined for u0 = 0")
    return (u1 - u0) / u0


# -- tested identities --------------------------------------------------------


def entropy_regularized_optimum(rewards: np.ndarray, rho: float) -> np.ndarray:
    """softmax(r / rho): the maximizer of sum_i pi_i (r_i - rho log pi_i)."""
    if rho <= 0.0:
        raise ValidationError(f"rho must be > 0, got {rho}")
    z = np.asarray(rewards, dtype=np.float64) / rho
    z = z - z.max()
    p = np.exp(z)
    return p / p.sum()


def entropy_regularized_value(pi: np.ndarray, rewards: np.ndarray, rho: float) -> float:
    """Objective value sum_i pi_i (r_i - rho log pi_i), with 0 log 0 = 0."""
    pi = np.asarray(pi, dtype=np.float64)
    rewards = np.asarray(rewards, dtype=np.float64)
    mask = pi > 0.0
    return float(np.sum(pi[mask] * (rewards[mask] - rho * np.log(pi[mask]))))


def exhaustive_preference_bounds(
    model: NoiseModel,
    winner: Segment,
    loser: Segment,
    rho: float,
    noise_grid: list[np.ndarray],
) -> tuple[float, float]:
    """Two negated-logsigmoid objectives on a fully enumerated noise set.

    Enumerates every (t, winner-noise, loser-noise) combination, forms the
    scaled D-MSE gap, and returns (expectation inside the logsigmoid,
    expectation outside). Convexity of the negated logsigmoid makes the
    outside estimator an upper bound of the inside one.
    """
    d_w = np.array([[segment_dmse(model, winner, t, e) for e in noise_grid] for t in range(1, model.schedule.T + 1)])
    d_l = np.array([[segment_dmse(model, loser, t, e) for e in noise_grid] for t in range(1, model.schedule.T + 1)])
    args = -rho * (d_w[:, :, None] - d_l[:, None, :])
    inside = float(-log_expit(args.mean()))
    outside = float(np.mean(-log_expit(args)))
    return inside, outside
