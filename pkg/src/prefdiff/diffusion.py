"""Denoising diffusion machinery for action generation.

Covers the variance schedule, the closed-form forward noising map, the
conditional noise-prediction network, and the reverse sampling chain that
turns a trained noise predictor into an action sampler. Unconditional
generation (the toy generative task) is the same code path with a
zero-dimensional state.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError, NonFiniteError, ShapeError, ValidationError
from .nn import MlpParams, Tensor, lift, mlp_apply

CHECKPOINT_FORMAT = "prefdiff-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class DiffusionSchedule:
    """Per-step noise variances and their running products.

    `betas[i]` is the variance added at diffusion step i+1 (steps are
    1-based); `alpha_bars[i]` is the exact cumulative product of
    (1 - beta) up to that step.
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValidationError(f"diffusion step t={t} outside [1, {self.T}]")

    def beta(self, t: int) -> float:
        self.check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self.check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        self.check_t(t)
        return float(self.alpha_bars[t - 1])


def schedule_from_betas(betas) -> DiffusionSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ValidationError("need at least one beta")
    if not (np.all(betas > 0.0) and np.all(betas < 1.0)):
        raise ValidationError("betas must lie strictly inside (0, 1)")
    if np.any(np.diff(betas) < 0.0):
        raise ValidationError("betas must be monotone non-decreasing")
    alphas = 1.0 - betas
    sched = DiffusionSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))
    for arr in (sched.betas, sched.alphas, sched.alpha_bars):
        arr.setflags(write=False)
    return sched


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.2) -> DiffusionSchedule:
    """Linearly interpolated variance schedule over T steps."""
    if not isinstance(T, int) or T < 1:
        raise ValidationError(f"T must be a positive integer, got {T!r}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValidationError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    return schedule_from_betas(np.linspace(beta_start, beta_end, T))


def forward_noise(x0: np.ndarray, t: int, eps: np.ndarray, schedule: DiffusionSchedule) -> np.ndarray:
    """Closed-form noising: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != x0.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match x0 shape {x0.shape}")
    abar = schedule.alpha_bar(t)
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def time_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of diffusion step indices; shape (n, dim)."""
    if dim < 2 or dim % 2 != 0:
        raise ValidationError(f"time embedding dim must be even and >= 2, got {dim}")
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@dataclass
class NoiseModel:
    """Noise predictor conditioned on state and diffusion step.

    The network sees (noisy action, state, sinusoidal step embedding)
    concatenated into one row and predicts the injected noise.
    """

    params: MlpParams
    state_dim: int
    action_dim: int
    schedule: DiffusionSchedule
    time_embed_dim: int = 8

    def __post_init__(self) -> None:
        expected_in = self.action_dim + self.state_dim + self.time_embed_dim
        if self.params.in_dim != expected_in:
            raise ShapeError(f"network input dim {self.params.in_dim} != expected {expected_in}")
        if self.params.out_dim != self.action_dim:
            raise ShapeError(f"network output dim {self.params.out_dim} != action dim {self.action_dim}")

    def features(self, noisy_actions: np.ndarray, states: np.ndarray, t) -> np.ndarray:
        noisy_actions = np.asarray(noisy_actions, dtype=np.float64)
        states = np.asarray(states, dtype=np.float64)
        n = noisy_actions.shape[0]
        if noisy_actions.shape != (n, self.action_dim):
            raise ShapeError(f"noisy actions shape {noisy_actions.shape} != (n, {self.action_dim})")
        if states.shape != (n, self.state_dim):
            raise ShapeError(f"states shape {states.shape} != ({n}, {self.state_dim})")
        t_arr = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=np.float64)), (n,))
        emb = time_embedding(t_arr, self.time_embed_dim)
        return np.concatenate([noisy_actions, states, emb], axis=1)

    def predict(self, noisy_actions: np.ndarray, states: np.ndarray, t) -> np.ndarray:
        """Predicted noise, shape (n, action_dim); pure in the parameters."""
        feats = self.features(noisy_actions, states, t)
        return mlp_apply(lift(self.params, requires_grad=False), self.params, Tensor(feats)).data

    def predict_lifted(self, leaves: list[Tensor], noisy_actions: np.ndarray, states: np.ndarray, t) -> Tensor:
        """Differentiable twin of `predict`; numerically identical."""
        feats = self.features(noisy_actions, states, t)
        return mlp_apply(leaves, self.params, Tensor(feats))

    def with_params(self, params: MlpParams) -> "NoiseModel":
        return NoiseModel(params, self.state_dim, self.action_dim, self.schedule, self.time_embed_dim)

    def copy(self) -> "NoiseModel":
        return self.with_params(self.params.copy())

    def param_digest(self) -> str:
        return hashlib.sha256(self.params.to_vector().tobytes()).hexdigest()


def reverse_sample_batch(
    model,
    states: np.ndarray,
    rng: np.random.Generator,
    clip: float | None = None,
) -> np.ndarray:
    """Run the reverse chain for a batch of states; returns (n, action_dim).

    Starts from standard normal noise and applies the denoising posterior
    mean with per-step noise scale sqrt(beta_t), adding no noise at the last
    step. The model only needs `predict`, `schedule`, and `action_dim`, so
    analytic stand-ins work too.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2:
        raise ShapeError(f"states must be (n, state_dim), got {states.shape}")
    n = states.shape[0]
    sched = model.schedule
    a = rng.standard_normal((n, model.action_dim))
    for t in range(sched.T, 0, -1):
        eps_hat = model.predict(a, states, t)
        beta, alpha, abar = sched.beta(t), sched.alpha(t), sched.alpha_bar(t)
        a = (a - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            a = a + np.sqrt(beta) * rng.standard_normal((n, model.action_dim))
        if not np.all(np.isfinite(a)):
            bad = np.abs(a[np.isfinite(a)]).max() if np.isfinite(a).any() else float("nan")
            raise NonFiniteError(
                f"reverse chain produced non-finite values at step t={t} (max finite magnitude {bad:.3e})"
            )
    if clip is not None:
        a = np.clip(a, -clip, clip)
    return a


def reverse_sample(model, state: np.ndarray, rng: np.random.Generator, clip: float | None = None) -> np.ndarray:
    """Sample one action for one state."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 1:
        raise ShapeError(f"state must be a vector, got shape {state.shape}")
    return reverse_sample_batch(model, state[None, :], rng, clip=clip)[0]


# -- checkpoint io -----------------------------------------------------------
#
# One JSON header line (self-describing: dims, activation tags, schedule)
# followed by the flat parameter vector as raw little-endian float64 bytes.
# The betas are serialized through repr-exact JSON floats, so a reloaded
# checkpoint is bit-identical to the saved one.


def save_checkpoint(model: NoiseModel, path, extra: dict | None = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        "time_embed_dim": model.time_embed_dim,
        "layer_dims": model.params.layer_dims,
        "activations": list(model.params.activations),
        "betas": [float(b) for b in model.schedule.betas],
        "extra": extra or {},
    }
    vec = model.params.to_vector()
    header["param_count"] = int(vec.size)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(vec.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[NoiseModel, dict]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        body = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise DataFormatError(f"not a checkpoint file: format={header.get('format')!r}")
    vec = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if vec.size != header["param_count"]:
        raise DataFormatError(f"expected {header['param_count']} parameters, found {vec.size}")
    dims = header["layer_dims"]
    template = MlpParams(
        weights=[np.zeros((dims[i], dims[i + 1])) for i in range(len(dims) - 1)],
        biases=[np.zeros(dims[i + 1]) for i in range(len(dims) - 1)],
        activations=tuple(header["activations"]),
    )
    model = NoiseModel(
        params=template.replace_vector(vec),
        state_dim=header["state_dim"],
        action_dim=header["action_dim"],
        schedule=schedule_from_betas(np.array(header["betas"], dtype=np.float64)),
        time_embed_dim=header["time_embed_dim"],
    )
    return model, header.get("extra", {})


def checkpoint_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
