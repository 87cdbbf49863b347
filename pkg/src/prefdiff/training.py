"""Two-phase training orchestration: behavior cloning, then alignment.

A single integer seed determines every random draw in a run; each phase
(initialization, cloning, alignment, evaluation, probes) gets its own
deterministic stream so that adding an evaluation never perturbs training.
Checkpoints embed the schedule, so a run is replayable from its files alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .data import OfflineDataset, PreferencePair, load_offline_dataset, load_pref_dataset, sample_segments
from .diffusion import NoiseModel, make_schedule, reverse_sample_batch
from .envs import MixtureSpec, PointMassEnv, mode_coverage, ood_fraction, rollout_batch, toy_reward
from .errors import ShapeError, TrainingDiverged, ValidationError
from .losses import AlignConfig, LossReport, bc_loss, fkpd_loss, implicit_accuracy, nrpd_loss, rkpd_loss
from .nn import AdamState, MlpParams, adam_step
from .segments import SegmentBatch, avg_dmse

# Stream ids for per-phase generators derived from the run seed.
_INIT, _BC, _ALIGN, _EVAL, _PROBE, _SPLIT, _REF = range(7)


def phase_rng(seed: int, phase: int, step: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, phase, step])


def evaluation_rng(seed: int, step: int = 0) -> np.random.Generator:
    """The stream evaluations use; exposed so external evals can match trace rows."""
    return phase_rng(seed, _EVAL, step)


@dataclass
class ScheduleConfig:
    T: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.2


@dataclass
class NetworkConfig:
    hidden: tuple[int, ...] = (64, 64)
    time_embed_dim: int = 8
    activation: str = "silu"


@dataclass
class ExperimentConfig:
    """Everything a run needs; the seed fully determines the outcome."""

    task: str = "toy"
    offline_path: str = ""
    pref_path: str = ""
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    bc_steps: int = 15000
    bc_batch_size: int = 256
    bc_lr: float = 3e-4
    align_steps: int = 1500
    align_lr: float = 1e-4
    eval_every: int = 250
    eval_episodes: int = 1000
    held_out_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.task not in ("toy", "pointmass"):
            raise ValidationError(f"unknown task {self.task!r}")
        if self.bc_steps < 0 or self.align_steps < 0:
            raise ValidationError("step budgets must be >= 0")
        if not 0.0 < self.held_out_fraction < 1.0:
            raise ValidationError("held_out_fraction must lie in (0, 1)")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        if "schedule" in obj:
            obj["schedule"] = ScheduleConfig(**obj["schedule"])
        if "network" in obj:
            net = dict(obj["network"])
            net["hidden"] = tuple(net.get("hidden", (64, 64)))
            obj["network"] = NetworkConfig(**net)
        if "align" in obj:
            obj["align"] = AlignConfig(**obj["align"])
        return cls(**obj)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def default_config(task: str, seed: int = 0) -> ExperimentConfig:
    """Tuned desk-scale defaults per task."""
    if task == "toy":
        return ExperimentConfig(
            task="toy",
            network=NetworkConfig(hidden=(128, 128)),
            align=AlignConfig(rho=2.0),
            bc_steps=30000,
            bc_lr=5e-4,
            align_steps=3000,
            align_lr=2e-4,
            eval_every=250,
            seed=seed,
        )
    if task == "pointmass":
        return ExperimentConfig(
            task="pointmass",
            align=AlignConfig(mu=1.5),
            bc_steps=15000,
            align_steps=4000,
            align_lr=1e-4,
            eval_every=250,
            seed=seed,
        )
    raise ValidationError(f"unknown task {task!r}")


@dataclass
class TraceRow:
    """One eval-cadence record of the alignment diagnostics.

    i_acc is implicit accuracy on a fixed probe batch of training pairs;
    i_acc_held is the same statistic on the held-out pairs.
    """

    step: int
    variant: str
    total: float
    preference: float
    regularization: float
    i_acc: float
    i_acc_held: float
    e_winning: float
    e_losing: float
    u: float

    FIELDS = (
        "step",
        "variant",
        "total",
        "preference",
        "regularization",
        "i_acc",
        "i_acc_held",
        "e_winning",
        "e_losing",
        "u",
    )


@dataclass
class TrainTrace:
    variant: str
    reference_dmse: float
    rows: list[TraceRow] = field(default_factory=list)

    def validate(self) -> None:
        if not self.rows:
            raise ValidationError("trace has no rows")
        steps = [r.step for r in self.rows]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValidationError("trace steps must be strictly increasing")
        for row in self.rows:
            for name in TraceRow.FIELDS:
                value = getattr(row, name)
                if name != "variant" and not np.isfinite(value):
                    raise ValidationError(f"trace row at step {row.step} has non-finite {name}")

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "reference_dmse": self.reference_dmse,
            "rows": [dataclasses.asdict(r) for r in self.rows],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainTrace":
        return cls(
            variant=obj["variant"],
            reference_dmse=float(obj["reference_dmse"]),
            rows=[TraceRow(**row) for row in obj["rows"]],
        )

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TrainTrace":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


@dataclass
class EvalResult:
    u: float
    records: dict
    extra: dict = field(default_factory=dict)


@dataclass
class BcResult:
    model: NoiseModel
    losses: np.ndarray
    reference_dmse: float


@dataclass
class AlignResult:
    model: NoiseModel
    trace: TrainTrace
    u0: float
    u1: float
    b_used: float
    ref_digest_before: str | None = None
    ref_digest_after: str | None = None


def _check_divergence(losses: list[float], step: int, window: int = 100, horizon: int = 1000) -> None:
    if not np.isfinite(losses[-1]):
        raise TrainingDiverged(f"loss became non-finite at step {step}")
    if len(losses) >= horizon + window:
        recent = float(np.mean(losses[-window:]))
        earlier = float(np.mean(losses[-horizon - window:-horizon]))
        if earlier > 0 and recent > 5.0 * earlier:
            raise TrainingDiverged(
                f"loss rose more than 5x over {horizon} steps at step {step} ({earlier:.4g} -> {recent:.4g})"
            )


def init_model(config: ExperimentConfig, state_dim: int, action_dim: int) -> NoiseModel:
    schedule = make_schedule(config.schedule.T, config.schedule.beta_start, config.schedule.beta_end)
    dims = [action_dim + state_dim + config.network.time_embed_dim, *config.network.hidden, action_dim]
    params = MlpParams.init(dims, phase_rng(config.seed, _INIT), activation=config.network.activation)
    return NoiseModel(params, state_dim, action_dim, schedule, config.network.time_embed_dim)


def reference_dmse(model: NoiseModel, dataset: OfflineDataset, seed: int, n_segments: int = 512, n_draws: int = 4) -> float:
    """Average D-MSE of a model over the offline data; the per-entry
    normalization makes the value independent of the probe segment length."""
    rng = phase_rng(seed, _REF)
    segs = [s.without_reward() for s in sample_segments(dataset, 1, n_segments, rng)]
    return avg_dmse(model, SegmentBatch(segs), rng, n_draws)


def train_bc(config: ExperimentConfig, dataset: OfflineDataset | None = None) -> BcResult:
    """Fit the noise model to the offline data; deterministic per seed."""
    if dataset is None:
        dataset = load_offline_dataset(config.offline_path)
    states, actions = dataset.transitions()
    model = init_model(config, dataset.state_dim, dataset.action_dim)
    vec = model.params.to_vector()
    opt = AdamState.init(vec.size)
    rng = phase_rng(config.seed, _BC)
    losses: list[float] = []
    for step in range(config.bc_steps):
        idx = rng.integers(0, states.shape[0], size=config.bc_batch_size)
        loss, grad = bc_loss(model, states[idx], actions[idx], rng)
        losses.append(loss)
        _check_divergence(losses, step)
        vec = adam_step(vec, grad, opt, config.bc_lr)
        model = model.with_params(model.params.replace_vector(vec))
    ref = reference_dmse(model, dataset, config.seed)
    return BcResult(model=model, losses=np.array(losses), reference_dmse=ref)


def _split_pairs(pairs: list[PreferencePair], fraction: float, seed: int) -> tuple[list[PreferencePair], list[PreferencePair]]:
    if len(pairs) < 2:
        raise ValidationError("need at least two preference pairs to split")
    n_held = max(1, int(round(len(pairs) * fraction)))
    if n_held >= len(pairs):
        n_held = len(pairs) - 1
    perm = phase_rng(seed, _SPLIT).permutation(len(pairs))
    held = [pairs[i] for i in perm[:n_held]]
    train = [pairs[i] for i in perm[n_held:]]
    return train, held


def _probe_report(
    model: NoiseModel,
    ref_model: NoiseModel | None,
    probe_pairs: list[PreferencePair],
    dataset: OfflineDataset,
    cfg: AlignConfig,
    k: int,
    seed: int,
    step: int,
) -> LossReport:
    """Loss decomposition on held-out pairs with a stream independent of training."""
    rng = phase_rng(seed, _PROBE, step)
    if cfg.variant == "fkpd":
        segs = [s.without_reward() for s in sample_segments(dataset, k, cfg.reg_batch_size, rng)]
        report, _ = fkpd_loss(model, probe_pairs, SegmentBatch(segs), cfg, rng)
    elif cfg.variant == "rkpd":
        report, _ = rkpd_loss(model, ref_model, probe_pairs, cfg, rng)
    else:
        report, _ = nrpd_loss(model, probe_pairs, cfg, rng)
    return report


def evaluate(model: NoiseModel, task: str, env, n: int, rng: np.random.Generator) -> EvalResult:
    """Mean toy reward (toy) or mean success rate (point-mass) over n fresh
    samples/episodes, plus per-episode records."""
    if n < 1:
        raise ValidationError(f"need n >= 1 evaluation episodes, got {n}")
    if task == "toy":
        if model.state_dim != 0:
            raise ShapeError(f"toy task needs a state-free model, got state_dim={model.state_dim}")
        samples = reverse_sample_batch(model, np.zeros((n, 0)), rng)
        rewards = toy_reward(samples)
        return EvalResult(
            u=float(rewards.mean()),
            records={"samples": samples, "rewards": rewards},
            extra={
                "ood_fraction": ood_fraction(samples, env),
                "mode_coverage": mode_coverage(samples, env).tolist(),
            },
        )
    if task == "pointmass":
        if model.state_dim != 2:
            raise ShapeError(f"point-mass task needs state_dim=2, got {model.state_dim}")

        def policy(states: np.ndarray) -> np.ndarray:
            return reverse_sample_batch(model, states, rng, clip=env.a_max)

        out = rollout_batch(env, policy, n, rng)
        return EvalResult(
            u=float(out["success"].mean()),
            records={"success": out["success"], "returns": out["returns"]},
        )
    raise ValidationError(f"unknown task {task!r}")


def env_from_dataset(dataset: OfflineDataset):
    """Rebuild the evaluation environment recorded in a dataset header."""
    meta = dataset.meta
    if meta.get("task") == "toy" or "mixture" in meta:
        return "toy", MixtureSpec.from_json(meta["mixture"])
    if meta.get("task") == "pointmass" or "env" in meta:
        return "pointmass", PointMassEnv.from_json(meta["env"])
    raise ValidationError("dataset header does not describe a known environment")


def train_align(
    config: ExperimentConfig,
    bc: BcResult,
    dataset: OfflineDataset | None = None,
    pairs: list[PreferencePair] | None = None,
) -> AlignResult:
    """Run the selected alignment variant from a behavior-cloning checkpoint.

    Records diagnostics on held-out pairs at the eval cadence: average D-MSE
    of winners and losers, implicit accuracy, the probe loss decomposition,
    and the evaluation metric. The reference copy used by rkpd is frozen;
    its digest is reported before and after.
    """
    if dataset is None:
        dataset = load_offline_dataset(config.offline_path)
    if pairs is None:
        pairs, _ = load_pref_dataset(config.pref_path)
    task, env = env_from_dataset(dataset)
    if task != config.task:
        raise ValidationError(f"config task {config.task!r} does not match dataset task {task!r}")

    train_pairs, held = _split_pairs(pairs, config.held_out_fraction, config.seed)
    k = pairs[0].winner.k
    cfg = config.align
    if cfg.b is None:
        cfg = dataclasses.replace(cfg, b=bc.reference_dmse)

    model = bc.model.copy()
    ref_model = bc.model.copy() if cfg.variant == "rkpd" else None
    ref_digest_before = ref_model.param_digest() if ref_model is not None else None

    vec = model.params.to_vector()
    opt = AdamState.init(vec.size)
    rng = phase_rng(config.seed, _ALIGN)
    trace = TrainTrace(variant=cfg.variant, reference_dmse=bc.reference_dmse)
    held_winners = SegmentBatch([p.winner for p in held])
    held_losers = SegmentBatch([p.loser for p in held])
    probe_pairs = held[: min(len(held), cfg.pref_batch_size)]
    train_probe = train_pairs[: min(len(train_pairs), 256)]
    losses: list[float] = []

    def record(step: int) -> None:
        eval_rng = evaluation_rng(config.seed, step)
        report = _probe_report(model, ref_model, probe_pairs, dataset, cfg, k, config.seed, step)
        trace.rows.append(
            TraceRow(
                step=step,
                variant=cfg.variant,
                total=report.total,
                preference=report.preference,
                regularization=report.regularization,
                i_acc=implicit_accuracy(model, train_probe, eval_rng),
                i_acc_held=implicit_accuracy(model, held, eval_rng),
                e_winning=avg_dmse(model, held_winners, eval_rng, 4),
                e_losing=avg_dmse(model, held_losers, eval_rng, 4),
                u=evaluate(model, task, env, config.eval_episodes, eval_rng).u,
            )
        )

    record(0)
    for step in range(1, config.align_steps + 1):
        idx = rng.integers(0, len(train_pairs), size=cfg.pref_batch_size)
        batch = [train_pairs[i] for i in idx]
        if cfg.variant == "fkpd":
            segs = [s.without_reward() for s in sample_segments(dataset, k, cfg.reg_batch_size, rng)]
            report, grad = fkpd_loss(model, batch, SegmentBatch(segs), cfg, rng)
        elif cfg.variant == "rkpd":
            report, grad = rkpd_loss(model, ref_model, batch, cfg, rng)
        else:
            report, grad = nrpd_loss(model, batch, cfg, rng)
        losses.append(report.total)
        _check_divergence(losses, step)
        vec = adam_step(vec, grad, opt, config.align_lr)
        model = model.with_params(model.params.replace_vector(vec))
        if step % config.eval_every == 0 or step == config.align_steps:
            record(step)

    trace.validate()
    return AlignResult(
        model=model,
        trace=trace,
        u0=trace.rows[0].u,
        u1=trace.rows[-1].u,
        b_used=float(cfg.b),
        ref_digest_before=ref_digest_before,
        ref_digest_after=ref_model.param_digest() if ref_model is not None else None,
    )
