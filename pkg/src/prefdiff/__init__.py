"""Preference alignment for small diffusion policies.

Two-phase pipeline: fit a denoising diffusion policy to an offline dataset
(behavior cloning), then align it to pairwise preference labels with a
direct preference loss. Three alignment variants are provided: forward-KL
regularized (anchored on the offline data), reverse-KL regularized (anchored
on a frozen reference network), and unregularized. Desk-scale testbeds,
diagnostics, and a CLI round out the pipeline.
"""

from .autodiff import Tensor, finite_difference, loss_gradient, relative_error, sigmoid, silu
from .data import (
    Episode,
    OfflineDataset,
    PreferencePair,
    TeacherConfig,
    build_pref_dataset,
    export_pref_jsonl,
    load_offline_dataset,
    load_pref_dataset,
    load_pref_jsonl,
    sample_segments,
    save_offline_dataset,
    save_pref_dataset,
    script_teacher_label,
)
from .diffusion import (
    DiffusionSchedule,
    NoiseModel,
    checkpoint_digest,
    forward_noise,
    load_checkpoint,
    make_schedule,
    reverse_sample,
    reverse_sample_batch,
    save_checkpoint,
    schedule_from_betas,
    time_embedding,
)
from .envs import (
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
from .errors import (
    DataFormatError,
    NonFiniteError,
    PrefdiffError,
    ShapeError,
    TrainingDiverged,
    ValidationError,
)
from .losses import (
    AlignConfig,
    LossReport,
    bc_loss,
    bt_probability,
    entropy_regularized_optimum,
    entropy_regularized_value,
    exhaustive_preference_bounds,
    fkpd_loss,
    implicit_accuracy,
    improvement_factor,
    nrpd_loss,
    rkpd_loss,
)
from .nn import AdamState, MlpParams, adam_step, lift, mlp_apply, mlp_forward
from .segments import Segment, SegmentBatch, avg_dmse, batch_dmse, segment_dmse
from .training import (
    AlignResult,
    BcResult,
    EvalResult,
    ExperimentConfig,
    NetworkConfig,
    ScheduleConfig,
    TraceRow,
    TrainTrace,
    default_config,
    env_from_dataset,
    evaluate,
    evaluation_rng,
    reference_dmse,
    train_align,
    train_bc,
)

__version__ = "0.1.0"
