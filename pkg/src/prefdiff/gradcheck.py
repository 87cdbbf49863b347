"""Finite-difference verification of every loss gradient.

Builds small seeded instances (well under 200 parameters) of each training
loss, evaluates the analytic gradient, and compares it against central
finite differences of the scalar loss. The random draws inside a loss are
re-seeded identically for every probe, so the loss is a deterministic
function of the parameter vector.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .autodiff import finite_difference, relative_error
from .data import PreferencePair
from .diffusion import NoiseModel, make_schedule
from .losses import AlignConfig, bc_loss, fkpd_loss, nrpd_loss, rkpd_loss
from .nn import MlpParams
from .segments import Segment, SegmentBatch

LOSS_NAMES = ("bc_loss", "fkpd_loss", "rkpd_loss", "nrpd_loss")


@dataclass
class GradCheckResult:
    name: str
    seed: int
    n_params: int
    rel_err: float
    seconds: float


def _tiny_model(rng: np.random.Generator, state_dim: int = 2, action_dim: int = 2) -> NoiseModel:
    schedule = make_schedule(5, 0.05, 0.3)
    temb = 4
    params = MlpParams.init([action_dim + state_dim + temb, 8, action_dim], rng)
    return NoiseModel(params, state_dim, action_dim, schedule, time_embed_dim=temb)


def _random_segment(rng: np.random.Generator, k: int, state_dim: int, action_dim: int) -> Segment:
    return Segment(rng.standard_normal((k, state_dim)), rng.standard_normal((k, action_dim)))


def _random_pairs(rng: np.random.Generator, n: int, k: int, state_dim: int, action_dim: int) -> list[PreferencePair]:
    return [
        PreferencePair(
            _random_segment(rng, k, state_dim, action_dim),
            _random_segment(rng, k, state_dim, action_dim),
        )
        for _ in range(n)
    ]


def check_loss(name: str, seed: int, fd_step: float = 1e-5) -> GradCheckResult:
    """Analytic vs finite-difference gradient for one loss on one seed."""
    rng = np.random.default_rng(seed)
    model = _tiny_model(rng)
    k = 2
    pairs = _random_pairs(rng, 3, k, model.state_dim, model.action_dim)
    reg = SegmentBatch([_random_segment(rng, k, model.state_dim, model.action_dim) for _ in range(3)])
    ref = model.with_params(model.params.replace_vector(model.params.to_vector() + 0.1 * rng.standard_normal(model.params.n_params)))
    states = rng.standard_normal((4, model.state_dim))
    actions = rng.standard_normal((4, model.action_dim))
    draw_seed = seed + 1000

    def run(vec: np.ndarray) -> tuple[float, np.ndarray]:
        m = model.with_params(model.params.replace_vector(vec))
        loss_rng = np.random.default_rng(draw_seed)
        if name == "bc_loss":
            return bc_loss(m, states, actions, loss_rng)
        if name == "fkpd_loss":
            cfg = AlignConfig(variant="fkpd", rho=2.0, mu=1.3, b=0.7)
            report, grad = fkpd_loss(m, pairs, reg, cfg, loss_rng)
            return report.total, grad
        if name == "rkpd_loss":
            cfg = AlignConfig(variant="rkpd", rho=2.0)
            report, grad = rkpd_loss(m, ref, pairs, cfg, loss_rng)
            return report.total, grad
        if name == "nrpd_loss":
            cfg = AlignConfig(variant="nrpd", rho=2.0)
            report, grad = nrpd_loss(m, pairs, cfg, loss_rng)
            return report.total, grad
        raise ValueError(f"unknown loss {name!r}")

    start = time.perf_counter()
    vec = model.params.to_vector()
    _, analytic = run(vec)
    fd = finite_difference(lambda v: run(v)[0], vec, step=fd_step)
    return GradCheckResult(
        name=name,
        seed=seed,
        n_params=vec.size,
        rel_err=relative_error(analytic, fd),
        seconds=time.perf_counter() - start,
    )


def run_gradient_suite(seeds=(0, 1), tolerance: float = 1e-4) -> tuple[list[GradCheckResult], bool]:
    results = [check_loss(name, seed) for name in LOSS_NAMES for seed in seeds]
    return results, all(r.rel_err <= tolerance for r in results)
