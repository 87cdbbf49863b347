import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.special import expit

from prefdiff.autodiff import Tensor, finite_difference, relative_error
from prefdiff.data import PreferencePair
from prefdiff.diffusion import NoiseModel, make_schedule
from prefdiff.errors import NonFiniteError, ValidationError
from prefdiff.losses import (
    AlignConfig,
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
from prefdiff.nn import MlpParams
from prefdiff.segments import Segment, SegmentBatch, batch_dmse


def make_model(seed=0, state_dim=2, action_dim=2, T=5, zero=False):
    dims = [action_dim + state_dim + 4, 8, action_dim]
    if zero:
        params = MlpParams(
            weights=[np.zeros((dims[0], dims[1])), np.zeros((dims[1], dims[2]))],
            biases=[np.zeros(dims[1]), np.zeros(dims[2])],
            activations=("silu",),
        )
    else:
        params = MlpParams.init(dims, np.random.default_rng(seed))
    return NoiseModel(params, state_dim, action_dim, make_schedule(T, 0.05, 0.3), time_embed_dim=4)


def make_pairs(rng, n, k=2, state_dim=2, action_dim=2):
    return [
        PreferencePair(
            Segment(rng.standard_normal((k, state_dim)), rng.standard_normal((k, action_dim))),
            Segment(rng.standard_normal((k, state_dim)), rng.standard_normal((k, action_dim))),
        )
        for _ in range(n)
    ]


def make_reg(rng, n=3, k=2, state_dim=2, action_dim=2):
    return SegmentBatch(
        [Segment(rng.standard_normal((k, state_dim)), rng.standard_normal((k, action_dim))) for _ in range(n)]
    )


# -- behavior cloning loss -----------------------------------------------------


def test_bc_loss_zero_model_near_unit_noise_power():
    model = make_model(zero=True)
    rng = np.random.default_rng(0)
    n = 4000
    loss, grad = bc_loss(model, np.zeros((n, 2)), np.zeros((n, 2)), rng)
    se = np.sqrt(2.0 / (n * 2))
    assert abs(loss - 1.0) < 3 * se
    assert grad.shape == (model.params.n_params,)
    assert np.all(np.isfinite(grad))


def test_bc_loss_echo_oracle_is_exactly_zero():
    model = make_model(seed=1)
    rng = np.random.default_rng(42)
    states = rng.standard_normal((5, 2))
    actions = rng.standard_normal((5, 2))

    clone = np.random.default_rng(123)
    clone.integers(1, model.schedule.T + 1, size=5)
    drawn_eps = clone.standard_normal((5, 2))

    class EchoModel:
        params = model.params
        schedule = model.schedule

        def predict_lifted(self, leaves, noisy, st, ts):
            return Tensor(drawn_eps)

    loss, grad = bc_loss(EchoModel(), states, actions, np.random.default_rng(123))
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros(model.params.n_params))


def test_bc_loss_gradient_matches_finite_differences():
    model = make_model(seed=3)
    rng = np.random.default_rng(5)
    states = rng.standard_normal((4, 2))
    actions = rng.standard_normal((4, 2))

    def loss_at(vec):
        m = model.with_params(model.params.replace_vector(vec))
        return bc_loss(m, states, actions, np.random.default_rng(77))

    vec = model.params.to_vector()
    _, analytic = loss_at(vec)
    fd = finite_difference(lambda v: loss_at(v)[0], vec)
    assert relative_error(analytic, fd) <= 1e-4


def test_bc_loss_rejects_empty_batch():
    model = make_model()
    with pytest.raises(ValidationError):
        bc_loss(model, np.zeros((0, 2)), np.zeros((0, 2)), np.random.default_rng(0))


# -- preference model ------------------------------------------------------------


def test_bt_probability_symmetry():
    assert bt_probability(1.7, 1.7, 3.0) == 0.5


def test_bt_probability_log3_gap():
    assert bt_probability(np.log(3.0), 0.0, 1.0) == pytest.approx(0.75, abs=1e-12)


def test_bt_probability_complements_sum_to_one():
    rng = np.random.default_rng(9)
    for _ in range(50):
        a, b, rho = rng.standard_normal(), rng.standard_normal(), float(rng.uniform(0.1, 10))
        assert bt_probability(a, b, rho) + bt_probability(b, a, rho) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(NonFiniteError):
        bt_probability(np.inf, 0.0, 1.0)


# -- alignment losses -------------------------------------------------------------


def test_fkpd_matches_independent_formula_recomputation():
    """Clone the loss's draws and rebuild the objective from public pieces."""
    model = make_model(seed=2)
    rng = np.random.default_rng(11)
    pairs = make_pairs(rng, 4)
    reg = make_reg(rng, 3)
    cfg = AlignConfig(variant="fkpd", rho=2.5, mu=0.8, b=0.3)
    seed = 555
    report, _ = fkpd_loss(model, pairs, reg, cfg, np.random.default_rng(seed))

    clone = np.random.default_rng(seed)
    B, k, adim = 4, 2, 2
    ts = clone.integers(1, model.schedule.T + 1, size=(1, B))
    eps_p = clone.standard_normal((1, B, k, adim))
    eps_m = clone.standard_normal((1, B, k, adim))
    ts_r = clone.integers(1, model.schedule.T + 1, size=3)
    eps_r = clone.standard_normal((3, k, adim))
    w_states = np.stack([p.winner.states for p in pairs])
    w_actions = np.stack([p.winner.actions for p in pairs])
    l_states = np.stack([p.loser.states for p in pairs])
    l_actions = np.stack([p.loser.actions for p in pairs])
    d_plus = batch_dmse(model, w_states, w_actions, ts[0], eps_p[0])
    d_minus = batch_dmse(model, l_states, l_actions, ts[0], eps_m[0])
    reg_val = batch_dmse(model, reg.stacked_states(), reg.stacked_actions(), ts_r, eps_r).mean()
    pref = d_plus - d_minus
    args = -cfg.rho * (pref + cfg.mu * reg_val - cfg.b)
    assert report.total == pytest.approx(float(-expit(args).mean()), rel=1e-12)
    assert report.preference == pytest.approx(float(pref.mean()), rel=1e-12)
    assert report.regularization == pytest.approx(float(cfg.mu * reg_val - cfg.b), rel=1e-12)
    assert report.accuracy == float(np.mean(pref < 0))
    # report decomposition recomposes to the mean logistic argument
    assert -cfg.rho * (report.preference + report.regularization) == pytest.approx(float(args.mean()), rel=1e-12)


def test_rkpd_matches_independent_formula_recomputation():
    model = make_model(seed=4)
    rng = np.random.default_rng(21)
    pairs = make_pairs(rng, 3)
    ref = make_model(seed=17)
    cfg = AlignConfig(variant="rkpd", rho=1.5)
    seed = 777
    report, _ = rkpd_loss(model, ref, pairs, cfg, np.random.default_rng(seed))

    clone = np.random.default_rng(seed)
    B, k, adim = 3, 2, 2
    ts = clone.integers(1, model.schedule.T + 1, size=(1, B))
    eps_p = clone.standard_normal((1, B, k, adim))
    eps_m = clone.standard_normal((1, B, k, adim))
    w_states = np.stack([p.winner.states for p in pairs])
    w_actions = np.stack([p.winner.actions for p in pairs])
    l_states = np.stack([p.loser.states for p in pairs])
    l_actions = np.stack([p.loser.actions for p in pairs])
    pref = batch_dmse(model, w_states, w_actions, ts[0], eps_p[0]) - batch_dmse(model, l_states, l_actions, ts[0], eps_m[0])
    ref_gap = batch_dmse(ref, w_states, w_actions, ts[0], eps_p[0]) - batch_dmse(ref, l_states, l_actions, ts[0], eps_m[0])
    args = -cfg.rho * (pref - ref_gap)
    assert report.total == pytest.approx(float(-expit(args).mean()), rel=1e-12)


def test_pair_swap_negates_logistic_argument_exactly():
    model = make_model(seed=5)
    rng = np.random.default_rng(31)
    w = Segment(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    l = Segment(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    t = np.array([3])
    e_w = rng.standard_normal((1, 2, 2))
    e_l = rng.standard_normal((1, 2, 2))
    d_w = batch_dmse(model, w.states[None], w.actions[None], t, e_w)
    d_l = batch_dmse(model, l.states[None], l.actions[None], t, e_l)
    rho = 4.0
    arg = -rho * (d_w - d_l)
    arg_swapped = -rho * (d_l - d_w)
    assert np.array_equal(arg_swapped, -arg)
    # ties broken as "not <": the two orderings' indicators always sum to 1
    assert int(d_w[0] < d_l[0]) + int(d_l[0] < d_w[0]) == 1


def test_degenerate_identical_pair_with_identical_noise_gives_half():
    model = make_model(seed=6)
    rng = np.random.default_rng(3)
    seg = Segment(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
    t = np.array([2])
    eps = rng.standard_normal((1, 2, 2))
    d = batch_dmse(model, seg.states[None], seg.actions[None], t, eps)
    assert float(-expit(-(5.0) * (d - d))[0]) == -0.5


def test_nrpd_equals_fkpd_with_zero_mu_and_bias_bitwise():
    model = make_model(seed=7)
    rng = np.random.default_rng(13)
    pairs = make_pairs(rng, 5)
    reg = make_reg(rng, 4)
    seed = 2024
    fk_cfg = AlignConfig(variant="fkpd", rho=5.0, mu=0.0, b=0.0)
    nr_cfg = AlignConfig(variant="nrpd", rho=5.0)
    fk_report, fk_grad = fkpd_loss(model, pairs, reg, fk_cfg, np.random.default_rng(seed))
    nr_report, nr_grad = nrpd_loss(model, pairs, nr_cfg, np.random.default_rng(seed))
    assert fk_report.total == nr_report.total
    assert fk_report.preference == nr_report.preference
    assert np.array_equal(fk_grad, nr_grad)


def test_rkpd_at_reference_is_exactly_minus_half_with_nonzero_gradient():
    model = make_model(seed=8)
    ref = model.copy()
    pairs = make_pairs(np.random.default_rng(17), 6)
    cfg = AlignConfig(variant="rkpd", rho=5.0)
    report, grad = rkpd_loss(model, ref, pairs, cfg, np.random.default_rng(0))
    assert report.total == -0.5
    assert report.preference + report.regularization == 0.0
    assert np.linalg.norm(grad) > 0.0


def test_rkpd_reference_parameters_untouched_and_regularizer_theta_free():
    model = make_model(seed=9)
    ref = make_model(seed=23)
    ref_before = ref.params.to_vector().copy()
    pairs = make_pairs(np.random.default_rng(5), 4)
    cfg = AlignConfig(variant="rkpd", rho=2.0)
    seed = 31
    report_a, _ = rkpd_loss(model, ref, pairs, cfg, np.random.default_rng(seed))
    # a different theta, same draws: the rkpd regularization term cannot move
    other = make_model(seed=77)
    report_b, _ = rkpd_loss(other, ref, pairs, cfg, np.random.default_rng(seed))
    assert report_a.regularization == report_b.regularization
    assert np.array_equal(ref.params.to_vector(), ref_before)


def test_fkpd_regularizer_depends_on_theta_rkpd_does_not():
    rng = np.random.default_rng(41)
    pairs = make_pairs(rng, 3)
    reg = make_reg(rng, 3)
    model = make_model(seed=10)
    ref = make_model(seed=11)
    seed = 99
    vec = model.params.to_vector()

    def fk_reg(v):
        m = model.with_params(model.params.replace_vector(v))
        cfg = AlignConfig(variant="fkpd", rho=1.0, mu=1.0, b=0.0)
        return fkpd_loss(m, pairs, reg, cfg, np.random.default_rng(seed))[0].regularization

    def rk_reg(v):
        m = model.with_params(model.params.replace_vector(v))
        cfg = AlignConfig(variant="rkpd", rho=1.0)
        return rkpd_loss(m, ref, pairs, cfg, np.random.default_rng(seed))[0].regularization

    fd_fk = finite_difference(fk_reg, vec, step=1e-5)
    fd_rk = finite_difference(rk_reg, vec, step=1e-5)
    assert np.linalg.norm(fd_fk) > 1e-3
    assert np.array_equal(fd_rk, np.zeros_like(vec))


def test_alignment_losses_live_in_open_unit_negative_interval():
    rng = np.random.default_rng(55)
    for trial in range(10):
        model = make_model(seed=trial)
        pairs = make_pairs(rng, 4)
        reg = make_reg(rng, 3)
        ref = make_model(seed=trial + 50)
        losses = [
            fkpd_loss(model, pairs, reg, AlignConfig(variant="fkpd", rho=5.0, b=0.1), np.random.default_rng(trial))[0].total,
            rkpd_loss(model, ref, pairs, AlignConfig(variant="rkpd"), np.random.default_rng(trial))[0].total,
            nrpd_loss(model, pairs, AlignConfig(variant="nrpd"), np.random.default_rng(trial))[0].total,
        ]
        for value in losses:
            assert -1.0 < value < 0.0


def test_loss_preconditions_enforced():
    model = make_model()
    pairs = make_pairs(np.random.default_rng(0), 2)
    reg = make_reg(np.random.default_rng(1))
    with pytest.raises(ValidationError):
        fkpd_loss(model, pairs, reg, AlignConfig(variant="nrpd"), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        fkpd_loss(model, [], reg, AlignConfig(variant="fkpd", b=0.0), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        fkpd_loss(model, pairs, reg, AlignConfig(variant="fkpd", b=None), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        rkpd_loss(model, None, pairs, AlignConfig(variant="rkpd"), np.random.default_rng(0))
    with pytest.raises(ValidationError):
        AlignConfig(rho=0.0)
    with pytest.raises(ValidationError):
        AlignConfig(mu=-0.1)


def test_non_finite_logistic_argument_rejected():
    model = make_model(seed=12)
    huge = model.with_params(model.params.replace_vector(model.params.to_vector() * 1e160))
    pairs = make_pairs(np.random.default_rng(2), 2)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NonFiniteError):
            nrpd_loss(huge, pairs, AlignConfig(variant="nrpd"), np.random.default_rng(0))


# -- diagnostics ------------------------------------------------------------------


def test_implicit_accuracy_null_hypothesis_near_half():
    model = make_model(seed=13)
    rng = np.random.default_rng(7)
    pairs = make_pairs(rng, 1200, k=1)
    acc = implicit_accuracy(model, pairs, np.random.default_rng(0))
    se = 0.5 / np.sqrt(1200)
    assert abs(acc - 0.5) < 3 * se


def test_implicit_accuracy_is_one_when_winner_noise_predicted_exactly():
    # stand-in predictor: recovers the injected noise exactly on segments
    # whose state flag is +1 (the winners), answers with the wrong sign on
    # the rest, so every indicator fires
    base = make_model(seed=1, T=5)

    class SplitModel:
        params = base.params
        schedule = base.schedule

        def predict_lifted(self, leaves, noisy, states, ts):
            abar = self.schedule.alpha_bars[np.asarray(ts, dtype=int) - 1][:, None]
            recovered = noisy / np.sqrt(1.0 - abar)  # actions are all zero
            sign = np.sign(states[:, :1])
            return Tensor(recovered * sign)

    pairs = [
        PreferencePair(Segment(np.ones((1, 2)), np.zeros((1, 2))), Segment(-np.ones((1, 2)), np.zeros((1, 2))))
        for _ in range(200)
    ]
    acc = implicit_accuracy(SplitModel(), pairs, np.random.default_rng(3))
    assert acc == 1.0


def test_improvement_factor_formula():
    assert improvement_factor(50.0, 75.0) == 0.5
    assert improvement_factor(80.0, 80.0) == 0.0
    with pytest.raises(ValidationError):
        improvement_factor(0.0, 1.0)


def test_improvement_factor_reported_percentage_inverse_check():
    u0 = 61.1
    u1 = u0 * 1.472
    assert improvement_factor(u0, u1) == pytest.approx(0.472, abs=1e-12)


# -- tested identities --------------------------------------------------------------


def simplex_maximizer(rewards, rho):
    """Constrained numerical maximizer of sum_i p_i (r_i - rho log p_i)."""
    m = rewards.size

    def negative(p):
        return -float(np.sum(p * (rewards - rho * np.log(p))))

    def gradient(p):
        return -(rewards - rho * (np.log(p) + 1.0))

    best = minimize(
        negative,
        np.full(m, 1.0 / m),
        jac=gradient,
        method="SLSQP",
        bounds=[(1e-12, 1.0)] * m,
        constraints=[{"type": "eq", "fun": lambda p: p.sum() - 1.0, "jac": lambda p: np.ones(m)}],
        options={"ftol": 1e-16, "maxiter": 500},
    )
    assert best.success
    return best.x


def test_entropy_regularized_optimum_matches_numerical_simplex_maximizer():
    rng = np.random.default_rng(123)
    for trial in range(20):
        m = int(rng.integers(2, 6))
        rewards = rng.uniform(-2, 2, size=m)
        rho = float(rng.uniform(0.3, 3.0))
        closed = entropy_regularized_optimum(rewards, rho)
        numerical = simplex_maximizer(rewards, rho)
        assert np.max(np.abs(closed - numerical)) < 1e-6
        # and the closed form scores at least as high as the numeric optimum
        assert entropy_regularized_value(closed, rewards, rho) >= entropy_regularized_value(numerical, rewards, rho) - 1e-10


def test_entropy_regularized_optimum_validates_rho():
    with pytest.raises(ValidationError):
        entropy_regularized_optimum(np.array([1.0, 2.0]), 0.0)


def test_jensen_direction_outside_expectation_dominates():
    rng = np.random.default_rng(31)
    grid = [rng.standard_normal((2, 2)) for _ in range(3)]
    for trial in range(5):
        model = make_model(seed=trial, T=4)
        winner = Segment(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
        loser = Segment(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)))
        inside, outside = exhaustive_preference_bounds(model, winner, loser, rho=3.0, noise_grid=grid)
        assert outside >= inside - 1e-12
