"""Gaussian policy, advantage estimators, and the four policy losses.

The gradient oracle is explicit per-timestep accumulation: one
logprob-gradient call per (episode, step) scaled by w_i gamma^t A_t,
summed by hand, compared against the batched loss gradients.
"""
import numpy as np
import pytest

from helpers import check_grads_fd, rel_close

from pgkq.episodes import (Episode, RewardMeter, attach_returns,
                           evaluate_rewards, make_env, rollout_batch)
from pgkq.errors import ConfigError, ContractError
from pgkq.gp import GPModel, fake_returns, init_deep_kernel, init_gp
from pgkq.losses import (centered_quadrature_loss, noncentered_quadrature_loss,
                         ppo_loss, vpg_loss)
from pgkq.nets import MlpParams
from pgkq.policy import (GaussianPolicy, LOG_2PI, Baseline, advantages,
                         baseline_values, fake_advantages, init_baseline,
                         init_policy, logprob, logprob_batch, logprob_grads)
from pgkq.quadrature import QuadratureRule

GAMMA = 0.95


def evaluated_batch(rng, n=4, env_id="lqr1d", gamma=GAMMA):
    env = make_env(env_id)
    policy = init_policy(env.state_dim, env.action_dim, rng)
    eps = rollout_batch(env, policy, n, rng)
    meter = RewardMeter()
    for ep in eps:
        evaluate_rewards(env, ep, meter)
        attach_returns(ep, gamma)
    return policy, eps


def zero_value_baseline(state_dim):
    return Baseline(MlpParams([np.zeros((state_dim, 2)), np.zeros((2, 1))],
                              [np.zeros(2), np.zeros(1)]))


def constant_mean_gp(point_dim, c, rng, gamma=GAMMA):
    mean = MlpParams([np.zeros((point_dim, 2)), np.zeros((2, 1))],
                     [np.zeros(2), np.array([float(c)])])
    return GPModel("rewards", init_deep_kernel(point_dim, rng), gamma, mean)


# logprob and sampling


def test_logprob_at_mean_unit_sigma():
    pol = GaussianPolicy(MlpParams([np.zeros((2, 3))], [np.zeros(3)]),
                         np.zeros(3))
    lp = logprob(pol, np.ones(2), np.zeros(3))
    assert abs(lp - (-1.5 * LOG_2PI)) <= 1e-12


def test_logprob_one_sigma_shift():
    pol = GaussianPolicy(MlpParams([np.zeros((2, 1))], [np.zeros(1)]),
                         np.array([0.3]))
    at_mean = logprob(pol, np.ones(2), np.zeros(1))
    shifted = logprob(pol, np.ones(2), np.array([np.exp(0.3)]))
    assert abs((at_mean - shifted) - 0.5) <= 1e-12


def test_logprob_batch_matches_single():
    rng = np.random.default_rng(0)
    pol = init_policy(3, 2, rng)
    S = rng.standard_normal((6, 3))
    A = rng.standard_normal((6, 2))
    batch = logprob_batch(pol, S, A)
    for i in range(6):
        assert rel_close(batch[i], logprob(pol, S[i], A[i]), 1e-13)


def test_sample_matches_its_own_logprob():
    rng = np.random.default_rng(1)
    pol = init_policy(2, 2, rng)
    s = rng.standard_normal(2)
    a, lp = pol.sample(s, rng)
    assert rel_close(lp, logprob(pol, s, a), 1e-12)


def test_sample_batch_reproducible():
    rng = np.random.default_rng(2)
    pol = init_policy(2, 1, rng)
    S = rng.standard_normal((5, 2))
    a1, l1 = pol.sample_batch(S, np.random.default_rng(7))
    a2, l2 = pol.sample_batch(S, np.random.default_rng(7))
    assert np.array_equal(a1, a2) and np.array_equal(l1, l2)


def test_logprob_grads_finite_difference():
    rng = np.random.default_rng(3)
    pol = init_policy(3, 2, rng)
    S = rng.standard_normal((5, 3))
    A = rng.standard_normal((5, 2))
    c = rng.standard_normal(5)
    grads = logprob_grads(pol, S, A, c)
    arrays = pol.arrays()

    def f():
        return float(c @ logprob_batch(pol, S, A))

    check_grads_fd(f, arrays, grads.arrays(), rng, count=100)


# advantages


def test_default_advantage_is_centered_return():
    rng = np.random.default_rng(4)
    _, eps = evaluated_batch(rng, 1)
    ep = eps[0]
    baseline = zero_value_baseline(1)
    assert np.array_equal(advantages("default", ep, baseline, GAMMA),
                          ep.returns)


def test_final_time_advantage_vanishes_at_last_step():
    rng = np.random.default_rng(5)
    _, eps = evaluated_batch(rng, 2)
    baseline = init_baseline(1, rng)
    for ep in eps:
        adv = advantages("final_time", ep, baseline, GAMMA)
        assert adv[-1] == 0.0


def test_final_time_matches_pointwise_identity():
    rng = np.random.default_rng(6)
    _, eps = evaluated_batch(rng, 1)
    ep = eps[0]
    baseline = init_baseline(1, rng)
    base = advantages("default", ep, baseline, GAMMA)
    ft = advantages("final_time", ep, baseline, GAMMA)
    T = ep.horizon
    t0 = T - 1
    want = base - GAMMA ** (t0 - np.arange(T)) * base[t0]
    want[t0] = 0.0
    assert np.allclose(ft, want, atol=1e-12)


def test_advantages_require_returns():
    rng = np.random.default_rng(7)
    ep = Episode(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2))
    with pytest.raises(ContractError):
        advantages("default", ep, init_baseline(1, rng), GAMMA)


def test_unknown_advantage_kind():
    rng = np.random.default_rng(8)
    _, eps = evaluated_batch(rng, 1)
    with pytest.raises(ConfigError):
        advantages("gae", eps[0], init_baseline(1, rng), GAMMA)


# vpg


def test_vpg_zero_advantages():
    rng = np.random.default_rng(9)
    policy, eps = evaluated_batch(rng, 3)
    adv = [np.zeros(ep.horizon) for ep in eps]
    loss, grads = vpg_loss(policy, eps, adv, np.full(3, 1 / 3), GAMMA)
    assert loss == 0.0
    assert all(np.all(g == 0.0) for g in grads.arrays())


def test_vpg_single_step_hand_value():
    rng = np.random.default_rng(10)
    pol = init_policy(1, 1, rng)
    ep = Episode(np.array([[0.4]]), np.array([[0.2]]), np.zeros(1))
    loss, _ = vpg_loss(pol, [ep], [np.array([2.0])], [1.0], GAMMA)
    assert rel_close(loss, 2.0 * logprob(pol, ep.states[0], ep.actions[0]),
                     1e-12)


def test_vpg_grads_match_explicit_accumulation():
    rng = np.random.default_rng(11)
    policy, eps = evaluated_batch(rng, 3)
    baseline = init_baseline(1, rng)
    adv = [advantages("default", ep, baseline, GAMMA) for ep in eps]
    w = np.array([0.5, 0.3, 0.2])
    _, grads = vpg_loss(policy, eps, adv, w, GAMMA)
    # oracle: one gradient call per timestep
    acc = [np.zeros_like(a) for a in policy.arrays()]
    for ep, a_i, w_i in zip(eps, adv, w):
        for t in range(ep.horizon):
            g = logprob_grads(policy, ep.states[t][None], ep.actions[t][None],
                              [w_i * GAMMA ** t * a_i[t]])
            for dst, src in zip(acc, g.arrays()):
                dst += src
    for got, want in zip(grads.arrays(), acc):
        denom = max(1e-8, float(np.abs(want).max()))
        assert np.max(np.abs(got - want)) <= 1e-6 * denom


def test_vpg_grads_finite_difference():
    rng = np.random.default_rng(12)
    policy, eps = evaluated_batch(rng, 3)
    baseline = init_baseline(1, rng)
    adv = [advantages("default", ep, baseline, GAMMA) for ep in eps]
    w = np.full(3, 1 / 3)
    _, grads = vpg_loss(policy, eps, adv, w, GAMMA)

    def f():
        return vpg_loss(policy, eps, adv, w, GAMMA)[0]

    check_grads_fd(f, policy.arrays(), grads.arrays(), rng, count=100)


# ppo


def stacked_old_logprobs(policy, eps):
    """Fill episode logprobs with the same stacked computation the loss
    uses, so ratios at the behavior policy are exactly one."""
    S = np.concatenate([ep.states for ep in eps])
    A = np.concatenate([ep.actions for ep in eps])
    lp = logprob_batch(policy, S, A)
    pos = 0
    for ep in eps:
        ep.logprobs[:] = lp[pos:pos + ep.horizon]
        pos += ep.horizon


def test_ppo_at_behavior_policy_reduces_to_weighted_advantages():
    rng = np.random.default_rng(13)
    policy, eps = evaluated_batch(rng, 3)
    stacked_old_logprobs(policy, eps)
    baseline = init_baseline(1, rng)
    adv = [advantages("default", ep, baseline, GAMMA) for ep in eps]
    w = np.array([0.6, 0.1, 0.3])
    loss, _ = ppo_loss(policy, eps, adv, w, GAMMA, clip_eps=0.2)
    want = sum(w_i * float((GAMMA ** np.arange(ep.horizon) * a).sum())
               for ep, a, w_i in zip(eps, adv, w))
    assert rel_close(loss, want, 1e-12)


def test_ppo_gradient_at_behavior_policy_equals_vpg():
    rng = np.random.default_rng(14)
    policy, eps = evaluated_batch(rng, 4)
    stacked_old_logprobs(policy, eps)
    baseline = init_baseline(1, rng)
    adv = [advantages("default", ep, baseline, GAMMA) for ep in eps]
    w = np.full(4, 0.25)
    _, g_vpg = vpg_loss(policy, eps, adv, w, GAMMA)
    _, g_ppo = ppo_loss(policy, eps, adv, w, GAMMA, clip_eps=0.2)
    for a, b in zip(g_vpg.arrays(), g_ppo.arrays()):
        denom = max(1e-10, float(np.abs(a).max()))
        assert np.max(np.abs(a - b)) <= 1e-8 * denom


def one_step_episode(pol, s, a):
    ep = Episode(np.array([s]), np.array([a]), np.zeros(1))
    ep.logprobs[0] = logprob(pol, np.asarray(s), np.asarray(a))
    return ep


def test_ppo_clip_upper_branch():
    # ratio 2 with positive advantage clips to 1 + eps
    rng = np.random.default_rng(15)
    pol = init_policy(1, 1, rng)
    ep = one_step_episode(pol, [0.3], [0.1])
    ep.logprobs[0] -= np.log(2.0)  # now exp(lp - old) = 2
    loss, grads = ppo_loss(pol, [ep], [np.array([1.0])], [1.0], GAMMA, 0.2)
    assert rel_close(loss, 1.2, 1e-12)
    assert all(np.all(g == 0.0) for g in grads.arrays())  # flat branch


def test_ppo_clip_lower_branch():
    # ratio 1/2 with negative advantage clips to 1 - eps
    rng = np.random.default_rng(16)
    pol = init_policy(1, 1, rng)
    ep = one_step_episode(pol, [0.3], [0.1])
    ep.logprobs[0] += np.log(2.0)
    loss, grads = ppo_loss(pol, [ep], [np.array([-1.0])], [1.0], GAMMA, 0.2)
    assert rel_close(loss, -0.8, 1e-12)
    assert all(np.all(g == 0.0) for g in grads.arrays())


def test_ppo_unclipped_matches_ratio_weighted_value():
    rng = np.random.default_rng(17)
    pol = init_policy(1, 1, rng)
    ep = one_step_episode(pol, [0.3], [0.1])
    ep.logprobs[0] += 0.05  # ratio just below 1, inside the band
    loss, _ = ppo_loss(pol, [ep], [np.array([2.0])], [1.0], GAMMA, 0.2)
    q = np.exp(-0.05)
    assert rel_close(loss, 2.0 * q, 1e-12)


def test_ppo_grads_finite_difference_off_policy():
    rng = np.random.default_rng(18)
    policy, eps = evaluated_batch(rng, 3)
    # perturb the recorded logprobs so ratios leave 1 but stay unclipped
    for ep in eps:
        ep.logprobs += rng.uniform(-0.05, 0.05, ep.horizon)
    baseline = init_baseline(1, rng)
    adv = [advantages("default", ep, baseline, GAMMA) for ep in eps]
    w = np.full(3, 1 / 3)
    _, grads = ppo_loss(policy, eps, adv, w, GAMMA, 0.2)

    def f():
        return ppo_loss(policy, eps, adv, w, GAMMA, 0.2)[0]

    check_grads_fd(f, policy.arrays(), grads.arrays(), rng, count=100)


# centered quadrature loss


def test_centered_single_episode_equals_plain():
    rng = np.random.default_rng(19)
    policy, eps = evaluated_batch(rng, 1)
    baseline = init_baseline(1, rng)
    adv = [advantages("default", eps[0], baseline, GAMMA)]
    rule = QuadratureRule(np.array([0]), np.array([1.0]), 8)
    got, _ = centered_quadrature_loss("vpg", policy, rule, eps, adv, GAMMA)
    want, _ = vpg_loss(policy, eps, adv, [1.0], GAMMA)
    assert got == want


def test_centered_hand_expanded_weighted_sum():
    rng = np.random.default_rng(20)
    policy, eps = evaluated_batch(rng, 3)
    baseline = init_baseline(1, rng)
    adv = [advantages("default", ep, baseline, GAMMA) for ep in eps]
    w = np.array([0.2, 0.5, 0.3])
    rule = QuadratureRule(np.array([1, 4, 6]), w, 8)
    got, _ = centered_quadrature_loss("vpg", policy, rule, eps, adv, GAMMA)
    want = sum(w_i * vpg_loss(policy, [ep], [a], [1.0], GAMMA)[0]
               for w_i, ep, a in zip(w, eps, adv))
    assert rel_close(got, want, 1e-12)


def test_centered_requires_evaluated_support():
    rng = np.random.default_rng(21)
    policy, _ = evaluated_batch(rng, 1)
    bare = Episode(np.zeros((2, 1)), np.zeros((2, 1)), np.zeros(2))
    rule = QuadratureRule(np.array([0]), np.array([1.0]), 4)
    with pytest.raises(ContractError):
        centered_quadrature_loss("vpg", policy, rule, [bare],
                                 [np.zeros(2)], GAMMA)


@pytest.mark.parametrize("base", ["vpg", "ppo"])
def test_centered_grads_finite_difference(base):
    rng = np.random.default_rng(22)
    policy, eps = evaluated_batch(rng, 3)
    stacked_old_logprobs(policy, eps)
    baseline = init_baseline(1, rng)
    adv = [advantages("default", ep, baseline, GAMMA) for ep in eps]
    rule = QuadratureRule(np.array([0, 2, 5]), np.array([0.5, 0.2, 0.3]), 8)
    _, grads = centered_quadrature_loss(base, policy, rule, eps, adv, GAMMA)

    def f():
        return centered_quadrature_loss(base, policy, rule, eps, adv,
                                        GAMMA)[0]

    check_grads_fd(f, policy.arrays(), grads.arrays(), rng, count=100)


# non-centered quadrature loss


def make_noncentered_instance(rng, n_support=2, N=4):
    env = make_env("lqr1d")
    policy = init_policy(1, 1, rng)
    eps = rollout_batch(env, policy, N, rng)
    meter = RewardMeter()
    gp = init_gp("rewards", 2, GAMMA, rng)
    baseline = init_baseline(1, rng)
    idx = np.sort(rng.choice(N, size=n_support, replace=False))
    w = rng.uniform(0.2, 1.0, n_support)
    w /= w.sum()
    rule = QuadratureRule(idx, w, N)
    for i in idx:
        evaluate_rewards(env, eps[i], meter)
        attach_returns(eps[i], GAMMA)
    return policy, eps, gp, baseline, rule


def test_noncentered_zero_mean_zero_baseline_reduces_to_centered():
    rng = np.random.default_rng(23)
    policy, eps, gp, _, rule = make_noncentered_instance(rng)
    gp = constant_mean_gp(2, 0.0, rng)
    baseline = zero_value_baseline(1)
    got, _ = noncentered_quadrature_loss("vpg", policy, rule, eps, gp,
                                         baseline)
    support = [eps[i] for i in rule.indices]
    adv = [ep.returns for ep in support]
    want, _ = centered_quadrature_loss("vpg", policy, rule, support, adv,
                                       GAMMA)
    assert rel_close(got, want, 1e-12)


def test_noncentered_exact_mean_leaves_only_bias_term():
    # environment with constant reward c, mean net outputting exactly c:
    # true and fake returns coincide, so the support term vanishes
    rng = np.random.default_rng(24)
    c = 0.7
    from pgkq.episodes import Environment
    env = Environment(name="const", state_dim=1, action_dim=1, max_horizon=4,
                      dynamics=lambda s, a, r: s,
                      initial_sampler=lambda r: np.zeros(1),
                      reward_fn=lambda s, a: c,
                      termination_fn=lambda s: False)
    policy = init_policy(1, 1, rng)
    eps = rollout_batch(env, policy, 3, rng)
    meter = RewardMeter()
    gp = constant_mean_gp(2, c, rng)
    baseline = init_baseline(1, rng)
    rule = QuadratureRule(np.array([1]), np.array([1.0]), 3)
    evaluate_rewards(env, eps[1], meter)
    attach_returns(eps[1], GAMMA)
    loss, _ = noncentered_quadrature_loss("vpg", policy, rule, eps, gp,
                                          baseline)
    # bias term alone
    fake = [fake_returns(gp.mean_net, ep, GAMMA) for ep in eps]
    adv2 = [fake_advantages("default", f, baseline_values(baseline, ep.states),
                            GAMMA) for f, ep in zip(fake, eps)]
    want, _ = vpg_loss(policy, eps, adv2, np.full(3, 1 / 3), GAMMA)
    assert rel_close(loss, want, 1e-12)


def test_noncentered_full_uniform_rule_matches_plain():
    # every episode evaluated with uniform weights: the fake returns cancel
    # and the loss equals the ordinary vpg loss with true advantages
    rng = np.random.default_rng(25)
    env = make_env("lqr1d")
    policy = init_policy(1, 1, rng)
    N = 5
    eps = rollout_batch(env, policy, N, rng)
    meter = RewardMeter()
    for ep in eps:
        evaluate_rewards(env, ep, meter)
        attach_returns(ep, GAMMA)
    gp = init_gp("rewards", 2, GAMMA, rng)
    baseline = init_baseline(1, rng)
    rule = QuadratureRule.uniform(N)
    got, g1 = noncentered_quadrature_loss("vpg", policy, rule, eps, gp,
                                          baseline)
    adv = [ep.returns - baseline_values(baseline, ep.states) for ep in eps]
    want, g2 = vpg_loss(policy, eps, adv, np.full(N, 1.0 / N), GAMMA)
    assert rel_close(got, want, 1e-10)
    for a, b in zip(g1.arrays(), g2.arrays()):
        denom = max(1.0, float(np.abs(b).max()))
        assert np.max(np.abs(a - b)) <= 1e-10 * denom


def test_noncentered_untouched_nonsupport_episodes():
    # non-support episodes keep rewards None; the loss must not demand them
    rng = np.random.default_rng(26)
    policy, eps, gp, baseline, rule = make_noncentered_instance(rng)
    outside = [i for i in range(len(eps)) if i not in rule.indices]
    assert all(eps[i].rewards is None for i in outside)
    loss, _ = noncentered_quadrature_loss("vpg", policy, rule, eps, gp,
                                          baseline)
    assert np.isfinite(loss)
    assert all(eps[i].rewards is None for i in outside)


def test_noncentered_missing_support_returns_raises():
    rng = np.random.default_rng(27)
    policy, eps, gp, baseline, rule = make_noncentered_instance(rng)
    eps[rule.indices[0]].returns = None
    with pytest.raises(ContractError):
        noncentered_quadrature_loss("vpg", policy, rule, eps, gp, baseline)


def test_noncentered_requires_rewards_kind():
    rng = np.random.default_rng(28)
    policy, eps, _, baseline, rule = make_noncentered_instance(rng)
    wrong = init_gp("returns", 2, GAMMA, rng)
    with pytest.raises(ConfigError):
        noncentered_quadrature_loss("vpg", policy, rule, eps, wrong, baseline)


@pytest.mark.parametrize("base", ["vpg", "ppo"])
@pytest.mark.parametrize("kind", ["default", "final_time"])
def test_noncentered_grads_finite_difference(base, kind):
    rng = np.random.default_rng(29)
    policy, eps, gp, baseline, rule = make_noncentered_instance(rng, 2, 4)
    stacked_old_logprobs(policy, eps)
    _, grads = noncentered_quadrature_loss(base, policy, rule, eps, gp,
                                           baseline, advantage_kind=kind)

    def f():
        return noncentered_quadrature_loss(base, policy, rule, eps, gp,
                                           baseline, advantage_kind=kind)[0]

    check_grads_fd(f, policy.arrays(), grads.arrays(), rng, count=100)


def test_fake_advantage_final_time_vanishes():
    rng = np.random.default_rng(30)
    fake = rng.standard_normal(6)
    vals = rng.standard_normal(6)
    adv = fake_advantages("final_time", fake, vals, GAMMA)
    assert adv[-1] == 0.0
