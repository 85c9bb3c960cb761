import numpy as np
import pytest

from phasicpg.envs import make_env
from phasicpg.nn import ConfigurationError, log_prob
from phasicpg.phasic import (
    VARIANTS,
    Hyperparameters,
    MetricsRow,
    PhasicTrainer,
    TrainingAborted,
    final_return,
    format_metrics_header,
    format_metrics_row,
    read_metrics,
)


def small_hp(**kw) -> Hyperparameters:
    base = dict(num_envs=4, n_steps=16, minibatches=4, aux_minibatches_per_n_pi=4, n_pi=2, hidden=(16, 16))
    base.update(kw)
    return Hyperparameters(**base)


def trainer(env="chain", seed=0, **kw) -> PhasicTrainer:
    hp = small_hp(**kw)
    return PhasicTrainer(hp, make_env(env, hp.num_envs, seed), seed=seed)


def params_equal(a: dict, b) -> bool:
    return all(np.array_equal(a[k], b[k]) for k in a)


def test_validation_errors():
    with pytest.raises(ConfigurationError, match="does not divide"):
        small_hp(minibatches=5).validate()
    with pytest.raises(ConfigurationError, match="variant"):
        small_hp(variant="ppg-triple").validate()
    with pytest.raises(ConfigurationError, match="num_envs"):
        PhasicTrainer(small_hp(), make_env("chain", 3, 0))


def test_no_epochs_leave_parameters_unchanged_but_fill_buffer():
    t = trainer(e_pi=0, e_v=0)
    pol, val = t.policy.params.copy_params(), t.value.params.copy_params()
    t.policy_phase()
    assert params_equal(pol, t.policy.params) and params_equal(val, t.value.params)
    assert t.buffer.n_rollouts == 2 and len(t.buffer) == 2 * 64


def test_positive_advantage_raises_that_actions_logit():
    t = PhasicTrainer(small_hp(num_envs=8, n_steps=1, minibatches=1, aux_minibatches_per_n_pi=1), make_env("bandit", 8, 0))
    obs = np.ones((8, 1))
    before = t.policy_logits(obs[:1])[0]
    logits_old = t.policy_logits(obs)
    actions = np.array([1] * 4 + [0] * 4)
    adv = np.where(actions == 1, 1.0, 0.0)
    mb = {"obs": obs, "actions": actions, "logp_old": log_prob(logits_old, actions), "adv": adv, "logits_old": logits_old}
    t._policy_update(mb)
    after = t.policy_logits(obs[:1])[0]
    assert after[1] > before[1]
    assert after[1] - after[0] > before[1] - before[0]


def test_aux_phase_with_no_epochs_is_identity():
    t = trainer(e_aux=0)
    t.policy_phase()
    pol, val = t.policy.params.copy_params(), t.value.params.copy_params()
    stats = t.auxiliary_phase()
    assert stats.updates == 0
    assert params_equal(pol, t.policy.params) and params_equal(val, t.value.params)


def test_aux_phase_counts_and_clone_identity():
    t = trainer(env="keydoor", e_aux=3)
    t.policy_phase()
    stats = t.auxiliary_phase()
    assert stats.updates == 3 * 4 * 2
    assert len(stats.value) == stats.updates
    assert stats.first_clone_kl == 0.0
    assert stats.targets_checksum_before == stats.targets_checksum_after
    assert len(t.buffer) == 0


def test_no_aux_value_variant_skips_value_training_in_aux_phase():
    t = trainer(variant="ppg-no-aux-value")
    t.policy_phase()
    val = t.value.params.copy_params()
    stats = t.auxiliary_phase()
    assert params_equal(val, t.value.params) and stats.value == []


def test_value_epochs_per_variant():
    tags = []
    t = trainer(variant="ppg-no-aux-value")
    t.grad_probe = lambda tag, net: tags.append(tag)
    t.policy_iteration()
    assert tags.count("value") == 2 * 4 and tags.count("policy") == 4
    tags.clear()
    t = trainer(variant="ppo-shared")
    t.grad_probe = lambda tag, net: tags.append(tag)
    t.policy_iteration()
    assert tags == ["ppo"] * 3 * 4


def test_single_net_value_gradient_stops_at_torso_in_policy_phase():
    t = trainer(variant="ppg-single-net")
    seen = []

    def probe(tag, net):
        if tag == "value":
            seen.append(all(not net.params.grads[n].any() for n in net.torso_names()))
            assert net.params.grads["value.w"].any()

    t.grad_probe = probe
    t.policy_phase()
    assert seen and all(seen)


def test_one_phase_pair_when_budget_is_one_phase():
    t = trainer()
    calls = []
    original = t.auxiliary_phase
    t.auxiliary_phase = lambda: calls.append(1) or original()
    rows = t.train(total_timesteps=2 * 4 * 16)
    assert len(rows) == 2 and len(calls) == 1 and t.phase == 1
    assert rows[-1].aux_loss is not None and rows[0].aux_loss is None


def test_equal_env_step_budgets_across_variants():
    steps = {}
    for variant in VARIANTS:
        t = trainer(variant=variant)
        t.train(total_timesteps=300)
        steps[variant] = t.env_steps
    assert set(steps.values()) == {320}


def test_clone_weight_anchors_policy():
    def last_kl(beta):
        t = trainer(env="keydoor", beta_clone=beta, e_aux=4, lr=3e-3)
        t.policy_phase()
        return np.mean(t.auxiliary_phase().clone_kl[-4:])

    assert last_kl(1e3) < last_kl(1.0)


def test_nan_gradient_aborts_with_checkpoint(tmp_path):
    hp = small_hp()
    t = PhasicTrainer(hp, make_env("chain", 4, 0), checkpoint_dir=tmp_path)

    def poison(tag, net):
        if t.iteration == 1:
            net.params.grads["torso.0.w"][0, 0] = np.nan

    t.grad_probe = poison
    with pytest.raises(TrainingAborted, match="iteration 2.*torso.0.w"):
        t.train(total_timesteps=4 * 64)
    assert (tmp_path / "abort.npz").exists()


def test_checkpoint_roundtrip(tmp_path):
    t = trainer()
    t.train(total_timesteps=128)
    t.save(tmp_path / "c.npz")
    u = trainer(seed=9)
    header = u.load(tmp_path / "c.npz")
    assert header["step"] == t.env_steps
    assert params_equal(t.policy.params.copy_params(), u.policy.params)
    assert params_equal(t.value.params.copy_params(), u.value.params)
    assert u.normalizer.std == t.normalizer.std


def test_metrics_roundtrip(tmp_path):
    row = MetricsRow(
        iteration=1, phase=0, env_steps=64, episodes=0, episode_return_mean=None, policy_loss=-0.1,
        value_loss=0.25, entropy=1.3, approx_kl=1e-3, clip_frac=0.0, explained_variance=0.1,
    )
    path = tmp_path / "m.csv"
    path.write_text(format_metrics_header() + format_metrics_row(row))
    (back,) = read_metrics(path)
    assert back == row


def test_final_return_is_episode_weighted():
    rows = [
        MetricsRow(iteration=i, phase=0, env_steps=i, episodes=n, episode_return_mean=m, policy_loss=0.0,
                   value_loss=None, entropy=0.0, approx_kl=0.0, clip_frac=0.0, explained_variance=0.0)
        for i, (n, m) in enumerate([(5, 100.0), (1, 1.0), (3, 2.0), (0, None)])
    ]
    assert final_return(rows, window=3) == pytest.approx((1.0 + 6.0) / 4)
    assert np.isnan(final_return(rows[-1:]))


@pytest.mark.parametrize("variant", VARIANTS)
def test_every_variant_trains_and_logs_finite_metrics(variant):
    t = trainer(env="keydoor", variant=variant)
    rows = t.train(total_timesteps=4 * 64)
    assert len(rows) == 4
    for row in rows:
        assert np.isfinite(row.policy_loss) and np.isfinite(row.entropy) and row.approx_kl >= 0
