import dataclasses
import json

import numpy as np
import pytest

import sigent.trainer as trainer_mod
from sigent.actor import GbcConfig
from sigent.critic import CriticConfig
from sigent.envs import PointPush, PointReach
from sigent.errors import ConfigError, ValidationError
from sigent.policy import Policy
from sigent.replay import save_demo
from sigent.trainer import (
    Agent,
    DivergenceError,
    NetConfig,
    TrainConfig,
    evaluate,
    normalize_config,
    record_expert_episode,
    run_arm,
    train,
)

SMALL = NetConfig(hidden=(16, 16))


def small(**kw):
    base = dict(total_steps=300, batch_size=16, warmup_steps=50, eval_every=100, eval_episodes=2, net=SMALL, gbc=GbcConfig(lambda_bc=0.0))
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def reach_demo(tmp_path_factory):
    path = tmp_path_factory.mktemp("demo") / "reach.demo"
    save_demo(record_expert_episode(PointReach(), np.random.default_rng(0)), path)
    return path


@pytest.fixture(scope="module")
def push_demo(tmp_path_factory):
    path = tmp_path_factory.mktemp("demo") / "push.demo"
    save_demo(record_expert_episode(PointPush(), np.random.default_rng(0)), path)
    return path


# --- configuration ---


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(total_steps=100, eval_every=200)
    with pytest.raises(ConfigError):
        TrainConfig(entropy_mode="renyi")
    with pytest.raises(ConfigError):
        TrainConfig(arm="td3")
    TrainConfig(total_steps=0, eval_every=5000)


def test_sac_with_prior_normalization_records_overrides():
    cfg, notes = normalize_config(TrainConfig(arm="sac-with-prior", gbc=GbcConfig(lambda_bc=2.0)))
    assert cfg.entropy_mode == "negative"
    assert cfg.gbc.lambda_bc == 0.0 and cfg.critic.lambda_ood == 0.0 and cfg.expert_to_buffer
    assert any("lambda_bc: 2.0 -> 0.0" in n for n in notes)
    same, none = normalize_config(TrainConfig(entropy_mode="negative"))
    assert same.entropy_mode == "negative" and none == []


# --- evaluate ---


def test_expert_as_policy_always_succeeds():
    env = PointPush(seed=3)
    rep = evaluate(env.expert_action, env, 20, np.random.default_rng(0))
    assert rep.success_rate == 1.0 and rep.successes == 20 and rep.episodes == 20


def test_untrained_policy_rarely_succeeds():
    env = PointPush(seed=4)
    pol = Policy.build(6, 2, (16, 16), rng=np.random.default_rng(0))
    rep = evaluate(pol, env, 20, np.random.default_rng(1))
    assert rep.success_rate <= 0.1


def test_single_episode_success_rate_is_exact():
    env = PointReach()
    rep = evaluate(env.expert_action, env, 1, np.random.default_rng(0))
    assert rep.success_rate == 1.0
    assert rep.success_rate == rep.successes / rep.episodes
    with pytest.raises(ValidationError):
        evaluate(env.expert_action, env, 0, np.random.default_rng(0))


# --- training loop ---


def test_zero_steps_writes_only_the_header(tmp_path):
    res = train(small(total_steps=0), run_dir=tmp_path)
    assert res.updates == 0 and res.reports == []
    assert (tmp_path / "metrics.csv").read_text().count("\n") == 1


def test_batch_larger_than_data_means_no_updates():
    res = train(small(total_steps=200, warmup_steps=0, batch_size=10_000))
    assert res.updates == 0 and res.steps == 200


def test_one_update_per_step_after_the_guard(monkeypatch):
    env = PointReach(seed=0)
    clock = {"step": 0}
    real_step = env.step

    def counted(action):
        clock["step"] += 1
        return real_step(action)

    env.step = counted
    seen = []
    real_update = Agent.update

    def spy(self, batch, expert_batch, rng):
        seen.append(clock["step"])
        return real_update(self, batch, expert_batch, rng)

    monkeypatch.setattr(Agent, "update", spy)
    res = train(small(total_steps=500, warmup_steps=50, batch_size=16), env=env)
    # the buffer only fills at the first episode end (step 200 for a capped episode)
    assert seen[0] > 50
    assert seen == list(range(seen[0], 501))
    assert res.updates == len(seen)


def test_identical_seeds_give_identical_metrics(tmp_path, reach_demo):
    cfg = small(total_steps=250, warmup_steps=20, gbc=GbcConfig(lambda_bc=1.0))
    train(cfg, demo_path=reach_demo, run_dir=tmp_path / "a")
    train(cfg, demo_path=reach_demo, run_dir=tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert a == b and a.count(b"\n") == 3
    other = train(dataclasses.replace(cfg, seed=1), demo_path=reach_demo, run_dir=tmp_path / "c")
    assert (tmp_path / "c" / "metrics.csv").read_bytes() != a
    assert other.status == "completed"


def test_run_directory_contents(tmp_path, reach_demo):
    train(small(), demo_path=reach_demo, run_dir=tmp_path)
    names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
    assert names == ["step_00000100", "step_00000200", "step_00000300"]
    assert sorted(p.name for p in (tmp_path / "final").iterdir()) == ["policy.sgnt", "q1.sgnt", "q2.sgnt"]


def test_evaluation_never_touches_the_buffer(monkeypatch):
    pushes = []
    original = trainer_mod.finalize_episode

    def spy(buf, episode, gamma):
        pushes.append(len(episode))
        original(buf, episode, gamma)

    monkeypatch.setattr(trainer_mod, "finalize_episode", spy)
    res = train(small(total_steps=400, eval_episodes=3))
    # only training episodes reach the buffer: PointReach caps them at 200 steps
    assert sum(pushes) <= 400 and len(pushes) == res.episodes


def test_demo_is_required_for_cloning():
    with pytest.raises(ConfigError):
        train(small(gbc=GbcConfig(lambda_bc=1.0)))


def test_demo_dimension_mismatch(push_demo):
    with pytest.raises(ValidationError):
        train(small(env="point-reach", gbc=GbcConfig(lambda_bc=1.0)), demo_path=push_demo)


def test_eval_reports_probe_the_expert_states(reach_demo):
    res = train(small(gbc=GbcConfig(lambda_bc=1.0)), demo_path=reach_demo)
    assert len(res.reports) == 3
    for r in res.reports:
        assert np.isfinite(r.mean_q) and 0.0 <= r.ood_ratio <= 1.0 and r.q_std_window >= 0
    assert res.reports[0].q_std_window == 0.0


def test_sac_with_prior_mirrors_the_demo(push_demo):
    res = run_arm(small(env="point-push", total_steps=100), "sac-with-prior", demo_path=push_demo)
    cfg = res.config
    assert cfg.entropy_mode == "negative" and cfg.gbc.lambda_bc == 0 and cfg.critic.lambda_ood == 0
    assert res.status == "completed"


def test_both_arms_five_seeds_give_ten_metric_files(tmp_path, reach_demo):
    for arm in ("sigent-sac", "sac-with-prior"):
        for seed in range(5):
            cfg = small(total_steps=100, warmup_steps=100, seed=seed, gbc=GbcConfig(lambda_bc=1.0))
            run_arm(cfg, arm, demo_path=reach_demo, run_dir=tmp_path / f"{arm}-{seed}")
    assert len(list(tmp_path.glob("*/metrics.csv"))) == 10


def test_divergence_aborts_with_snapshot(tmp_path, monkeypatch):
    real = trainer_mod.critic_loss

    def poisoned(*args, **kwargs):
        out = real(*args, **kwargs)
        out.loss_1 = out.loss_1 * np.nan
        return out

    monkeypatch.setattr(trainer_mod, "critic_loss", poisoned)
    with pytest.raises(DivergenceError) as info:
        train(small(warmup_steps=0, batch_size=1), run_dir=tmp_path)
    snap = json.loads((tmp_path / "divergence.json").read_text())
    assert snap["step"] == info.value.snapshot["step"]
    assert set(snap["parameter_norms"]) == {"policy", "q1", "q2", "q1_target", "q2_target"}
    assert not (tmp_path / "final").exists()


# --- agent ---


def test_auto_alpha_moves_toward_the_target():
    rng = np.random.default_rng(0)
    cfg = small(alpha_mode="auto", target_entropy=1.9, critic=CriticConfig(alpha=0.1), net=dataclasses.replace(SMALL, alpha_lr=1e-2))
    agent = Agent(4, 2, cfg, rng)
    from sigent.replay import Batch

    b = Batch(rng.normal(size=(8, 4)), np.tanh(rng.normal(size=(8, 2))), np.zeros(8), rng.normal(size=(8, 4)), np.zeros(8), np.zeros(8))
    alphas = [agent.alpha]
    for _ in range(20):
        stats = agent.update(b, None, rng)
        alphas.append(agent.alpha)
    # entropy sits below a near-cap target, so alpha grows, and it stays positive
    assert stats["mean_entropy"] < 1.9
    assert alphas[-1] > alphas[0] and min(alphas) > 0


def test_auto_alpha_needs_positive_start():
    with pytest.raises(ConfigError):
        Agent(4, 2, small(alpha_mode="auto", critic=CriticConfig(alpha=0.0)), np.random.default_rng(0))


def test_update_leaves_targets_to_the_soft_mix():
    rng = np.random.default_rng(1)
    cfg = small(critic=CriticConfig(tau=1.0))
    agent = Agent(4, 2, cfg, rng)
    from sigent.replay import Batch

    b = Batch(rng.normal(size=(8, 4)), np.tanh(rng.normal(size=(8, 2))), np.ones(8), rng.normal(size=(8, 4)), np.zeros(8), np.zeros(8))
    agent.update(b, None, rng)
    for p, q in zip(agent.critics.q1.parameters(), agent.critics.q1_target.parameters()):
        assert np.array_equal(p.data, q.data)
