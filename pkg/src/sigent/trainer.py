"""The online training loop, evaluation and the baseline arms."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from sigent import autodiff as ad
from sigent.actor import GbcConfig, policy_objective_terms
from sigent.critic import CriticConfig, CriticEnsemble, critic_loss, q_predict
from sigent.diagnostics import MetricsSink, ood_ratio
from sigent.envs import PointEnv, make_env
from sigent.errors import ConfigError, NumericalError, ValidationError
from sigent.netstack import OptimizerState, adam_step, save_params
from sigent.policy import ENTROPY_MODES, EntropyConfig, Policy, entropy_bonus
from sigent.replay import (
    ReplayBuffer,
    Transition,
    degrade,
    expert_buffer,
    finalize_episode,
    read_demo,
)

log = logging.getLogger(__name__)

ARMS = ("sigent-sac", "sac-with-prior")
ALPHA_MODES = ("fixed", "auto")


class DivergenceError(NumericalError):
    """Training produced a non-finite loss; a snapshot was written if possible."""

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}


@dataclass(frozen=True)
class NetConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    alpha_lr: float = 3e-4
    init_log_sigma: float = -1.0


@dataclass(frozen=True)
class TrainConfig:
    env: str = "point-reach"
    total_steps: int = 50_000
    batch_size: int = 128
    expert_batch_size: int = 0  # 0 means batch_size
    warmup_steps: int = 1000
    eval_every: int = 5000
    eval_episodes: int = 20
    seed: int = 0
    entropy_mode: str = "sigmoid"
    alpha_mode: str = "fixed"
    target_entropy: float | None = None
    arm: str = "sigent-sac"
    q_reduce: str = "min"
    expert_to_buffer: bool = False
    buffer_capacity: int = 1_000_000
    q_window: int = 10
    demo_degradation: str | None = None
    stop_at_success: float | None = None
    checkpoints: bool = True
    entropy: EntropyConfig = EntropyConfig()
    gbc: GbcConfig = GbcConfig()
    critic: CriticConfig = CriticConfig()
    net: NetConfig = NetConfig()

    def __post_init__(self):
        if self.total_steps < 0 or self.warmup_steps < 0:
            raise ConfigError("total_steps and warmup_steps must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("eval_every and eval_episodes must be >= 1")
        if self.total_steps > 0 and self.eval_every > self.total_steps:
            raise ConfigError(f"eval_every ({self.eval_every}) exceeds total_steps ({self.total_steps})")
        if self.entropy_mode not in ENTROPY_MODES:
            raise ConfigError(f"entropy_mode must be one of {ENTROPY_MODES}")
        if self.alpha_mode not in ALPHA_MODES:
            raise ConfigError(f"alpha_mode must be one of {ALPHA_MODES}")
        if self.arm not in ARMS:
            raise ConfigError(f"arm must be one of {ARMS}")
        if self.q_window < 1:
            raise ConfigError("q_window must be >= 1")


def normalize_config(cfg: TrainConfig) -> tuple[TrainConfig, list[str]]:
    """Force the settings an arm implies; returns the config and a note per override."""
    notes = []
    if cfg.arm == "sac-with-prior":
        changes = {}
        if cfg.entropy_mode != "negative":
            changes["entropy_mode"] = "negative"
        if cfg.gbc.lambda_bc != 0.0:
            changes["gbc"] = dataclasses.replace(cfg.gbc, lambda_bc=0.0)
        if cfg.critic.lambda_ood != 0.0:
            changes["critic"] = dataclasses.replace(cfg.critic, lambda_ood=0.0)
        if not cfg.expert_to_buffer:
            changes["expert_to_buffer"] = True
        for key, value in changes.items():
            old = getattr(cfg, key)
            if key == "gbc":
                notes.append(f"gbc.lambda_bc: {old.lambda_bc} -> 0.0 (sac-with-prior)")
            elif key == "critic":
                notes.append(f"critic.lambda_ood: {old.lambda_ood} -> 0.0 (sac-with-prior)")
            else:
                notes.append(f"{key}: {old} -> {value} (sac-with-prior)")
        cfg = dataclasses.replace(cfg, **changes)
    return cfg, notes


@dataclass
class EvalReport:
    step: int
    success_rate: float
    mean_episode_steps: float
    mean_q: float = float("nan")
    q_std_window: float = float("nan")
    ood_ratio: float = float("nan")
    successes: int = 0
    episodes: int = 0


def evaluate(
    policy: Policy | Callable[[np.ndarray], np.ndarray],
    env: PointEnv,
    episodes: int,
    rng: np.random.Generator,
    step: int = 0,
) -> EvalReport:
    """Roll out the deterministic mean action; nothing is stored anywhere."""
    if episodes < 1:
        raise ValidationError("episodes must be >= 1")
    act = policy.mean_action if isinstance(policy, Policy) else policy
    successes, lengths = 0, []
    for _ in range(episodes):
        s = env.reset(rng)
        n = 0
        while True:
            res = env.step(np.clip(act(s), -1.0, 1.0))
            n += 1
            s = res.next_state
            if res.done:
                successes += int(res.success)
                lengths.append(n)
                break
    return EvalReport(
        step=step,
        success_rate=successes / episodes,
        mean_episode_steps=float(np.mean(lengths)),
        successes=successes,
        episodes=episodes,
    )


class Agent:
    """Policy, critics, their optimizers and the entropy weight."""

    def __init__(self, state_dim: int, action_dim: int, cfg: TrainConfig, rng: np.random.Generator):
        net = cfg.net
        self.cfg = cfg
        self.policy = Policy.build(state_dim, action_dim, net.hidden, net.activation, rng, net.init_log_sigma)
        self.critics = CriticEnsemble.build(state_dim, action_dim, net.hidden, net.activation, rng)
        self.actor_opt = OptimizerState.for_net(self.policy.net, net.actor_lr)
        self.q1_opt = OptimizerState.for_net(self.critics.q1, net.critic_lr)
        self.q2_opt = OptimizerState.for_net(self.critics.q2, net.critic_lr)
        self.log_alpha = np.log(cfg.critic.alpha) if cfg.critic.alpha > 0 else -np.inf
        self.alpha_opt = OptimizerState.for_shapes([()], net.alpha_lr)
        if cfg.alpha_mode == "auto":
            if cfg.critic.alpha <= 0:
                raise ConfigError("alpha_mode=auto needs a positive initial critic.alpha")
            self.target_entropy = (
                cfg.target_entropy if cfg.target_entropy is not None else default_target_entropy(cfg, action_dim)
            )
        else:
            self.target_entropy = None

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha))

    def entropy_fn(self, per_dim_log_prob):
        return entropy_bonus(per_dim_log_prob, self.cfg.entropy_mode, self.cfg.entropy)

    def update(self, batch, expert_batch, rng: np.random.Generator) -> dict:
        """One critic step per critic, one actor step, optional alpha step, one target mix."""
        cfg = self.cfg
        alpha = self.alpha
        closs = critic_loss(self.critics, batch, self.policy, cfg.critic, rng, self.entropy_fn, alpha)
        _check_finite("critic loss", closs.loss_1.data, closs.loss_2.data)
        g1 = ad.grad(closs.loss_1, self.critics.q1.parameters())
        g2 = ad.grad(closs.loss_2, self.critics.q2.parameters())
        adam_step(self.critics.q1.parameters(), g1, self.q1_opt)
        adam_step(self.critics.q2.parameters(), g2, self.q2_opt)

        terms = policy_objective_terms(
            self.policy,
            self.critics,
            batch,
            expert_batch,
            cfg.gbc,
            rng,
            alpha,
            cfg.entropy_mode,
            cfg.entropy,
            cfg.q_reduce,
        )
        loss = -terms.objective
        _check_finite("actor loss", loss.data)
        adam_step(self.policy.parameters(), ad.grad(loss, self.policy.parameters()), self.actor_opt)

        if self.target_entropy is not None:
            # descend alpha * (H_hat - H_target) in log space
            g = np.array(self.alpha * (terms.entropy_term - self.target_entropy))
            param = ad.Tensor(np.array(self.log_alpha))
            adam_step([param], [g], self.alpha_opt)
            self.log_alpha = float(param.data)

        self.critics.update_targets(cfg.critic.tau)
        return {
            "critic_loss_1": float(closs.loss_1.data),
            "critic_loss_2": float(closs.loss_2.data),
            "cql_term_mean": closs.cql_mean,
            "actor_loss": float(loss.data),
            "mean_entropy": terms.entropy_term,
            "gate_rate": terms.gate_rate,
        }

    def probe_q(self, states: np.ndarray) -> float:
        """Mean of min(Q1, Q2) at the policy's mean actions."""
        actions = self.policy.mean_action(states)
        return float(
            np.minimum(
                q_predict(self.critics.q1, states, actions),
                q_predict(self.critics.q2, states, actions),
            ).mean()
        )

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_params(self.policy.net, directory / "policy.sgnt")
        save_params(self.critics.q1, directory / "q1.sgnt")
        save_params(self.critics.q2, directory / "q2.sgnt")


def default_target_entropy(cfg: TrainConfig, action_dim: int) -> float:
    if cfg.entropy_mode == "sigmoid":
        return 0.5 * action_dim * cfg.entropy.h_max
    return -float(action_dim)


def _check_finite(what: str, *values) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite {what}")


@dataclass
class RunResult:
    config: TrainConfig
    reports: list[EvalReport] = field(default_factory=list)
    rows: list[dict] = field(default_factory=list)
    steps: int = 0
    updates: int = 0
    episodes: int = 0
    status: str = "running"
    run_dir: Path | None = None
    expert_steps: float | None = None
    agent: Agent | None = None

    def first_step_reaching(self, threshold: float) -> int | None:
        for r in self.reports:
            if r.success_rate >= threshold:
                return r.step
        return None

    def final_reports(self, n: int) -> list[EvalReport]:
        return self.reports[-n:]


def _make_rngs(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "env", "explore", "update", "buffer", "demo")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def eval_rng(seed: int) -> np.random.Generator:
    """Evaluation spawns are identical at every evaluation of a run."""
    return np.random.default_rng(np.random.SeedSequence([seed, 0xE7A1]))


def load_expert(demo_path, env: PointEnv, cfg: TrainConfig, rng: np.random.Generator) -> tuple[ReplayBuffer, list]:
    demo = read_demo(demo_path)
    if demo.state_dim != env.state_dim or demo.action_dim != env.action_dim:
        raise ValidationError(
            f"demo dims ({demo.state_dim}, {demo.action_dim}) do not match env "
            f"{env.spec} ({env.state_dim}, {env.action_dim})"
        )
    episode = demo.transitions
    if cfg.demo_degradation:
        episode = degrade(episode, cfg.demo_degradation, rng)
    return expert_buffer(episode, demo.gamma), episode


def train(
    cfg: TrainConfig,
    env: PointEnv | None = None,
    demo_path: str | Path | None = None,
    run_dir: str | Path | None = None,
    on_eval: Callable[[EvalReport, dict], None] | None = None,
) -> RunResult:
    """Run the two-phase loop: load the demonstration, then interact and learn.

    With ``run_dir`` set, metrics, checkpoints and the final policy are written
    there. Raises :class:`DivergenceError` on a non-finite loss after writing
    ``divergence.json``.
    """
    cfg, notes = normalize_config(cfg)
    for note in notes:
        log.info("config override: %s", note)
    rngs = _make_rngs(cfg.seed)
    env = env if env is not None else make_env(cfg.env, seed=cfg.seed)
    eval_env = make_env(env.name, seed=cfg.seed + 1)
    agent = Agent(env.state_dim, env.action_dim, cfg, rngs["init"])
    result = RunResult(config=cfg, agent=agent)

    expert, expert_episode = (None, [])
    if demo_path is not None:
        expert, expert_episode = load_expert(demo_path, env, cfg, rngs["demo"])
    elif cfg.gbc.lambda_bc > 0 or cfg.expert_to_buffer:
        raise ConfigError("a demonstration is required when gbc.lambda_bc > 0 or expert_to_buffer is set")

    buffer = ReplayBuffer(cfg.buffer_capacity)
    if cfg.expert_to_buffer and expert_episode:
        finalize_episode(buffer, expert_episode, cfg.critic.gamma)

    sink = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        result.run_dir = run_dir
        sink = MetricsSink(run_dir / "metrics.csv")

    expert_bs = cfg.expert_batch_size or cfg.batch_size
    probe_states = expert.all().states if expert is not None else None
    q_history: list[float] = []
    stats: list[dict] = []
    episode: list[Transition] = []
    state = env.reset(rngs["env"])
    t0 = time.perf_counter()
    try:
        for step in range(1, cfg.total_steps + 1):
            if step <= cfg.warmup_steps:
                action = rngs["explore"].uniform(-1.0, 1.0, env.action_dim)
            else:
                action = agent.policy.act(state, rngs["explore"])
            res = env.step(action)
            episode.append(Transition(state, action, res.reward, res.next_state, res.success))
            state = res.next_state
            if res.done:
                finalize_episode(buffer, episode, cfg.critic.gamma)
                episode = []
                result.episodes += 1
                state = env.reset(rngs["env"])

            if step > cfg.warmup_steps and len(buffer) >= cfg.batch_size:
                batch = buffer.sample(cfg.batch_size, rngs["buffer"])
                exp_batch = expert.sample(expert_bs, rngs["buffer"]) if expert is not None else None
                try:
                    stats.append(agent.update(batch, exp_batch, rngs["update"]))
                except (DivergenceError, NumericalError) as exc:
                    snap = _snapshot(step, agent, batch, stats[-1] if stats else {})
                    if run_dir is not None:
                        (run_dir / "divergence.json").write_text(json.dumps(snap, indent=2))
                    result.status = "diverged"
                    raise DivergenceError(f"step {step}: {exc}", snap) from exc
                result.updates += 1

            result.steps = step
            if step % cfg.eval_every == 0:
                report = evaluate(agent.policy, eval_env, cfg.eval_episodes, eval_rng(cfg.seed), step)
                if probe_states is not None:
                    report.mean_q = agent.probe_q(probe_states)
                    report.ood_ratio = ood_ratio(agent.policy, expert, 0.3, cfg.gbc.gate_mode)
                    q_history.append(report.mean_q)
                    window = q_history[-cfg.q_window:]
                    report.q_std_window = float(np.std(window))
                row = _metrics_row(report, agent, stats)
                stats = []
                result.reports.append(report)
                result.rows.append(row)
                if sink is not None:
                    sink.write(row)
                    if cfg.checkpoints:
                        agent.save(run_dir / "checkpoints" / f"step_{step:08d}")
                if on_eval is not None:
                    on_eval(report, row)
                log.debug("step %d success %.2f steps %.1f", step, report.success_rate, report.mean_episode_steps)
                if cfg.stop_at_success is not None and report.success_rate >= cfg.stop_at_success:
                    break
        result.status = "completed"
    finally:
        if sink is not None:
            sink.close()
        if run_dir is not None and result.status == "completed":
            agent.save(run_dir / "final")
    log.info("run finished: %d steps, %d updates in %.1fs", result.steps, result.updates, time.perf_counter() - t0)
    return result


def _metrics_row(report: EvalReport, agent: Agent, stats: list[dict]) -> dict:
    def avg(key):
        return float(np.mean([s[key] for s in stats])) if stats else None

    def finite_or_none(x):
        return None if x is None or np.isnan(x) else x

    return {
        "step": report.step,
        "success_rate": report.success_rate,
        "mean_episode_steps": report.mean_episode_steps,
        "mean_q": finite_or_none(report.mean_q),
        "q_std_window": finite_or_none(report.q_std_window),
        "ood_ratio": finite_or_none(report.ood_ratio),
        "alpha": agent.alpha,
        "mean_entropy": avg("mean_entropy"),
        "actor_loss": avg("actor_loss"),
        "critic_loss_1": avg("critic_loss_1"),
        "critic_loss_2": avg("critic_loss_2"),
        "cql_term_mean": avg("cql_term_mean"),
    }


def _snapshot(step: int, agent: Agent, batch, last_stats: dict) -> dict:
    return {
        "step": step,
        "last_finite_losses": last_stats,
        "parameter_norms": {
            "policy": agent.policy.net.parameter_norm(),
            "q1": agent.critics.q1.parameter_norm(),
            "q2": agent.critics.q2.parameter_norm(),
            "q1_target": agent.critics.q1_target.parameter_norm(),
            "q2_target": agent.critics.q2_target.parameter_norm(),
        },
        "alpha": agent.alpha,
        "batch": {
            "states": batch.states.tolist(),
            "actions": batch.actions.tolist(),
            "rewards": batch.rewards.tolist(),
            "dones": batch.dones.tolist(),
        },
    }


def run_arm(cfg: TrainConfig, arm: str, **kwargs) -> RunResult:
    return train(dataclasses.replace(cfg, arm=arm), **kwargs)


def record_expert_episode(env: PointEnv, rng: np.random.Generator) -> list[Transition]:
    s = env.reset(rng)
    episode = []
    while True:
        a = env.expert_action(s)
        res = env.step(a)
        episode.append(Transition(s, a, res.reward, res.next_state, res.success))
        s = res.next_state
        if res.done:
            return episode

