"""Policy objective: critic value, bounded entropy and gated behavior cloning."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from sigent import autodiff as ad
from sigent.autodiff import Tensor
from sigent.critic import CriticEnsemble, q_values
from sigent.errors import ConfigError, StructuralError
from sigent.policy import EntropyConfig, Policy, entropy_bonus
from sigent.replay import Batch

GATE_MODES = ("l2_norm", "per_dim_mse")
Q_REDUCTIONS = ("min", "q1")


@dataclass(frozen=True)
class GbcConfig:
    epsilon: float = 0.3
    epsilon_bc: float = 0.3
    lambda_bc: float = 1.0
    gate_mode: str = "per_dim_mse"

    def __post_init__(self):
        if self.gate_mode not in GATE_MODES:
            raise ConfigError(f"gbc.gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")
        if not (self.epsilon > 0 and self.epsilon_bc > 0):
            raise ConfigError("gbc thresholds must be positive")
        if self.lambda_bc < 0:
            raise ConfigError(f"gbc.lambda_bc must be >= 0, got {self.lambda_bc}")

    @property
    def threshold(self) -> float:
        return self.epsilon if self.gate_mode == "l2_norm" else self.epsilon_bc


def gate(a_mean, a_exp, cfg: GbcConfig) -> np.ndarray:
    """1 where the mean action strays beyond the threshold, else 0 (strict inequality).

    Works on single vectors or on batches along the last axis; never carries
    gradient.
    """
    a_mean = a_mean.data if isinstance(a_mean, Tensor) else np.asarray(a_mean, dtype=np.float64)
    a_exp = np.asarray(a_exp, dtype=np.float64)
    if a_mean.shape != a_exp.shape:
        raise StructuralError(f"mean action {a_mean.shape} and expert action {a_exp.shape} differ")
    sq = np.sum((a_mean - a_exp) ** 2, axis=-1)
    if cfg.gate_mode == "l2_norm":
        open_ = np.sqrt(sq) > cfg.epsilon
    else:
        open_ = sq / a_mean.shape[-1] > cfg.epsilon_bc**2
    return open_.astype(np.int64)


def gbc_penalty(policy: Policy, expert_batch: Batch, cfg: GbcConfig) -> Tensor:
    """Mean over expert samples of gate * ||tanh(mu(s)) - a_exp||^2."""
    if len(expert_batch) == 0:
        raise ConfigError("gated behavior cloning needs a nonempty expert batch")
    a_mean = ad.tanh(policy.head(expert_batch.states).mu)
    mask = gate(a_mean, expert_batch.actions, cfg).astype(np.float64)
    sq = ad.square(a_mean - expert_batch.actions).sum(axis=-1)
    return (sq * mask).mean()


@dataclass
class ObjectiveTerms:
    objective: Tensor
    q_term: float
    entropy_term: float
    gbc_term: float
    gate_rate: float
    log_prob: np.ndarray


def policy_objective_terms(
    policy: Policy,
    ensemble: CriticEnsemble,
    agent_batch: Batch,
    expert_batch: Batch | None,
    gbc: GbcConfig,
    rng: np.random.Generator,
    alpha: float,
    entropy_mode: str = "sigmoid",
    entropy_cfg: EntropyConfig = EntropyConfig(),
    q_reduce: str = "min",
) -> ObjectiveTerms:
    if q_reduce not in Q_REDUCTIONS:
        raise ConfigError(f"q_reduce must be one of {Q_REDUCTIONS}")
    smp = policy.sample(agent_batch.states, rng)
    q1 = q_values(ensemble.q1, agent_batch.states, smp.action, frozen=True)
    if q_reduce == "min":
        q2 = q_values(ensemble.q2, agent_batch.states, smp.action, frozen=True)
        q = ad.minimum(q1, q2)
    else:
        q = q1
    bonus = entropy_bonus(smp.per_dim_log_prob, entropy_mode, entropy_cfg)
    value = (q + bonus * alpha).mean()
    gbc_value, gate_rate = 0.0, 0.0
    if gbc.lambda_bc > 0:
        if expert_batch is None:
            raise ConfigError("lambda_bc > 0 needs an expert batch")
        pen = gbc_penalty(policy, expert_batch, gbc)
        gbc_value = float(pen.data)
        gate_rate = float(
            gate(policy.mean_action(expert_batch.states), expert_batch.actions, gbc).mean()
        )
        objective = value - pen * gbc.lambda_bc
    else:
        objective = value
    return ObjectiveTerms(
        objective=objective,
        q_term=float(q.data.mean()),
        entropy_term=float(bonus.data.mean()),
        gbc_term=gbc_value,
        gate_rate=gate_rate,
        log_prob=smp.log_prob.data,
    )


def policy_objective(*args, **kwargs) -> Tensor:
    """J = mean[Q(s, a) + alpha * H(s, a)] - lambda * gated BC penalty, a ~ pi(.|s) reparameterized."""
    return policy_objective_terms(*args, **kwargs).objective


def policy_loss(*args, **kwargs) -> Tensor:
    return -policy_objective(*args, **kwargs)
