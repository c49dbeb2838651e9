"""Sigmoid-bounded entropy actor-critic learning from a single demonstration."""

from sigent.actor import GbcConfig, gate, gbc_penalty, policy_loss, policy_objective
from sigent.critic import CriticConfig, CriticEnsemble, bellman_target, cql_regularizer, critic_loss, td_loss
from sigent.envs import PointPush, PointReach, make_env
from sigent.policy import EntropyConfig, Policy, sigmoid_entropy
from sigent.replay import ReplayBuffer, Transition, load_demo, save_demo
from sigent.trainer import EvalReport, TrainConfig, evaluate, run_arm, train

__version__ = "0.1.0"

__all__ = [
    "CriticConfig",
    "CriticEnsemble",
    "EntropyConfig",
    "EvalReport",
    "GbcConfig",
    "Policy",
    "PointPush",
    "PointReach",
    "ReplayBuffer",
    "TrainConfig",
    "Transition",
    "bellman_target",
    "cql_regularizer",
    "critic_loss",
    "evaluate",
    "gate",
    "gbc_penalty",
    "load_demo",
    "make_env",
    "policy_loss",
    "policy_objective",
    "run_arm",
    "save_demo",
    "sigmoid_entropy",
    "td_loss",
    "train",
]
