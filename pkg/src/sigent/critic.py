"""Twin Q critics: entropy-augmented targets, TD loss and the conservative term."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from sigent import autodiff as ad
from sigent.autodiff import Tensor
from sigent.errors import ConfigError, StructuralError
from sigent.netstack import Mlp, hard_update, soft_update
from sigent.policy import EntropyConfig, Policy, entropy_bonus
from sigent.replay import Batch

EntropyFn = Callable[[Tensor], Tensor]


@dataclass(frozen=True)
class CriticConfig:
    gamma: float = 0.99
    alpha: float = 0.2
    beta: float = 1.0
    lambda_ood: float = 1.0
    n_ood: int = 4
    use_mc_lower_bound: bool = True
    tau: float = 0.005

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"critic.gamma must lie in (0, 1), got {self.gamma}")
        if not self.beta > 0:
            raise ConfigError(f"critic.beta must be > 0, got {self.beta}")
        if self.alpha < 0 or self.lambda_ood < 0:
            raise ConfigError("critic.alpha and critic.lambda_ood must be nonnegative")
        if self.n_ood < 0:
            raise ConfigError(f"critic.n_ood must be >= 0, got {self.n_ood}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"critic.tau must lie in (0, 1], got {self.tau}")


class CriticEnsemble:
    """Two online Q networks and their Polyak-averaged targets."""

    def __init__(self, q1: Mlp, q2: Mlp, q1_target: Mlp | None = None, q2_target: Mlp | None = None):
        self.q1, self.q2 = q1, q2
        self.q1_target = q1_target if q1_target is not None else q1.copy()
        self.q2_target = q2_target if q2_target is not None else q2.copy()
        nets = (self.q1, self.q2, self.q1_target, self.q2_target)
        if any(not n.same_architecture(q1) for n in nets) or q1.out_dim != 1:
            raise StructuralError("all four critics must share one architecture with scalar output")

    @classmethod
    def build(
        cls,
        state_dim: int,
        action_dim: int,
        hidden: tuple[int, ...] = (64, 64),
        activation: str = "relu",
        rng: np.random.Generator | None = None,
    ) -> "CriticEnsemble":
        sizes = [state_dim + action_dim, *hidden, 1]
        return cls(Mlp(sizes, activation, rng=rng), Mlp(sizes, activation, rng=rng))

    @property
    def online(self) -> tuple[Mlp, Mlp]:
        return self.q1, self.q2

    def update_targets(self, tau: float) -> None:
        soft_update(self.q1_target, self.q1, tau)
        soft_update(self.q2_target, self.q2, tau)

    def sync_targets(self) -> None:
        hard_update(self.q1_target, self.q1)
        hard_update(self.q2_target, self.q2)

    def swapped(self) -> "CriticEnsemble":
        return CriticEnsemble(self.q2, self.q1, self.q2_target, self.q1_target)


def q_values(net: Mlp, states, actions, frozen: bool = False) -> Tensor:
    """Q(s, a) with the trailing unit axis dropped; broadcasts over leading axes."""
    s = ad.as_tensor(states)
    a = ad.as_tensor(actions)
    if s.shape[:-1] != a.shape[:-1]:
        s = ad.broadcast_to(s, a.shape[:-1] + (s.shape[-1],))
    q = net(ad.concat([s, a], axis=-1), frozen=frozen)
    return q.reshape(q.shape[:-1])


def q_predict(net: Mlp, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    states = np.broadcast_to(states, actions.shape[:-1] + (states.shape[-1],))
    return net.predict(np.concatenate([states, actions], axis=-1))[..., 0]


def _default_entropy_fn(per_dim_log_prob) -> Tensor:
    return entropy_bonus(per_dim_log_prob, "sigmoid", EntropyConfig())


def bellman_target(
    batch: Batch,
    policy: Policy,
    ensemble: CriticEnsemble,
    cfg: CriticConfig,
    rng: np.random.Generator,
    entropy_fn: EntropyFn = _default_entropy_fn,
    alpha: float | None = None,
) -> np.ndarray:
    """y = r + (1 - d) * gamma * (min_i Q'_i(s', a') + alpha * H(s', a')), a' ~ pi(.|s').

    Returned as a plain array: nothing upstream of y receives gradient.
    """
    if len(batch) == 0:
        raise StructuralError("empty batch")
    alpha = cfg.alpha if alpha is None else alpha
    smp = policy.sample(batch.next_states, rng)
    next_actions = smp.action.data
    bonus = entropy_fn(Tensor(smp.per_dim_log_prob.data)).data
    q_next = np.minimum(
        q_predict(ensemble.q1_target, batch.next_states, next_actions),
        q_predict(ensemble.q2_target, batch.next_states, next_actions),
    )
    return batch.rewards + (1.0 - batch.dones) * cfg.gamma * (q_next + alpha * bonus)


def td_loss(ensemble: CriticEnsemble, batch: Batch, targets: np.ndarray) -> tuple[Tensor, Tensor]:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (len(batch),):
        raise StructuralError(f"{targets.shape[0] if targets.ndim else 0} targets for {len(batch)} transitions")
    return tuple(
        ad.square(q_values(q, batch.states, batch.actions) - targets).mean() for q in ensemble.online
    )


def ood_action_set(policy: Policy, s, s_next, n: int, rng: np.random.Generator) -> np.ndarray:
    """n actions drawn at s followed by n drawn at s_next.

    Shape (..., 2n, action_dim) for states of shape (..., state_dim).
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    s = np.asarray(s, dtype=np.float64)
    s_next = np.asarray(s_next, dtype=np.float64)
    both = np.stack([s, s_next], axis=-2)  # (..., 2, ds)
    rep = np.repeat(both, n, axis=-2)  # (..., 2n, ds)
    return policy.act(rep, rng)


def _conservative_term(q_all: Tensor, returns: np.ndarray, cfg: CriticConfig) -> Tensor:
    """Batch mean of beta * logsumexp(Q~ / beta) - Q(s, a); column 0 of ``q_all`` is the data action."""
    q_data = q_all[:, 0]
    if q_all.shape[1] == 1:
        cand = q_all
    else:
        q_ood = q_all[:, 1:]
        if cfg.use_mc_lower_bound:
            if np.any(np.isnan(returns)):
                raise ConfigError("use_mc_lower_bound needs a return-to-go on every sampled transition")
            q_ood = ad.maximum(q_ood, returns[:, None])
        cand = ad.concat([q_all[:, :1], q_ood], axis=1)
    # shifting by Q(s, a) keeps the data term at exp(0) = 1, so the value is >= 0 in floating point
    lse = ad.logsumexp((cand - q_all[:, :1]) * (1.0 / cfg.beta), axis=1) * cfg.beta
    return lse.mean()


def _candidate_q(q: Mlp, batch: Batch, ood_actions: np.ndarray) -> Tensor:
    actions = np.concatenate([batch.actions[:, None, :], ood_actions], axis=1)
    return q_values(q, batch.states[:, None, :], actions)


def cql_regularizer(q: Mlp, batch: Batch, ood_actions: np.ndarray, cfg: CriticConfig) -> Tensor:
    """The log-sum-exp conservative penalty for one critic.

    ``ood_actions`` has shape (B, K, action_dim); K may be 0.
    """
    return _conservative_term(_candidate_q(q, batch, np.asarray(ood_actions, dtype=np.float64)), batch.returns, cfg)


@dataclass
class CriticLoss:
    loss_1: Tensor
    loss_2: Tensor
    td_1: float
    td_2: float
    cql_1: float
    cql_2: float
    mean_q: float
    mean_target: float

    @property
    def cql_mean(self) -> float:
        return 0.5 * (self.cql_1 + self.cql_2)


def critic_loss(
    ensemble: CriticEnsemble,
    batch: Batch,
    policy: Policy,
    cfg: CriticConfig,
    rng: np.random.Generator,
    entropy_fn: EntropyFn = _default_entropy_fn,
    alpha: float | None = None,
) -> CriticLoss:
    """TD loss plus ``lambda_ood`` times the conservative term, for both critics.

    Random draws happen in a fixed order: next actions for the target, then
    the OOD set.
    """
    y = bellman_target(batch, policy, ensemble, cfg, rng, entropy_fn, alpha)
    if cfg.lambda_ood > 0 and cfg.n_ood > 0:
        ood = ood_action_set(policy, batch.states, batch.next_states, cfg.n_ood, rng)
    else:
        ood = np.zeros((len(batch), 0, batch.actions.shape[1]))
    losses, tds, cqls, qs = [], [], [], []
    plain = td_loss(ensemble, batch, y) if cfg.lambda_ood == 0 else (None, None)
    for q, plain_td in zip(ensemble.online, plain):
        q_all = _candidate_q(q, batch, ood)
        td = ad.square(q_all[:, 0] - y).mean() if plain_td is None else plain_td
        if cfg.lambda_ood > 0:
            reg = _conservative_term(q_all, batch.returns, cfg)
            losses.append(td + reg * cfg.lambda_ood)
            cqls.append(float(reg.data))
        else:
            losses.append(td)
            cqls.append(float(_conservative_term(Tensor(q_all.data), batch.returns, cfg).data))
        tds.append(float(td.data))
        qs.append(float(q_all.data[:, 0].mean()))
    return CriticLoss(
        loss_1=losses[0],
        loss_2=losses[1],
        td_1=tds[0],
        td_2=tds[1],
        cql_1=cqls[0],
        cql_2=cqls[1],
        mean_q=0.5 * (qs[0] + qs[1]),
        mean_target=float(y.mean()),
    )
