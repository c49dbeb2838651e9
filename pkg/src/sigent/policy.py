"""Tanh-squashed Gaussian policy and its entropy terms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sigent import autodiff as ad
from sigent.autodiff import Tensor
from sigent.errors import ConfigError, StructuralError
from sigent.netstack import Mlp

LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0
# a fresh policy explores with std about 0.37 in pre-squash space
INIT_LOG_SIGMA = -1.0
_HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class EntropyConfig:
    h_max: float = 1.0
    m: float = 0.0
    t: float = 1.0

    def __post_init__(self):
        if not self.h_max > 0:
            raise ConfigError(f"entropy.h_max must be > 0, got {self.h_max}")
        if not self.t > 0:
            raise ConfigError(f"entropy.t must be > 0, got {self.t}")


@dataclass
class GaussianHead:
    """Pre-squash mean and log standard deviation, shape (..., d)."""

    mu: Tensor
    log_sigma: Tensor

    def __post_init__(self):
        self.mu = ad.as_tensor(self.mu)
        self.log_sigma = ad.as_tensor(self.log_sigma)
        if self.mu.shape != self.log_sigma.shape:
            raise StructuralError(f"mu {self.mu.shape} and log_sigma {self.log_sigma.shape} differ")

    @property
    def action_dim(self) -> int:
        return self.mu.shape[-1]


@dataclass
class SquashedSample:
    pre_squash: Tensor
    action: Tensor
    per_dim_log_prob: Tensor
    noise: np.ndarray

    @property
    def log_prob(self) -> Tensor:
        return self.per_dim_log_prob.sum(axis=-1)


def make_head(raw: Tensor) -> GaussianHead:
    """Split a network output of width 2d into a head; log_sigma is clamped."""
    d = raw.shape[-1] // 2
    mu = raw[..., :d]
    log_sigma = ad.clip(raw[..., d:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    return GaussianHead(mu, log_sigma)


def log_prob_per_dim(head: GaussianHead, pre_squash) -> Tensor:
    """Per-dimension log-density of ``tanh(pre_squash)`` under the squashed head."""
    x = ad.as_tensor(pre_squash)
    if x.shape[-1] != head.action_dim:
        raise StructuralError(f"pre_squash width {x.shape[-1]} != action dim {head.action_dim}")
    z = (x - head.mu) * ad.exp(-head.log_sigma)
    gaussian = -0.5 * ad.square(z) - head.log_sigma - _HALF_LOG_2PI
    return gaussian - ad.log1m_tanh_sq(x)


def sample(head: GaussianHead, rng: np.random.Generator) -> SquashedSample:
    """Reparameterized draw; gradients reach mu and log_sigma through the action."""
    noise = rng.standard_normal(head.mu.shape)
    x = head.mu + ad.exp(head.log_sigma) * noise
    return SquashedSample(
        pre_squash=x,
        action=ad.tanh(x),
        per_dim_log_prob=log_prob_per_dim(head, x),
        noise=noise,
    )


def mean_action(head: GaussianHead) -> Tensor:
    return ad.tanh(head.mu)


def sigmoid_entropy(per_dim_log_prob, cfg: EntropyConfig = EntropyConfig()) -> Tensor:
    """Sum over the last axis of ``h_max * sigmoid((s_i - m) / t)`` with s_i = -log pi_i."""
    surprisal = -ad.as_tensor(per_dim_log_prob)
    return (ad.sigmoid((surprisal - cfg.m) * (1.0 / cfg.t)) * cfg.h_max).sum(axis=-1)


def default_entropy(per_dim_log_prob) -> Tensor:
    """Standard maximum-entropy bonus ``-log pi(a|s)``."""
    return -ad.as_tensor(per_dim_log_prob).sum(axis=-1)


ENTROPY_MODES = ("sigmoid", "negative")


def entropy_bonus(per_dim_log_prob, mode: str, cfg: EntropyConfig) -> Tensor:
    if mode == "sigmoid":
        return sigmoid_entropy(per_dim_log_prob, cfg)
    if mode == "negative":
        return default_entropy(per_dim_log_prob)
    raise ConfigError(f"unknown entropy mode {mode!r}; choose from {ENTROPY_MODES}")


class Policy:
    """State-conditioned squashed Gaussian backed by one :class:`Mlp`."""

    def __init__(self, net: Mlp):
        if net.out_dim % 2:
            raise StructuralError("policy network output width must be 2 * action_dim")
        self.net = net

    @classmethod
    def build(
        cls,
        state_dim: int,
        action_dim: int,
        hidden: tuple[int, ...] = (64, 64),
        activation: str = "relu",
        rng: np.random.Generator | None = None,
        init_log_sigma: float = INIT_LOG_SIGMA,
    ) -> "Policy":
        """Near-zero initial mean; initial log std close to ``init_log_sigma``."""
        sizes = [state_dim, *hidden, 2 * action_dim]
        net = Mlp(sizes, activation, rng=rng, output_scale=0.01)
        net.biases[-1].data[action_dim:] += init_log_sigma
        return cls(net)

    @property
    def state_dim(self) -> int:
        return self.net.in_dim

    @property
    def action_dim(self) -> int:
        return self.net.out_dim // 2

    def head(self, states) -> GaussianHead:
        return make_head(self.net(states))

    def sample(self, states, rng: np.random.Generator) -> SquashedSample:
        return sample(self.head(states), rng)

    def act(self, state, rng: np.random.Generator | None = None) -> np.ndarray:
        """Numpy action for one state or a batch; mean action when ``rng`` is None."""
        raw = self.net.predict(state)
        d = self.action_dim
        mu = raw[..., :d]
        if rng is None:
            return np.tanh(mu)
        log_sigma = np.clip(raw[..., d:], LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return np.tanh(mu + np.exp(log_sigma) * rng.standard_normal(mu.shape))

    def mean_action(self, states) -> np.ndarray:
        return self.act(states)

    def parameters(self) -> list[Tensor]:
        return self.net.parameters()
