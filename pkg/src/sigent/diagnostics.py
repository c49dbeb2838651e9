"""OOD-action ratio, entropy-adjusted Q landscapes and the metrics sink."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from sigent.actor import GbcConfig, gate
from sigent.errors import ConfigError, StructuralError
from sigent.policy import EntropyConfig, GaussianHead, log_prob_per_dim, sigmoid_entropy
from sigent.replay import ReplayBuffer

METRICS_HEADER = (
    "step",
    "success_rate",
    "mean_episode_steps",
    "mean_q",
    "q_std_window",
    "ood_ratio",
    "alpha",
    "mean_entropy",
    "actor_loss",
    "critic_loss_1",
    "critic_loss_2",
    "cql_term_mean",
)
LANDSCAPE_HEADER = ("action", "q", "neg_adjusted", "sig_adjusted")

# Fig. 1 conventions: policy std and the sampled neighborhood in units of it
DEFAULT_SIGMA_PI = 0.1
DEFAULT_SAMPLE_RADIUS = 1.5


def ood_ratio(
    policy,
    expert: ReplayBuffer,
    threshold: float = 0.3,
    gate_mode: str = "per_dim_mse",
) -> float:
    """Fraction of expert states where the policy's mean action fails the gate test."""
    if len(expert) == 0:
        raise ConfigError("ood_ratio needs a nonempty expert buffer")
    data = expert.all()
    cfg = GbcConfig(epsilon=threshold, epsilon_bc=threshold, gate_mode=gate_mode)
    mean_actions = policy.mean_action(data.states) if hasattr(policy, "mean_action") else policy(data.states)
    return float(gate(mean_actions, data.actions, cfg).mean())


@dataclass
class LandscapeGrid:
    action_grid: np.ndarray
    q_values: np.ndarray
    neg_entropy_adjusted: np.ndarray
    sig_entropy_adjusted: np.ndarray
    in_support: np.ndarray

    def __post_init__(self):
        n = len(self.action_grid)
        arrays = (self.q_values, self.neg_entropy_adjusted, self.sig_entropy_adjusted, self.in_support)
        if any(len(a) != n for a in arrays):
            raise StructuralError("landscape arrays must share one length")


def entropy_landscape(
    sigma_pi: float = DEFAULT_SIGMA_PI,
    cfg: EntropyConfig = EntropyConfig(),
    alpha: float = 1.0,
    q_fn: Callable[[np.ndarray], np.ndarray] | float = 0.0,
    grid_size: int = 201,
    reference_action: float = 0.0,
    sample_radius: float | None = DEFAULT_SAMPLE_RADIUS,
    delta: float = 1e-3,
) -> LandscapeGrid:
    """Entropy-adjusted Q over a 1D action slice.

    The policy is a squashed Gaussian centred on ``reference_action`` with
    pre-squash std ``sigma_pi``. The entropy adjustment only reaches actions
    the policy actually samples: those whose pre-squash value lies within
    ``sample_radius`` standard deviations of the mean. Other actions keep
    their raw Q. ``sample_radius=None`` applies the adjustment everywhere.
    """
    if not sigma_pi > 0:
        raise ConfigError("sigma_pi must be > 0")
    if grid_size < 3:
        raise ConfigError("grid_size must be >= 3")
    if not -1.0 < reference_action < 1.0:
        raise ConfigError("reference_action must lie in (-1, 1)")
    grid = np.linspace(-1.0 + delta, 1.0 - delta, grid_size)
    q = _eval_q(q_fn, grid)
    mu = np.arctanh(reference_action)
    head = GaussianHead(np.full((grid_size, 1), mu), np.full((grid_size, 1), np.log(sigma_pi)))
    pre = np.arctanh(grid)[:, None]
    logp = log_prob_per_dim(head, pre).data
    if sample_radius is None:
        support = np.ones(grid_size, dtype=bool)
    else:
        support = np.abs(pre[:, 0] - mu) <= sample_radius * sigma_pi
    neg = np.where(support, -alpha * logp[:, 0], 0.0)
    sig = np.where(support, alpha * sigmoid_entropy(logp, cfg).data, 0.0)
    return LandscapeGrid(grid, q, q + neg, q + sig, support)


def entropy_landscape_2d(
    sigma_pi: float = DEFAULT_SIGMA_PI,
    cfg: EntropyConfig = EntropyConfig(),
    alpha: float = 1.0,
    q_fn: Callable[[np.ndarray], np.ndarray] | float = 0.0,
    grid_size: int = 41,
    reference_action: Sequence[float] = (0.0, 0.0),
    sample_radius: float | None = DEFAULT_SAMPLE_RADIUS,
    delta: float = 1e-3,
) -> dict[str, np.ndarray]:
    """Two-action-dimension version; arrays are (grid_size, grid_size), axis 0 is a_1."""
    axis = np.linspace(-1.0 + delta, 1.0 - delta, grid_size)
    a1, a2 = np.meshgrid(axis, axis, indexing="ij")
    actions = np.stack([a1, a2], axis=-1)
    flat = actions.reshape(-1, 2)
    q = _eval_q(q_fn, flat)
    mu = np.arctanh(np.asarray(reference_action, dtype=np.float64))
    head = GaussianHead(np.broadcast_to(mu, flat.shape).copy(), np.full(flat.shape, np.log(sigma_pi)))
    pre = np.arctanh(flat)
    logp = log_prob_per_dim(head, pre).data
    if sample_radius is None:
        support = np.ones(len(flat), dtype=bool)
    else:
        support = np.all(np.abs(pre - mu) <= sample_radius * sigma_pi, axis=-1)
    neg = np.where(support, -alpha * logp.sum(axis=-1), 0.0)
    sig = np.where(support, alpha * sigmoid_entropy(logp, cfg).data, 0.0)
    shape = a1.shape
    return {
        "a1": a1,
        "a2": a2,
        "q": q.reshape(shape),
        "neg_adjusted": (q + neg).reshape(shape),
        "sig_adjusted": (q + sig).reshape(shape),
    }


def _eval_q(q_fn, actions: np.ndarray) -> np.ndarray:
    if callable(q_fn):
        q = np.asarray(q_fn(actions), dtype=np.float64).reshape(len(actions))
    else:
        q = np.full(len(actions), float(q_fn))
    if not np.all(np.isfinite(q)):
        raise StructuralError("q_fn returned non-finite values")
    return q


def quadratic_bowl(center: float = 0.0, curvature: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    def q(actions):
        a = np.asarray(actions, dtype=np.float64)
        a = a[:, None] if a.ndim == 1 else a
        return -curvature * np.sum((a - center) ** 2, axis=-1)

    return q


def write_landscape(grid: LandscapeGrid, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LANDSCAPE_HEADER)
        for row in zip(grid.action_grid, grid.q_values, grid.neg_entropy_adjusted, grid.sig_entropy_adjusted):
            w.writerow([repr(float(x)) for x in row])


def write_landscape_2d(data: dict[str, np.ndarray], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("action_1", "action_2", "q", "neg_adjusted", "sig_adjusted"))
        for row in zip(*(data[k].ravel() for k in ("a1", "a2", "q", "neg_adjusted", "sig_adjusted"))):
            w.writerow([repr(float(x)) for x in row])


def read_landscape(path: str | Path) -> LandscapeGrid:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != LANDSCAPE_HEADER:
        raise StructuralError(f"unexpected landscape header {rows[0]}")
    cols = np.array([[float(x) for x in r] for r in rows[1:]]).T
    return LandscapeGrid(cols[0], cols[1], cols[2], cols[3], np.ones(len(cols[0]), dtype=bool))


# -- metrics -----------------------------------------------------------


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "diverged"
    if math.isinf(value):
        return "diverged"
    return repr(value)


def _parse(text: str):
    if text == "":
        return None
    if text == "diverged":
        return math.nan
    try:
        return int(text)
    except ValueError:
        return float(text)


class MetricsSink:
    """Append-only CSV with a fixed header.

    Empty cells mean "not measured yet"; ``diverged`` marks a non-finite value.
    """

    def __init__(self, path: str | Path, header: Sequence[str] = METRICS_HEADER):
        self.path = Path(path)
        self.header = tuple(header)
        self._fh = open(self.path, "w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(self.header)
        self._fh.flush()
        self.rows = 0

    def write(self, record: dict, flush: bool = True) -> None:
        if set(record) != set(self.header):
            missing = set(self.header) - set(record)
            extra = set(record) - set(self.header)
            raise StructuralError(f"metrics record mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        self._writer.writerow([_format(record[k]) for k in self.header])
        self.rows += 1
        if flush:
            self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def export_metrics(sink: MetricsSink, record: dict) -> None:
    sink.write(record)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return [dict(zip(header, (_parse(x) for x in row))) for row in reader]
