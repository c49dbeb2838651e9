"""Agent and expert replay buffers, return-to-go, demonstration files."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from sigent.errors import (
    ConfigError,
    ContractError,
    DemoFormatError,
    EmptyDemoError,
    ValidationError,
)

DEMO_MAGIC = "sigent-demo"
DEMO_VERSION = 1
ACTION_CLAMP = 1.0 - 1e-6


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    return_to_go: float | None = None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            np.array_equal(self.state, other.state)
            and np.array_equal(self.action, other.action)
            and self.reward == other.reward
            and np.array_equal(self.next_state, other.next_state)
            and self.done == other.done
            and self.return_to_go == other.return_to_go
        )


@dataclass
class Batch:
    """Column-stacked transitions; ``returns`` is NaN where no return-to-go is known."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    returns: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)

    @classmethod
    def from_transitions(cls, transitions: Sequence[Transition]) -> "Batch":
        return cls(
            states=np.array([t.state for t in transitions], dtype=np.float64),
            actions=np.array([t.action for t in transitions], dtype=np.float64),
            rewards=np.array([t.reward for t in transitions], dtype=np.float64),
            next_states=np.array([t.next_state for t in transitions], dtype=np.float64),
            dones=np.array([float(t.done) for t in transitions], dtype=np.float64),
            returns=np.array(
                [np.nan if t.return_to_go is None else t.return_to_go for t in transitions],
                dtype=np.float64,
            ),
        )


def compute_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


class ReplayBuffer:
    """Fixed-capacity FIFO store with uniform sampling (with replacement).

    Storage is preallocated per field once the first transition reveals the
    dimensions.
    """

    def __init__(self, capacity: int = 1_000_000, seed: int | None = None, frozen: bool = False):
        if capacity <= 0:
            raise ConfigError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.rng = np.random.default_rng(seed)
        self.frozen = frozen
        self._size = 0
        self._next = 0
        self._arrays: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return self._size

    def _allocate(self, t: Transition) -> None:
        n = min(self.capacity, 4096)
        self._arrays = {
            "states": np.zeros((n, len(t.state))),
            "actions": np.zeros((n, len(t.action))),
            "rewards": np.zeros(n),
            "next_states": np.zeros((n, len(t.next_state))),
            "dones": np.zeros(n),
            "returns": np.full(n, np.nan),
        }

    def _grow(self) -> None:
        arrays = self._arrays
        old = len(arrays["rewards"])
        new = min(self.capacity, old * 2)
        for key, arr in arrays.items():
            fill = np.nan if key == "returns" else 0.0
            bigger = np.full((new,) + arr.shape[1:], fill)
            bigger[:old] = arr
            arrays[key] = bigger

    def push(self, t: Transition) -> None:
        if self.frozen:
            raise ContractError("this buffer is read-only (expert buffers do not accept pushes)")
        if self._arrays is None:
            self._allocate(t)
        arrays = self._arrays
        if self._next >= len(arrays["rewards"]) and len(arrays["rewards"]) < self.capacity:
            self._grow()
        i = self._next
        if len(t.state) != arrays["states"].shape[1] or len(t.action) != arrays["actions"].shape[1]:
            raise ValidationError("transition dimensions differ from the buffer's")
        arrays["states"][i] = t.state
        arrays["actions"][i] = t.action
        arrays["rewards"][i] = t.reward
        arrays["next_states"][i] = t.next_state
        arrays["dones"][i] = float(t.done)
        arrays["returns"][i] = np.nan if t.return_to_go is None else t.return_to_go
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, transitions: Sequence[Transition]) -> None:
        for t in transitions:
            self.push(t)

    def _ordered_indices(self) -> np.ndarray:
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self._size) + self._next) % self.capacity

    def transitions(self) -> list[Transition]:
        """Stored transitions, oldest first."""
        return [self._get(int(i)) for i in self._ordered_indices()]

    def _get(self, i: int) -> Transition:
        a = self._arrays
        ret = a["returns"][i]
        return Transition(
            state=a["states"][i].copy(),
            action=a["actions"][i].copy(),
            reward=float(a["rewards"][i]),
            next_state=a["next_states"][i].copy(),
            done=bool(a["dones"][i]),
            return_to_go=None if np.isnan(ret) else float(ret),
        )

    def sample_indices(self, batch_size: int, rng: np.random.Generator | None = None) -> np.ndarray:
        if self._size == 0:
            raise ContractError("cannot sample from an empty buffer")
        rng = rng if rng is not None else self.rng
        return rng.integers(0, self._size, size=batch_size)

    def gather(self, indices: np.ndarray) -> Batch:
        a = self._arrays
        return Batch(
            states=a["states"][indices],
            actions=a["actions"][indices],
            rewards=a["rewards"][indices],
            next_states=a["next_states"][indices],
            dones=a["dones"][indices],
            returns=a["returns"][indices],
        )

    def sample(self, batch_size: int, rng: np.random.Generator | None = None) -> Batch:
        return self.gather(self.sample_indices(batch_size, rng))

    def all(self) -> Batch:
        return self.gather(self._ordered_indices())


def with_returns(episode: Sequence[Transition], gamma: float) -> list[Transition]:
    returns = compute_returns([t.reward for t in episode], gamma)
    return [replace(t, return_to_go=g) for t, g in zip(episode, returns)]


def finalize_episode(buf: ReplayBuffer, episode: Sequence[Transition], gamma: float) -> None:
    """Fill in discounted returns-to-go backwards, then push the whole episode."""
    if not episode:
        return
    buf.extend(with_returns(episode, gamma))


def expert_buffer(episode: Sequence[Transition], gamma: float, seed: int | None = None) -> ReplayBuffer:
    if not episode:
        raise EmptyDemoError("a demonstration needs at least one transition")
    buf = ReplayBuffer(capacity=max(len(episode), 1), seed=seed)
    finalize_episode(buf, episode, gamma)
    buf.frozen = True
    return buf


# -- demonstration files -----------------------------------------------
#
# header:  sigent-demo 1 state_dim=<n> action_dim=<k> gamma=<g>
# record:  state<TAB>action<TAB>reward<TAB>next_state<TAB>done
# vectors are comma separated; floats use repr(), which round-trips float64.


def _fmt_vec(v) -> str:
    return ",".join(repr(float(x)) for x in v)


@dataclass
class Demo:
    transitions: list[Transition]
    state_dim: int
    action_dim: int
    gamma: float

    def __len__(self) -> int:
        return len(self.transitions)


def save_demo(
    episode: Sequence[Transition], path: str | Path, gamma: float = 0.99
) -> None:
    if not episode:
        raise EmptyDemoError("refusing to write an empty demonstration")
    state_dim, action_dim = len(episode[0].state), len(episode[0].action)
    lines = [f"{DEMO_MAGIC} {DEMO_VERSION} state_dim={state_dim} action_dim={action_dim} gamma={gamma!r}"]
    for t in episode:
        lines.append(
            "\t".join(
                [
                    _fmt_vec(t.state),
                    _fmt_vec(t.action),
                    repr(float(t.reward)),
                    _fmt_vec(t.next_state),
                    "1" if t.done else "0",
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_vec(text: str, dim: int, what: str, line: int) -> np.ndarray:
    try:
        vec = np.array([float(x) for x in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise DemoFormatError(f"bad number in {what}: {exc}", line) from None
    if len(vec) != dim:
        raise DemoFormatError(f"{what} has {len(vec)} components, header says {dim}", line)
    if not np.all(np.isfinite(vec)):
        raise DemoFormatError(f"non-finite value in {what}", line)
    return vec


def _parse_header(text: str) -> tuple[int, int, float]:
    parts = text.split()
    if len(parts) < 2 or parts[0] != DEMO_MAGIC:
        raise DemoFormatError(f"missing '{DEMO_MAGIC}' header", 1)
    if parts[1] != str(DEMO_VERSION):
        raise DemoFormatError(f"unsupported demo version {parts[1]}", 1)
    fields = {}
    for item in parts[2:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise DemoFormatError(f"malformed header field {item!r}", 1)
        fields[key] = value
    try:
        return int(fields["state_dim"]), int(fields["action_dim"]), float(fields["gamma"])
    except (KeyError, ValueError) as exc:
        raise DemoFormatError(f"header field problem: {exc}", 1) from None


def read_demo(path: str | Path) -> Demo:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise EmptyDemoError("demonstration file is empty")
    state_dim, action_dim, gamma = _parse_header(lines[0])
    episode = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        cols = raw.split("\t")
        if len(cols) != 5:
            raise DemoFormatError(f"expected 5 tab-separated fields, got {len(cols)}", lineno)
        state = _parse_vec(cols[0], state_dim, "state", lineno)
        action = _parse_vec(cols[1], action_dim, "action", lineno)
        next_state = _parse_vec(cols[3], state_dim, "next_state", lineno)
        try:
            reward = float(cols[2])
        except ValueError:
            raise DemoFormatError(f"bad reward {cols[2]!r}", lineno) from None
        if cols[4] not in ("0", "1"):
            raise DemoFormatError(f"done flag must be 0 or 1, got {cols[4]!r}", lineno)
        if np.any(np.abs(action) > 1.0):
            raise ValidationError(f"line {lineno}: action component outside [-1, 1]: {action}")
        episode.append(Transition(state, action, reward, next_state, cols[4] == "1"))
    if not episode:
        raise EmptyDemoError("demonstration holds no transitions")
    return Demo(episode, state_dim, action_dim, gamma)


def load_demo(
    path: str | Path,
    state_dim: int | None = None,
    action_dim: int | None = None,
    seed: int | None = None,
) -> ReplayBuffer:
    """Read a demonstration into a read-only expert buffer.

    Passing the environment's dimensions turns a mismatch into a
    :class:`ValidationError`.
    """
    demo = read_demo(path)
    if state_dim is not None and demo.state_dim != state_dim:
        raise ValidationError(f"demo state_dim {demo.state_dim} != environment's {state_dim}")
    if action_dim is not None and demo.action_dim != action_dim:
        raise ValidationError(f"demo action_dim {demo.action_dim} != environment's {action_dim}")
    return expert_buffer(demo.transitions, demo.gamma, seed=seed)


# -- demonstration degradation ------------------------------------------


def drop_transitions(episode: Sequence[Transition], rate: float, rng: np.random.Generator) -> list[Transition]:
    """Keep each transition with probability ``1 - rate`` (at least one survives)."""
    keep = rng.random(len(episode)) >= rate
    if not keep.any():
        keep[rng.integers(len(episode))] = True
    return [t for t, k in zip(episode, keep) if k]


def noisy_actions(episode: Sequence[Transition], sigma: float, rng: np.random.Generator) -> list[Transition]:
    out = []
    for t in episode:
        a = t.action + sigma * rng.standard_normal(t.action.shape)
        out.append(replace(t, action=np.clip(a, -ACTION_CLAMP, ACTION_CLAMP)))
    return out


def noisy_states(episode: Sequence[Transition], sigma: float, rng: np.random.Generator) -> list[Transition]:
    """Perturb each observed state once, keeping ``next_state`` of step k equal to ``state`` of k+1."""
    states = [t.state for t in episode] + [episode[-1].next_state]
    noisy = [s + sigma * rng.standard_normal(s.shape) for s in states]
    return [replace(t, state=noisy[i], next_state=noisy[i + 1]) for i, t in enumerate(episode)]


DEGRADATIONS = {
    "drop": lambda ep, rng: drop_transitions(ep, 0.5, rng),
    "action_noise": lambda ep, rng: noisy_actions(ep, 0.2, rng),
    "state_noise": lambda ep, rng: noisy_states(ep, 0.2, rng),
}


def degrade(episode: Sequence[Transition], kind: str, rng: np.random.Generator) -> list[Transition]:
    try:
        fn = DEGRADATIONS[kind]
    except KeyError:
        raise ConfigError(f"unknown degradation {kind!r}; choose from {sorted(DEGRADATIONS)}") from None
    return fn(list(episode), rng)
