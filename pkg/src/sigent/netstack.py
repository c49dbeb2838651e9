"""Multilayer perceptrons, an Adam optimizer and parameter files.

Networks keep their parameters as leaf :class:`~sigent.autodiff.Tensor`
objects so the same instance serves both graph-building forward passes
(for losses) and plain numpy inference via :meth:`Mlp.predict`.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from sigent import autodiff as ad
from sigent.autodiff import Tensor
from sigent.errors import CheckpointFormatError, NumericalError, StructuralError

ACTIVATIONS = ("relu", "tanh")

MAGIC = b"SGNT"
FORMAT_VERSION = 1


class Mlp:
    """Affine layers with a hidden activation; the output layer is linear."""

    def __init__(
        self,
        layer_sizes: Sequence[int],
        hidden_activation: str = "relu",
        rng: np.random.Generator | None = None,
        output_scale: float = 1.0,
    ):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2 or any(n <= 0 for n in layer_sizes):
            raise StructuralError(f"layer_sizes must hold >= 2 positive widths, got {layer_sizes}")
        if hidden_activation not in ACTIVATIONS:
            raise StructuralError(f"unknown activation {hidden_activation!r}")
        self.layer_sizes = layer_sizes
        self.hidden_activation = hidden_activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        n_layers = len(layer_sizes) - 1
        for k, (fan_in, fan_out) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            if k == n_layers - 1:
                w, b = w * output_scale, b * output_scale
            self.weights.append(Tensor(w, requires_grad=True, name=f"layers[{k}].weight"))
            self.biases.append(Tensor(b, requires_grad=True, name=f"layers[{k}].bias"))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def parameter_names(self) -> list[str]:
        return [p.name for p in self.parameters()]

    def _check_input(self, width: int) -> None:
        if width != self.in_dim:
            raise StructuralError(f"input width {width} does not match network input {self.in_dim}")

    def __call__(self, x, frozen: bool = False) -> Tensor:
        """Graph-building forward pass.

        With ``frozen=True`` the parameters enter the graph as constants, so
        gradients reach ``x`` but never the weights.
        """
        x = ad.as_tensor(x)
        self._check_input(x.shape[-1])
        act = ad.relu if self.hidden_activation == "relu" else ad.tanh
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if frozen:
                w, b = Tensor(w.data), Tensor(b.data)
            x = ad.linear(x, w, b)
            if k < last:
                x = act(x)
        return x

    def predict(self, x) -> np.ndarray:
        """Numpy-only forward pass, no graph."""
        x = np.asarray(x, dtype=np.float64)
        self._check_input(x.shape[-1])
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w.data.T + b.data
            if k < last:
                x = np.maximum(x, 0.0) if self.hidden_activation == "relu" else np.tanh(x)
        return x

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layer_sizes = list(self.layer_sizes)
        clone.hidden_activation = self.hidden_activation
        clone.weights = [Tensor(w.data.copy(), True, name=w.name) for w in self.weights]
        clone.biases = [Tensor(b.data.copy(), True, name=b.name) for b in self.biases]
        return clone

    def same_architecture(self, other: "Mlp") -> bool:
        return (
            self.layer_sizes == other.layer_sizes
            and self.hidden_activation == other.hidden_activation
        )

    def assert_finite(self) -> None:
        for p in self.parameters():
            if not np.all(np.isfinite(p.data)):
                raise NumericalError(f"non-finite values in {p.name}")

    def parameter_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.data**2)) for p in self.parameters())))


def forward(net: Mlp, x) -> np.ndarray:
    return net.predict(x)


def backward(net: Mlp, loss: Tensor) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to every parameter of ``net``.

    Order matches :meth:`Mlp.parameters`.
    """
    return ad.grad(loss, net.parameters())


@dataclass
class OptimizerState:
    """Adam moments for one network."""

    first_moments: list[np.ndarray]
    second_moments: list[np.ndarray]
    learning_rate: float = 3e-4
    moment_decays: tuple[float, float] = (0.9, 0.999)
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_net(cls, net: Mlp, learning_rate: float = 3e-4, **kwargs) -> "OptimizerState":
        return cls.for_shapes([p.shape for p in net.parameters()], learning_rate, **kwargs)

    @classmethod
    def for_shapes(cls, shapes: Iterable[tuple[int, ...]], learning_rate: float = 3e-4, **kwargs):
        shapes = list(shapes)
        return cls(
            first_moments=[np.zeros(s) for s in shapes],
            second_moments=[np.zeros(s) for s in shapes],
            learning_rate=learning_rate,
            **kwargs,
        )


def adam_step(
    params: Sequence[Tensor], grads: Sequence[np.ndarray], opt: OptimizerState
) -> None:
    """One bias-corrected Adam step, in place on ``params`` and ``opt``."""
    if len(grads) != len(params):
        raise StructuralError(f"got {len(grads)} gradients for {len(params)} parameters")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or opt.first_moments[i].shape != p.shape:
            raise StructuralError(f"gradient shape {g.shape} does not match {p.name or i} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {p.name or f'param[{i}]'}")
    b1, b2 = opt.moment_decays
    opt.step_count += 1
    t = opt.step_count
    lr_t = opt.learning_rate * np.sqrt(1.0 - b2**t) / (1.0 - b1**t)
    for p, g, m, v in zip(params, grads, opt.first_moments, opt.second_moments):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        # epsilon is applied to the bias-corrected second moment
        p.data -= lr_t * m / (np.sqrt(v) + opt.epsilon * np.sqrt(1.0 - b2**t))


def apply_update(net: Mlp, grads: Sequence[np.ndarray], opt: OptimizerState) -> tuple[Mlp, OptimizerState]:
    adam_step(net.parameters(), grads, opt)
    return net, opt


def soft_update(target: Mlp, online: Mlp, tau: float) -> Mlp:
    """Polyak mixing: target <- tau * online + (1 - tau) * target, in place."""
    if not target.same_architecture(online):
        raise StructuralError(
            f"architecture mismatch: {target.layer_sizes} vs {online.layer_sizes}"
        )
    if not 0.0 <= tau <= 1.0:
        raise StructuralError(f"tau must lie in [0, 1], got {tau}")
    for t, o in zip(target.parameters(), online.parameters()):
        t.data = tau * o.data + (1.0 - tau) * t.data
    return target


def hard_update(target: Mlp, online: Mlp) -> Mlp:
    return soft_update(target, online, 1.0)


# -- parameter files ---------------------------------------------------
#
# layout (little-endian):
#   "SGNT" | u32 version | u32 layer count | u32 activation index
#   per layer: u32 out | u32 in | out*in f64 weights (row-major) | out f64 biases


def write_params(net: Mlp, fh: BinaryIO) -> None:
    n_layers = len(net.weights)
    fh.write(MAGIC)
    fh.write(struct.pack("<III", FORMAT_VERSION, n_layers, ACTIVATIONS.index(net.hidden_activation)))
    for w, b in zip(net.weights, net.biases):
        out_dim, in_dim = w.shape
        fh.write(struct.pack("<II", out_dim, in_dim))
        fh.write(np.ascontiguousarray(w.data, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(b.data, dtype="<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise CheckpointFormatError(f"truncated parameter file while reading {what}")
    return buf


def read_params(fh: BinaryIO) -> Mlp:
    magic = fh.read(4)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, n_layers, act_index = struct.unpack("<III", _read_exact(fh, 12, "header"))
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"unsupported parameter format version {version} (this build reads {FORMAT_VERSION})"
        )
    if n_layers < 1 or act_index >= len(ACTIVATIONS):
        raise CheckpointFormatError("corrupt header")
    weights, biases = [], []
    for k in range(n_layers):
        out_dim, in_dim = struct.unpack("<II", _read_exact(fh, 8, f"layer {k} dims"))
        w = np.frombuffer(_read_exact(fh, 8 * out_dim * in_dim, f"layer {k} weights"), dtype="<f8")
        b = np.frombuffer(_read_exact(fh, 8 * out_dim, f"layer {k} biases"), dtype="<f8")
        weights.append(w.reshape(out_dim, in_dim).astype(np.float64))
        biases.append(b.astype(np.float64))
    sizes = [weights[0].shape[1]] + [w.shape[0] for w in weights]
    for k in range(1, n_layers):
        if weights[k].shape[1] != weights[k - 1].shape[0]:
            raise CheckpointFormatError(f"layer {k} input width does not chain")
    net = Mlp.__new__(Mlp)
    net.layer_sizes = sizes
    net.hidden_activation = ACTIVATIONS[act_index]
    net.weights = [Tensor(w, True, name=f"layers[{k}].weight") for k, w in enumerate(weights)]
    net.biases = [Tensor(b, True, name=f"layers[{k}].bias") for k, b in enumerate(biases)]
    return net


def save_params(net: Mlp, path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_params(net, fh)


def load_params(path: str | Path) -> Mlp:
    with open(path, "rb") as fh:
        net = read_params(fh)
        if fh.read(1):
            raise CheckpointFormatError(f"trailing bytes after parameters in {path}")
    return net
