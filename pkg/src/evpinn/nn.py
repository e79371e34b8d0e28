"""Dense feedforward networks, Adam, and the binary model format.

Binary layout (all integers uint32 little-endian, all reals float64
little-endian)::

    magic        b"EVPINN-MODEL-v1\\n"        (16 bytes)
    n_networks   uint32
    per network:
      n_sizes    uint32
      sizes      uint32 * n_sizes            input ... output
      acts       uint8 * (n_sizes - 1)       0 = identity, 1 = tanh
      seed       int64
      per layer k, in order:
        weights  float64 * sizes[k+1]*sizes[k]   row-major (out, in)
        biases   float64 * sizes[k+1]
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .autodiff import Tape, Var, tanh

MAGIC = b"EVPINN-MODEL-v1\n"
ACTIVATIONS = ("identity", "tanh")


@dataclass
class Network:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]
    seed: int = 0

    def __post_init__(self) -> None:
        self.sizes = tuple(int(s) for s in self.sizes)
        self.activations = tuple(self.activations)
        n = len(self.sizes) - 1
        if len(self.weights) != n or len(self.biases) != n or len(self.activations) != n:
            raise ValueError("weights, biases and activations must have one entry per layer")
        for k in range(n):
            if self.weights[k].shape != (self.sizes[k + 1], self.sizes[k]):
                raise ValueError(f"layer {k} weight shape {self.weights[k].shape} does not chain")
            if self.biases[k].shape != (self.sizes[k + 1],):
                raise ValueError(f"layer {k} bias shape {self.biases[k].shape} does not chain")
            if self.activations[k] not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activations[k]!r}")

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def parameters(self) -> list[np.ndarray]:
        """Weights and biases interleaved: W0, b0, W1, b1, ..."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        self.weights = [np.array(p, dtype=float) for p in params[0::2]]
        self.biases = [np.array(p, dtype=float) for p in params[1::2]]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> Network:
        return Network(
            self.sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activations,
            self.seed,
        )


def param_count(sizes: Sequence[int]) -> int:
    return sum(sizes[k + 1] * (sizes[k] + 1) for k in range(len(sizes) - 1))


def mlp_new(sizes: Sequence[int], activation: str = "tanh", seed: int = 0) -> Network:
    """Xavier-uniform weights, zero biases, identity output layer."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"invalid layer sizes {sizes}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    acts = (activation,) * (len(sizes) - 2) + ("identity",)
    return Network(sizes, weights, biases, acts, seed)


def lift_params(net: Network, tape: Tape) -> list[Var]:
    return [tape.lift(p) for p in net.parameters()]


def mlp_forward(net: Network, x, tape: Tape, params: Sequence[Var] | None = None) -> Var:
    """Forward pass recorded on ``tape``.

    ``x`` is one input vector ``(n_in,)`` or a batch ``(N, n_in)``; it may
    be an array or a Var.  ``params`` are the lifted weights from
    :func:`lift_params`; when omitted they are lifted here.
    """
    if params is None:
        params = lift_params(net, tape)
    width = np.shape(x.value if isinstance(x, Var) else x)[-1]
    if width != net.sizes[0]:
        raise ValueError(f"input width {width} != network input size {net.sizes[0]}")
    h = x if isinstance(x, Var) else tape.const(np.asarray(x, dtype=float))
    for k in range(net.n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        h = h @ w.T + b
        if net.activations[k] == "tanh":
            h = tanh(h)
    return h


def mlp_apply(net: Network, x: np.ndarray) -> np.ndarray:
    """Tape-free forward pass, for inference."""
    h = np.asarray(x, dtype=float)
    if h.shape[-1] != net.sizes[0]:
        raise ValueError(f"input width {h.shape[-1]} != network input size {net.sizes[0]}")
    for w, b, act in zip(net.weights, net.biases, net.activations):
        h = h @ w.T + b
        if act == "tanh":
            h = np.tanh(h)
    return h


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], **kw) -> AdamState:
        return cls(
            [np.zeros_like(np.asarray(p, dtype=float)) for p in params],
            [np.zeros_like(np.asarray(p, dtype=float)) for p in params],
            **kw,
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update. ``state`` is updated in place."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state do not match")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g, dtype=float)
        if np.shape(g) != np.shape(p):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out, state


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g))) for g in grads)))


def clip_by_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm:
        return [np.asarray(g, dtype=float) for g in grads]
    scale = max_norm / norm
    return [np.asarray(g, dtype=float) * scale for g in grads]


@dataclass
class ParamGroup:
    """Parameters sharing one learning rate and one Adam state."""

    name: str
    params: list[np.ndarray]
    lr: float
    state: AdamState = field(init=False)

    def __post_init__(self) -> None:
        self.params = [np.array(p, dtype=float) for p in self.params]
        self.state = AdamState.zeros_like(self.params)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.params, self.state = adam_step(self.params, grads, self.state, self.lr)


def step_groups(groups: Sequence[ParamGroup], grads: Sequence[Sequence[np.ndarray]],
                clip_norm: float | None) -> None:
    """Clip jointly over all groups, then take one Adam step per group."""
    flat = [g for gs in grads for g in gs]
    if clip_norm:
        flat = clip_by_global_norm(flat, clip_norm)
    i = 0
    for group in groups:
        n = len(group.params)
        group.step(flat[i:i + n])
        i += n


# -- serialization -----------------------------------------------------------

def write_networks(stream: BinaryIO, nets: Sequence[Network]) -> None:
    stream.write(MAGIC)
    stream.write(struct.pack("<I", len(nets)))
    for net in nets:
        stream.write(struct.pack("<I", len(net.sizes)))
        stream.write(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
        codes = [ACTIVATIONS.index(a) for a in net.activations]
        stream.write(struct.pack(f"<{len(codes)}B", *codes))
        stream.write(struct.pack("<q", int(net.seed)))
        for w, b in zip(net.weights, net.biases):
            stream.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            stream.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise ValueError("truncated model file")
    return data


def read_networks(stream: BinaryIO) -> list[Network]:
    if _read_exact(stream, len(MAGIC)) != MAGIC:
        raise ValueError("not an EVPINN-MODEL-v1 file")
    (count,) = struct.unpack("<I", _read_exact(stream, 4))
    nets = []
    for _ in range(count):
        (n_sizes,) = struct.unpack("<I", _read_exact(stream, 4))
        sizes = struct.unpack(f"<{n_sizes}I", _read_exact(stream, 4 * n_sizes))
        codes = struct.unpack(f"<{n_sizes - 1}B", _read_exact(stream, n_sizes - 1))
        (seed,) = struct.unpack("<q", _read_exact(stream, 8))
        weights, biases = [], []
        for k in range(n_sizes - 1):
            rows, cols = sizes[k + 1], sizes[k]
            w = np.frombuffer(_read_exact(stream, 8 * rows * cols), dtype="<f8")
            b = np.frombuffer(_read_exact(stream, 8 * rows), dtype="<f8")
            weights.append(w.reshape(rows, cols).astype(float))
            biases.append(b.astype(float))
        nets.append(Network(sizes, weights, biases, tuple(ACTIVATIONS[c] for c in codes), seed))
    if stream.read(1):
        raise ValueError("trailing bytes after model data")
    return nets


def save_networks(path, nets: Sequence[Network]) -> None:
    with open(path, "wb") as fh:
        write_networks(fh, nets)


def load_networks(path) -> list[Network]:
    with open(path, "rb") as fh:
        return read_networks(fh)
