"""Layers, initialization, optimizers and the binary checkpoint format."""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError, LoadError

ACTIVATIONS = ("tanh", "relu", "none")

CHECKPOINT_MAGIC = b"DSR1"
CHECKPOINT_VERSION = 1


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(dims: Sequence[int], seed) -> list[tuple[np.ndarray, np.ndarray]]:
    """Glorot-uniform weights and zero biases for a chain of affine layers.

    ``dims = [d0, d1, ..., dk]`` yields ``k`` pairs ``(W[d_i x d_{i+1}], b[d_{i+1}])``.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ConfigError(f"need at least input and output dims, got {dims}")
    if any(d <= 0 for d in dims):
        raise ConfigError(f"layer dims must be positive, got {dims}")
    rng = _as_rng(seed)
    out = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = glorot_limit(fan_in, fan_out)
        out.append((rng.uniform(-lim, lim, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return out


class Linear:
    def __init__(self, weight: np.ndarray, bias: np.ndarray, name: str):
        self.weight = Tensor(weight, requires_grad=True, name=f"{name}.weight")
        self.bias = Tensor(bias, requires_grad=True, name=f"{name}.bias")
        self.name = name

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.weight), self.bias)

    def parameters(self) -> list[Tensor]:
        return [self.weight, self.bias]


def _activate(x: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return ad.tanh(x)
    if kind == "relu":
        return ad.relu(x)
    if kind == "softmax":
        return ad.softmax_rows(x)
    return x


class Mlp:
    """Stack of affine layers.

    ``activation`` is applied between layers; ``output_activation`` after the
    last one (``"none"``, ``"softmax"``, or one of the hidden activations).
    """

    def __init__(self, layers: Sequence[Linear], activation: str = "tanh",
                 output_activation: str = "none"):
        if not layers:
            raise ConfigError("an Mlp needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ConfigError(f"layer {nxt.name} expects {nxt.in_dim} inputs, "
                                  f"previous layer gives {prev.out_dim}")
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        if output_activation not in ACTIVATIONS + ("softmax",):
            raise ConfigError(f"unknown output activation {output_activation!r}")
        self.layers = list(layers)
        self.activation = activation
        self.output_activation = output_activation

    @classmethod
    def build(cls, name: str, dims: Sequence[int], seed, activation: str = "tanh",
              output_activation: str = "none") -> "Mlp":
        layers = [Linear(w, b, f"{name}.{i}") for i, (w, b) in enumerate(init_params(dims, seed))]
        return cls(layers, activation, output_activation)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def __call__(self, x) -> Tensor:
        x = ad.as_tensor(x)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimensionError(f"{self.layers[0].name}: expected n x {self.in_dim} input, "
                                 f"got {x.shape}")
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = _activate(layer(x), self.activation if i < last else self.output_activation)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


class ParamStore(OrderedDict):
    """Ordered ``name -> Tensor`` registry; names are unique."""

    def register(self, tensor: Tensor, name: str | None = None) -> Tensor:
        name = name or tensor.name
        if not name:
            raise ConfigError("parameters need a name")
        if name in self:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self[name] = tensor
        return tensor

    def register_all(self, tensors: Iterable[Tensor]) -> None:
        for t in tensors:
            self.register(t)

    def arrays(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.items())

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        missing = [k for k in self if k not in arrays]
        if missing:
            raise LoadError(f"checkpoint lacks parameters {missing}")
        for k, t in self.items():
            a = np.asarray(arrays[k], dtype=np.float64)
            if a.shape != t.shape:
                group = k.split(".", 1)[0]
                raise LoadError(f"parameter group {group!r}: {k} has shape {a.shape} "
                                f"in checkpoint, model expects {t.shape}")
            t.data = a.copy()


# -- optimizers ----------------------------------------------------------


class Optimizer:
    def __init__(self, params: Mapping[str, Tensor], lr: float):
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = OrderedDict(params)
        self.lr = float(lr)
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        missing = [k for k in self.params if k not in grads]
        if missing:
            raise ContractError(f"missing gradients for {missing}")
        self.t += 1
        for name, p in self.params.items():
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise DimensionError(f"gradient for {name} has shape {g.shape}, "
                                     f"parameter is {p.shape}")
            p.data = p.data - self._update(name, g)

    def _update(self, name: str, g: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class SGD(Optimizer):
    """Heavy-ball momentum: ``v <- mu v + g``, ``p <- p - lr v``."""

    kind = "sgd"

    def __init__(self, params, lr: float, momentum: float = 0.9):
        super().__init__(params, lr)
        self.momentum = float(momentum)
        self.velocity = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def _update(self, name, g):
        v = self.momentum * self.velocity[name] + g
        self.velocity[name] = v
        return self.lr * v


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def _update(self, name, g):
        b1, b2 = self.beta1, self.beta2
        m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
        v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** self.t)
        v_hat = v / (1.0 - b2 ** self.t)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, params: Mapping[str, Tensor], lr: float) -> Optimizer:
    if kind == "adam":
        return Adam(params, lr)
    if kind in ("sgd", "sgd-momentum"):
        return SGD(params, lr)
    raise ConfigError(f"unknown optimizer {kind!r}")


# -- checkpoints ---------------------------------------------------------
#
# "DSR1" | u32 version | records until EOF, each:
#   u32 name_len | name utf-8 | u32 rank | u32 dims[rank] | f64 payload (little endian)


def save_checkpoint(path, arrays: Mapping[str, np.ndarray]) -> Path:
    path = Path(path)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise LoadError(f"cannot read checkpoint {path}: {exc}") from exc
    if buf[:4] != CHECKPOINT_MAGIC:
        raise LoadError(f"{path}: not a DSR1 checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise LoadError(f"{path}: unsupported checkpoint version {version}")
    pos = 8
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            nbytes = 8 * count
            if pos + nbytes > len(buf):
                raise LoadError(f"{path}: truncated payload for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).reshape(dims).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise LoadError(f"{path}: truncated checkpoint") from exc
    return out
