"""Deep MLP regressor from joint image-text embeddings to head-model
parameters, with native reverse-mode gradients, Adam, and patience-based
early stopping. Training math is float64 end to end; the weights file
stores float32 tensors.
"""
from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .morphable import ParamVector


class RegressorError(ValueError):
    """Bad shapes, corrupt weight files, diverged training."""


@dataclass(frozen=True)
class DimsProfile:
    """Output layout of the regressor: identity, expression, pose (axis-angle
    triples for `pose_joints` joints), detail code. Defaults follow the
    6-dof global+jaw convention."""

    n_shape: int = 100
    n_expression: int = 50
    pose_joints: int = 2
    n_detail: int = 128

    @property
    def pose_dims(self) -> int:
        return 3 * self.pose_joints

    @property
    def total(self) -> int:
        return self.n_shape + self.n_expression + self.pose_dims + self.n_detail

    def group_sizes(self) -> list[tuple[str, int]]:
        return [("beta", self.n_shape), ("psi", self.n_expression),
                ("theta", self.pose_dims), ("delta", self.n_detail)]

    def split(self, flat: np.ndarray) -> ParamVector:
        if flat.shape != (self.total,):
            raise RegressorError(f"parameter vector length {flat.shape} != ({self.total},)")
        s, e, p = self.n_shape, self.n_expression, self.pose_dims
        return ParamVector(beta=flat[:s].copy(), psi=flat[s:s + e].copy(),
                           theta=flat[s + e:s + e + p].copy(),
                           delta=flat[s + e + p:].copy())


DEFAULT_PROFILE = DimsProfile()

LEAKY_SLOPE = 0.01


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray    # (out,)
    activation: str     # "leaky_relu" | "linear"


@dataclass
class NormStats:
    """Per-dimension target mean/std from the train split, plus the
    embedding-normalization flag; saved alongside the weights."""

    mean: np.ndarray
    std: np.ndarray
    normalize_embeddings: bool = True
    clamped_dims: list[int] = field(default_factory=list)


@dataclass
class MlpWeights:
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def architecture(self) -> str:
        dims = [self.input_dim] + [l.weight.shape[0] for l in self.layers]
        return "-".join(str(d) for d in dims)

    def copy(self) -> "MlpWeights":
        return MlpWeights([Layer(l.weight.copy(), l.bias.copy(), l.activation)
                           for l in self.layers])

    def validate(self) -> None:
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise RegressorError("layer dimensions do not chain")
        if self.layers[-1].activation != "linear":
            raise RegressorError("final layer activation must be linear")


def parse_architecture(spec: str) -> list[int]:
    """'768-1024-1024-512-284' -> layer widths including input and output."""
    try:
        dims = [int(tok) for tok in spec.split("-")]
    except ValueError:
        raise RegressorError(f"bad architecture string {spec!r}")
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise RegressorError(f"bad architecture string {spec!r}")
    return dims


def init_weights(architecture: str, seed: int = 42) -> MlpWeights:
    """Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    dims = parse_architecture(architecture)
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        act = "linear" if i == len(dims) - 2 else "leaky_relu"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return MlpWeights(layers)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "linear":
        return z
    if activation == "leaky_relu":
        return np.where(z >= 0, z, LEAKY_SLOPE * z)
    raise RegressorError(f"unknown activation {activation!r}")


def _activate_grad(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "linear":
        return np.ones_like(z)
    if activation == "leaky_relu":
        return np.where(z >= 0, 1.0, LEAKY_SLOPE)
    raise RegressorError(f"unknown activation {activation!r}")


def forward_batch(weights: MlpWeights, x: np.ndarray) -> np.ndarray:
    """x: (B, E) -> (B, output_dim)."""
    a = np.asarray(x, dtype=np.float64)
    if a.shape[1] != weights.input_dim:
        raise RegressorError(f"input dim {a.shape[1]} != {weights.input_dim}")
    for layer in weights.layers:
        a = _activate(a @ layer.weight.T + layer.bias, layer.activation)
    return a


def forward(weights: MlpWeights, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise RegressorError("forward expects a single vector; use forward_batch")
    return forward_batch(weights, x[None, :])[0]


def loss(pred: np.ndarray, target: np.ndarray,
         group_sizes: list[tuple[str, int]] | None = None,
         group_weights: dict[str, float] | None = None) -> float:
    """Sum over groups of w_g * MSE over the group's slice. With no groups,
    plain MSE over the whole vector."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise RegressorError("pred/target length mismatch")
    if group_sizes is None:
        group_sizes = [("all", pred.shape[-1])]
    group_weights = group_weights or {}
    total = 0.0
    off = 0
    for name, size in group_sizes:
        if size == 0:
            continue
        sl = slice(off, off + size)
        diff = pred[..., sl] - target[..., sl]
        total += group_weights.get(name, 1.0) * float(np.mean(diff * diff))
        off += size
    return total


def _loss_grad(pred: np.ndarray, target: np.ndarray,
               group_sizes: list[tuple[str, int]],
               group_weights: dict[str, float]) -> np.ndarray:
    """d(loss)/d(pred) for batched pred (B, D); mean taken over the full
    group slice including the batch axis."""
    grad = np.zeros_like(pred)
    off = 0
    for name, size in group_sizes:
        if size == 0:
            continue
        sl = slice(off, off + size)
        n = pred[..., sl].size
        grad[..., sl] = 2.0 * group_weights.get(name, 1.0) * (pred[..., sl] - target[..., sl]) / n
        off += size
    return grad


@dataclass
class Gradients:
    d_weight: list[np.ndarray]
    d_bias: list[np.ndarray]


def backward(weights: MlpWeights, x: np.ndarray, target: np.ndarray,
             group_sizes: list[tuple[str, int]] | None = None,
             group_weights: dict[str, float] | None = None) -> Gradients:
    """Exact reverse-mode gradients of `loss` w.r.t. every weight and bias.
    Accepts a single vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if x.ndim == 1:
        x, target = x[None, :], target[None, :]
    if group_sizes is None:
        group_sizes = [("all", target.shape[1])]
    group_weights = group_weights or {}

    activations = [x]
    pre = []
    a = x
    for layer in weights.layers:
        z = a @ layer.weight.T + layer.bias
        pre.append(z)
        a = _activate(z, layer.activation)
        activations.append(a)

    delta = _loss_grad(a, target, group_sizes, group_weights)
    d_w = [None] * len(weights.layers)
    d_b = [None] * len(weights.layers)
    for i in range(len(weights.layers) - 1, -1, -1):
        layer = weights.layers[i]
        dz = delta * _activate_grad(pre[i], layer.activation)
        d_w[i] = dz.T @ activations[i]
        d_b[i] = dz.sum(axis=0)
        if i:
            delta = dz @ layer.weight
    return Gradients(d_w, d_b)


@dataclass
class AdamState:
    m_weight: list[np.ndarray]
    v_weight: list[np.ndarray]
    m_bias: list[np.ndarray]
    v_bias: list[np.ndarray]
    step: int = 0

    @staticmethod
    def zeros_like(weights: MlpWeights) -> "AdamState":
        return AdamState(
            m_weight=[np.zeros_like(l.weight) for l in weights.layers],
            v_weight=[np.zeros_like(l.weight) for l in weights.layers],
            m_bias=[np.zeros_like(l.bias) for l in weights.layers],
            v_bias=[np.zeros_like(l.bias) for l in weights.layers],
        )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 42
    validation_fraction: float = 0.1
    group_weights: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.patience > self.max_epochs:
            raise RegressorError("patience must be <= max_epochs")
        if not 0.0 < self.validation_fraction < 1.0:
            raise RegressorError("validation_fraction must be in (0, 1)")


def adam_step(weights: MlpWeights, state: AdamState, grads: Gradients,
              config: TrainConfig) -> None:
    """In-place bias-corrected Adam update; increments the step counter."""
    state.step += 1
    t = state.step
    b1, b2, eps, lr = config.beta1, config.beta2, config.epsilon, config.learning_rate
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, layer in enumerate(weights.layers):
        for param, grad, m, v in ((layer.weight, grads.d_weight[i], state.m_weight[i], state.v_weight[i]),
                                  (layer.bias, grads.d_bias[i], state.m_bias[i], state.v_bias[i])):
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class TrainReport:
    train_losses: list[float]
    val_losses: list[float]
    best_epoch: int          # 1-based
    stopped_epoch: int       # 1-based
    wall_time_s: float
    final_group_val_losses: dict[str, float]


def evaluate(weights: MlpWeights, x: np.ndarray, y: np.ndarray,
             group_sizes: list[tuple[str, int]] | None = None,
             group_weights: dict[str, float] | None = None) -> float:
    return loss(forward_batch(weights, x), y, group_sizes, group_weights)


def group_losses(weights: MlpWeights, x: np.ndarray, y: np.ndarray,
                 group_sizes: list[tuple[str, int]]) -> dict[str, float]:
    pred = forward_batch(weights, x)
    out = {}
    off = 0
    for name, size in group_sizes:
        sl = slice(off, off + size)
        diff = pred[:, sl] - y[:, sl]
        out[name] = float(np.mean(diff * diff)) if size else 0.0
        off += size
    return out


def train(weights: MlpWeights, train_x: np.ndarray, train_y: np.ndarray,
          val_x: np.ndarray, val_y: np.ndarray, config: TrainConfig,
          group_sizes: list[tuple[str, int]] | None = None) -> tuple[MlpWeights, TrainReport]:
    """Mini-batch Adam over seeded shuffled batches; per-epoch validation;
    stop after `patience` epochs without improvement; best-epoch weights
    restored. Bit-deterministic for a fixed seed."""
    if len(train_x) == 0 or len(val_x) == 0:
        raise RegressorError("train and validation splits must be non-empty")
    start = time.monotonic()
    weights = weights.copy()
    state = AdamState.zeros_like(weights)
    rng = np.random.default_rng(config.seed)
    gw = config.group_weights

    train_losses: list[float] = []
    val_losses: list[float] = []
    best_val = np.inf
    best_epoch = 0
    best_weights = weights.copy()
    stopped_epoch = 0

    n = len(train_x)
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            bx, by = train_x[idx], train_y[idx]
            pred = forward_batch(weights, bx)
            batch_loss = loss(pred, by, group_sizes, gw)
            if not np.isfinite(batch_loss):
                raise RegressorError(
                    f"training diverged: non-finite loss at epoch {epoch}")
            epoch_loss += batch_loss * len(idx)
            grads = backward(weights, bx, by, group_sizes, gw)
            adam_step(weights, state, grads, config)
        train_losses.append(epoch_loss / n)
        val = evaluate(weights, val_x, val_y, group_sizes, gw)
        val_losses.append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_weights = weights.copy()
        stopped_epoch = epoch
        if epoch - best_epoch >= config.patience:
            break

    report = TrainReport(
        train_losses=train_losses,
        val_losses=val_losses,
        best_epoch=best_epoch,
        stopped_epoch=stopped_epoch,
        wall_time_s=time.monotonic() - start,
        final_group_val_losses=group_losses(
            best_weights, val_x, val_y,
            group_sizes or [("all", train_y.shape[1])]),
    )
    return best_weights, report


def normalize_embedding(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norm, out=x.copy(), where=norm > 0)


def regress_params(weights: MlpWeights, embedding: np.ndarray,
                   profile: DimsProfile,
                   stats: NormStats | None = None) -> ParamVector:
    """Forward pass, inverse target-standardization when stats are attached,
    then slice into (beta, psi, theta, delta)."""
    if weights.output_dim != profile.total:
        raise RegressorError(
            f"weights output dim {weights.output_dim} != profile total {profile.total}")
    x = np.asarray(embedding, dtype=np.float64)
    if stats is not None and stats.normalize_embeddings:
        x = normalize_embedding(x)
    raw = forward(weights, x)
    if stats is not None:
        raw = raw * stats.std + stats.mean
    return profile.split(raw)


# ---------------------------------------------------------------------------
# Weights file: magic "T2FW", version u16, architecture string, stats block,
# f32 tensors, CRC32 footer.

WEIGHTS_MAGIC = b"T2FW"
WEIGHTS_VERSION = 1


def _pack_str(s: str) -> bytes:
    data = s.encode("utf-8")
    return struct.pack("<I", len(data)) + data


def save_weights(weights: MlpWeights, path: str | Path,
                 stats: NormStats | None = None) -> None:
    weights.validate()
    body = [struct.pack("<H", WEIGHTS_VERSION), _pack_str(weights.architecture)]
    if stats is None:
        body.append(struct.pack("<B", 0))
    else:
        body.append(struct.pack("<BB", 1, int(stats.normalize_embeddings)))
        body.append(struct.pack("<I", len(stats.mean)))
        body.append(stats.mean.astype("<f8").tobytes())
        body.append(stats.std.astype("<f8").tobytes())
        body.append(struct.pack("<I", len(stats.clamped_dims)))
        body.append(np.asarray(stats.clamped_dims, dtype="<u4").tobytes())
    body.append(struct.pack("<H", len(weights.layers)))
    for layer in weights.layers:
        body.append(_pack_str(layer.activation))
        body.append(layer.weight.astype("<f4").tobytes())
        body.append(layer.bias.astype("<f4").tobytes())
    blob = WEIGHTS_MAGIC + b"".join(body)
    crc = zlib.crc32(blob) & 0xFFFFFFFF
    Path(path).write_bytes(blob + struct.pack("<I", crc))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise RegressorError("unexpected end of weights file")
        out = self.buf[self.off:self.off + n]
        self.off += n
        return out

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def f32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float64)


def load_weights(path: str | Path,
                 expected_architecture: str | None = None
                 ) -> tuple[MlpWeights, NormStats | None]:
    buf = Path(path).read_bytes()
    if len(buf) < 10 or buf[:4] != WEIGHTS_MAGIC:
        raise RegressorError("not a weights file (bad magic)")
    stored_crc = struct.unpack("<I", buf[-4:])[0]
    if zlib.crc32(buf[:-4]) & 0xFFFFFFFF != stored_crc:
        raise RegressorError("weights file checksum failure")
    r = _Reader(buf[4:-4])
    version = r.u16()
    if version != WEIGHTS_VERSION:
        raise RegressorError(f"unsupported weights version {version}")
    architecture = r.string()
    if expected_architecture is not None and architecture != expected_architecture:
        raise RegressorError(
            f"architecture signature mismatch: file has {architecture!r}, "
            f"expected {expected_architecture!r}")
    stats = None
    if r.u8():
        normalize = bool(r.u8())
        dim = r.u32()
        mean = r.f64s(dim)
        std = r.f64s(dim)
        n_clamped = r.u32()
        clamped = list(np.frombuffer(r.take(4 * n_clamped), dtype="<u4"))
        stats = NormStats(mean=mean, std=std, normalize_embeddings=normalize,
                          clamped_dims=[int(c) for c in clamped])
    dims = parse_architecture(architecture)
    n_layers = r.u16()
    if n_layers != len(dims) - 1:
        raise RegressorError("layer count does not match architecture string")
    layers = []
    for i in range(n_layers):
        act = r.string()
        w = r.f32s(dims[i + 1] * dims[i]).reshape(dims[i + 1], dims[i])
        b = r.f32s(dims[i + 1])
        layers.append(Layer(w, b, act))
    if r.off != len(r.buf):
        raise RegressorError("trailing bytes in weights file")
    weights = MlpWeights(layers)
    weights.validate()
    return weights, stats
