"""Dense-network engine on numpy.

Multilayer perceptrons with ELU hidden layers and several linear output
heads, explicit reverse-mode gradients, the two losses the agents need and
an AdamW optimizer. Everything works on a leading batch axis; losses sum
over the feature axis and average over the batch.

Example:
    >>> arch = Architecture(4, (8, 8), (2,))
    >>> params = mlp_init(arch, np.random.default_rng(0))
    >>> (out,), cache = forward(params, np.zeros((3, 4)))
    >>> out.shape
    (3, 2)
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)


class NetworkError(Exception):
    """Base exception for network errors."""
    pass


class ShapeError(NetworkError, ValueError):
    """Raised when arrays do not match the architecture."""
    pass


class NonFiniteError(NetworkError, ArithmeticError):
    """Raised when inputs, losses or gradients contain NaN or infinity."""
    pass


@dataclass(frozen=True)
class Architecture:
    input_width: int
    hidden: tuple[int, ...]
    heads: tuple[int, ...]

    def __post_init__(self):
        widths = (self.input_width, *self.hidden, *self.heads)
        if not self.heads or any(w <= 0 for w in widths):
            raise ShapeError(f"all widths must be positive and at least one head given: {self}")

    @property
    def layer_widths(self) -> list[int]:
        return [self.input_width, *self.hidden, sum(self.heads)]


@dataclass
class MlpParams:
    """Weights and biases, one pair per layer; the last layer feeds all heads."""

    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        """Parameters in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @classmethod
    def from_arrays(cls, arch: Architecture, arrays: Sequence[np.ndarray]) -> "MlpParams":
        return cls(arch, list(arrays[0::2]), list(arrays[1::2]))

    def copy(self) -> "MlpParams":
        return MlpParams(self.arch, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams(self.arch, [np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def __add__(self, other: "MlpParams") -> "MlpParams":
        return MlpParams.from_arrays(self.arch, [a + b for a, b in zip(self.arrays(), other.arrays())])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    @property
    def dtype(self):
        return self.weights[0].dtype


@dataclass
class LossGrad:
    """Scalar loss and its gradient with respect to the predictions."""

    value: float
    grad: np.ndarray


def mlp_init(arch: Architecture, rng: np.random.Generator, dtype=np.float32) -> MlpParams:
    """
    Fan-in scaled uniform weights (variance 1/fan_in), zero biases.

    The result depends only on the architecture and the generator state.
    """
    widths = arch.layer_widths
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(arch, weights, biases)


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0))).astype(x.dtype)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    preactivations: list[np.ndarray] = field(default_factory=list)
    squeeze: bool = False


def _split_heads(out: np.ndarray, heads: Sequence[int]) -> list[np.ndarray]:
    return np.split(out, np.cumsum(heads)[:-1], axis=-1)


def forward(params: MlpParams, x: np.ndarray) -> tuple[list[np.ndarray], ForwardCache]:
    """
    Run the network on a batch (or a single vector).

    Args:
        params: Network parameters
        x: Input of shape (batch, input_width) or (input_width,)

    Returns:
        Tuple of (list of head outputs, cache for backward)

    Raises:
        ShapeError: If the input width does not match
        NonFiniteError: If the input contains NaN or infinity
    """
    x = np.asarray(x, dtype=params.dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.arch.input_width:
        raise ShapeError(f"input shape {x.shape} does not match input width {params.arch.input_width}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("network input contains non-finite values")
    cache = ForwardCache(squeeze=squeeze)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ w + b
        cache.preactivations.append(z)
        h = z if i == last else elu(z)
    heads = _split_heads(h, params.arch.heads)
    if squeeze:
        heads = [head[0] for head in heads]
    return heads, cache


def backward(params: MlpParams, cache: ForwardCache, head_grads: Sequence[np.ndarray]) -> MlpParams:
    """
    Gradient of a loss with respect to every parameter.

    Args:
        params: Parameters used in the forward pass
        cache: Cache returned by forward
        head_grads: dLoss/dOutput per head, shaped like the head outputs

    Returns:
        Gradient with the same structure as params

    Raises:
        ShapeError: If a head gradient does not match its head
    """
    if len(head_grads) != len(params.arch.heads):
        raise ShapeError(f"expected {len(params.arch.heads)} head gradients, got {len(head_grads)}")
    grads = []
    for g, width in zip(head_grads, params.arch.heads):
        g = np.asarray(g, dtype=params.dtype)
        if cache.squeeze:
            g = g[None, ...]
        if g.shape != (cache.inputs[0].shape[0], width):
            raise ShapeError(f"head gradient shape {g.shape} does not match head width {width}")
        grads.append(g)
    delta = np.concatenate(grads, axis=1)
    weights, biases = [None] * len(params.weights), [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        weights[i] = cache.inputs[i].T @ delta
        biases[i] = delta.sum(axis=0, dtype=np.float64).astype(params.dtype)
        if i > 0:
            delta = (delta @ params.weights[i].T) * elu_grad(cache.preactivations[i - 1])
    return MlpParams(params.arch, weights, biases)


def _as_batch(pred: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    pred = np.asarray(pred)
    target = np.asarray(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match target shape {target.shape}")
    batch = pred.shape[0] if pred.ndim > 0 else 1
    return pred, target, max(batch, 1)


def loss_mse(pred: np.ndarray, target: np.ndarray) -> LossGrad:
    """Squared error summed over features, averaged over the batch."""
    pred, target, batch = _as_batch(pred, target)
    diff = pred - target
    value = float(np.sum(diff.astype(np.float64) ** 2) / batch)
    return LossGrad(value, (2.0 * diff / batch).astype(pred.dtype))


def loss_bernoulli_logits(logits: np.ndarray, targets: np.ndarray) -> LossGrad:
    """
    Bernoulli negative log-likelihood from logits, summed over features and
    averaged over the batch. Stable for large |logit|.
    """
    logits, targets, batch = _as_batch(logits, targets)
    wide = logits.astype(np.float64)
    nll = np.maximum(wide, 0) - wide * targets + np.log1p(np.exp(-np.abs(wide)))
    grad = (sigmoid(logits) - targets) / batch
    return LossGrad(float(np.sum(nll) / batch), grad.astype(logits.dtype))


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0, -np.asarray(x)))


@dataclass
class AdamWState:
    """Moment accumulators and hyperparameters for one parameter set."""

    step_size: float
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-5
    weight_decay: float = 1e-6
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def adamw_init(params: MlpParams, step_size: float, beta1: float = 0.9, beta2: float = 0.99,
               eps: float = 1e-5, weight_decay: float = 1e-6) -> AdamWState:
    zeros = [np.zeros_like(a) for a in params.arrays()]
    return AdamWState(step_size, beta1, beta2, eps, weight_decay, zeros, [z.copy() for z in zeros], 0)


def adamw_step(params: MlpParams, grad: MlpParams, state: AdamWState) -> tuple[MlpParams, AdamWState]:
    """
    One AdamW update with bias-corrected moments and decoupled weight decay.

    Returns:
        Tuple of (new parameters, new optimizer state)

    Raises:
        ShapeError: If the gradient does not match the parameters
        NonFiniteError: If the gradient contains NaN or infinity
    """
    p_arrays, g_arrays = params.arrays(), grad.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ShapeError("gradient structure does not match parameters")
    for i, g in enumerate(g_arrays):
        if not np.all(np.isfinite(g)):
            layer, kind = divmod(i, 2)
            raise NonFiniteError(f"non-finite gradient in layer {layer} {'bias' if kind else 'weight'}")
    step = state.step + 1
    lr = state.step_size
    correction1 = 1.0 - state.beta1 ** step
    correction2 = 1.0 - state.beta2 ** step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        update = (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        new_p.append((p * (1.0 - lr * state.weight_decay) - lr * update).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamWState(lr, state.beta1, state.beta2, state.eps, state.weight_decay, new_m, new_v, step)
    return MlpParams.from_arrays(params.arch, new_p), new_state


def save_checkpoint(params: MlpParams, path: Union[str, Path]) -> Path:
    """
    Write parameters as little-endian float32 `.bin` with a `.json` shape manifest.

    Returns:
        Path of the binary file
    """
    path = Path(path)
    bin_path, manifest_path = path.with_suffix(".bin"), path.with_suffix(".json")
    arrays = params.arrays()
    flat = np.concatenate([a.astype("<f4").ravel() for a in arrays])
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(flat.tobytes())
    manifest = {
        "input_width": params.arch.input_width,
        "hidden": list(params.arch.hidden),
        "heads": list(params.arch.heads),
        "shapes": [list(a.shape) for a in arrays],
    }
    manifest_path.write_text(json.dumps(manifest, indent=2))
    logger.debug(f"Saved checkpoint {bin_path} ({flat.size} floats)")
    return bin_path


def load_checkpoint(path: Union[str, Path]) -> MlpParams:
    """
    Read parameters written by save_checkpoint.

    Raises:
        ShapeError: If the binary size disagrees with the manifest
    """
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    arch = Architecture(manifest["input_width"], tuple(manifest["hidden"]), tuple(manifest["heads"]))
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f4")
    shapes = [tuple(s) for s in manifest["shapes"]]
    expected = sum(int(np.prod(s)) for s in shapes)
    if flat.size != expected:
        raise ShapeError(f"{path}: manifest expects {expected} floats, file has {flat.size}")
    arrays, start = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        arrays.append(flat[start:start + size].reshape(shape).astype(np.float32))
        start += size
    params = MlpParams.from_arrays(arch, arrays)
    if [w.shape for w in params.weights] != list(zip(arch.layer_widths[:-1], arch.layer_widths[1:])):
        raise ShapeError(f"{path}: shapes do not chain for {arch}")
    return params
