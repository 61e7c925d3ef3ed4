"""Dense feedforward network with explicit backprop, Adam, and parameter I/O.

All arrays are float64.  Forward, backward, and the optimizer raise
`NonFiniteError` naming the offending layer as soon as a non-finite value
appears, so training never continues silently on NaNs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import Xoshiro256

HIDDEN_ACTIVATION = "relu"
OUTPUT_ACTIVATION = "identity"


class NonFiniteError(ArithmeticError):
    """A forward/backward/optimizer value left the finite range."""


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str  # "relu" or "identity"


@dataclass
class NetworkParams:
    layers: list[Layer]

    def layer_sizes(self) -> list[int]:
        return [self.layers[0].w.shape[1]] + [layer.w.shape[0] for layer in self.layers]

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [Layer(layer.w.copy(), layer.b.copy(), layer.activation) for layer in self.layers]
        )


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray]  # activation entering each layer; first is the input
    pre: list[np.ndarray]  # pre-activation of each layer
    batched: bool


@dataclass
class GradientSet:
    d_w: list[np.ndarray]
    d_b: list[np.ndarray]


@dataclass
class OptimizerState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int
    learning_rate: float
    beta1: float
    beta2: float
    epsilon: float


def init_network(layer_sizes, seed: int) -> NetworkParams:
    """Seeded init: w ~ U(+-sqrt(6 / (fan_in + fan_out))), biases zero.

    Hidden layers use the rectifier, the output layer is linear.
    """
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"init_network: need >= 2 positive layer sizes, got {layer_sizes!r}")
    rng = Xoshiro256(seed)
    layers = []
    last = len(sizes) - 2
    for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = np.empty((fan_out, fan_in))
        for i in range(fan_out):
            for j in range(fan_in):
                w[i, j] = rng.uniform(-bound, bound)
        layers.append(
            Layer(
                w=w,
                b=np.zeros(fan_out),
                activation=OUTPUT_ACTIVATION if k == last else HIDDEN_ACTIVATION,
            )
        )
    return NetworkParams(layers)


def forward(params: NetworkParams, x) -> tuple[np.ndarray, ForwardTrace]:
    """Evaluate the network on one input vector or a (batch, in) matrix.

    The trace keeps every layer's input and pre-activation for `backward`.
    """
    a = np.asarray(x, dtype=np.float64)
    if a.ndim not in (1, 2):
        raise ValueError(f"forward: input must be 1-D or 2-D, got shape {a.shape}")
    in_dim = params.layers[0].w.shape[1]
    if a.shape[-1] != in_dim:
        raise ValueError(f"forward: input width {a.shape[-1]} != first-layer width {in_dim}")
    trace = ForwardTrace(inputs=[], pre=[], batched=a.ndim == 2)
    for k, layer in enumerate(params.layers):
        trace.inputs.append(a)
        z = a @ layer.w.T + layer.b
        if not np.isfinite(z).all():
            raise NonFiniteError(f"forward: non-finite pre-activation in layer {k}")
        trace.pre.append(z)
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
    return a, trace


def backward(params: NetworkParams, trace: ForwardTrace, output_gradient) -> GradientSet:
    """Backpropagate d(loss)/d(output) to every weight and bias.

    For batched traces the supplied gradient has shape (batch, out) and the
    returned gradients are summed over the batch.  The rectifier uses
    subgradient 0 at exactly zero pre-activation.
    """
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != trace.pre[-1].shape:
        raise ValueError(f"backward: output gradient shape {g.shape} != {trace.pre[-1].shape}")
    n = len(params.layers)
    d_w: list[np.ndarray] = [np.empty(0)] * n
    d_b: list[np.ndarray] = [np.empty(0)] * n
    for k in range(n - 1, -1, -1):
        layer = params.layers[k]
        if layer.activation == "relu":
            g = g * (trace.pre[k] > 0.0)
        a_in = trace.inputs[k]
        if trace.batched:
            d_w[k] = g.T @ a_in
            d_b[k] = g.sum(axis=0)
        else:
            d_w[k] = np.outer(g, a_in)
            d_b[k] = g.copy()
        if not (np.isfinite(d_w[k]).all() and np.isfinite(d_b[k]).all()):
            raise NonFiniteError(f"backward: non-finite gradient in layer {k}")
        if k > 0:
            g = g @ layer.w
    return GradientSet(d_w=d_w, d_b=d_b)


def init_optimizer(
    params: NetworkParams,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> OptimizerState:
    return OptimizerState(
        m_w=[np.zeros_like(layer.w) for layer in params.layers],
        v_w=[np.zeros_like(layer.w) for layer in params.layers],
        m_b=[np.zeros_like(layer.b) for layer in params.layers],
        v_b=[np.zeros_like(layer.b) for layer in params.layers],
        step=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def optimizer_step(
    params: NetworkParams, grads: GradientSet, state: OptimizerState
) -> tuple[NetworkParams, OptimizerState]:
    """One adaptive-moment update with bias correction.

    Returns fresh parameter and state values; inputs are never mutated.
    """
    if len(grads.d_w) != len(params.layers):
        raise ValueError("optimizer_step: gradient/parameter layer count mismatch")
    for k, layer in enumerate(params.layers):
        if grads.d_w[k].shape != layer.w.shape or grads.d_b[k].shape != layer.b.shape:
            raise ValueError(f"optimizer_step: gradient shape mismatch in layer {k}")
        if not (np.isfinite(grads.d_w[k]).all() and np.isfinite(grads.d_b[k]).all()):
            raise NonFiniteError(f"optimizer_step: non-finite gradient in layer {k}")
    t = state.step + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    lr, b1, b2, eps = state.learning_rate, state.beta1, state.beta2, state.epsilon
    new_layers = []
    m_w, v_w, m_b, v_b = [], [], [], []
    for k, layer in enumerate(params.layers):
        mw = b1 * state.m_w[k] + (1.0 - b1) * grads.d_w[k]
        vw = b2 * state.v_w[k] + (1.0 - b2) * grads.d_w[k] ** 2
        mb = b1 * state.m_b[k] + (1.0 - b1) * grads.d_b[k]
        vb = b2 * state.v_b[k] + (1.0 - b2) * grads.d_b[k] ** 2
        w = layer.w - lr * (mw / c1) / (np.sqrt(vw / c2) + eps)
        b = layer.b - lr * (mb / c1) / (np.sqrt(vb / c2) + eps)
        new_layers.append(Layer(w, b, layer.activation))
        m_w.append(mw)
        v_w.append(vw)
        m_b.append(mb)
        v_b.append(vb)
    new_state = OptimizerState(
        m_w=m_w,
        v_w=v_w,
        m_b=m_b,
        v_b=v_b,
        step=t,
        learning_rate=lr,
        beta1=b1,
        beta2=b2,
        epsilon=eps,
    )
    return NetworkParams(new_layers), new_state


def gradient_check(params: NetworkParams, loss_fn, step: float = 1e-5, floor: float = 0.0) -> float:
    """Worst relative disagreement between analytic and central-difference
    gradients over every parameter.

    ``loss_fn(params)`` must return ``(loss, GradientSet)``; only the loss
    is used at perturbed points.  Entries where both estimates are exactly
    zero count as zero error (dead rectifier units).  ``floor`` is an
    optional lower bound on the denominator: entries whose magnitudes sit
    below it are compared at that scale instead, which keeps the metric
    meaningful where central differences are dominated by truncation noise.
    """
    _, analytic = loss_fn(params)
    work = params.copy()
    worst = 0.0
    for k, layer in enumerate(work.layers):
        for arr, ana in ((layer.w, analytic.d_w[k]), (layer.b, analytic.d_b[k])):
            flat = arr.reshape(-1)
            ana_flat = np.asarray(ana, dtype=np.float64).reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                up = loss_fn(work)[0]
                flat[i] = orig - step
                down = loss_fn(work)[0]
                flat[i] = orig
                fd = (up - down) / (2.0 * step)
                denom = max(abs(fd), abs(ana_flat[i]), floor)
                if denom > 0.0:
                    worst = max(worst, abs(fd - ana_flat[i]) / denom)
    return worst


def save_params(params: NetworkParams, path) -> None:
    """Flat binary format: count-prefixed u32-LE layer sizes, then all
    weights, then all biases, as f64-LE in layer order (weights row-major).
    """
    sizes = params.layer_sizes()
    blob = bytearray()
    blob += struct.pack("<I", len(sizes))
    blob += struct.pack(f"<{len(sizes)}I", *sizes)
    for layer in params.layers:
        blob += np.ascontiguousarray(layer.w, dtype="<f8").tobytes()
    for layer in params.layers:
        blob += np.ascontiguousarray(layer.b, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_params(path) -> NetworkParams:
    """Bit-exact inverse of `save_params`.

    Activation tags are not stored; layers are rebuilt with the standard
    convention (rectifier hidden, linear output).
    """
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise ValueError(f"load_params: {path}: file too short for a header")
    (n,) = struct.unpack_from("<I", blob, 0)
    header_end = 4 + 4 * n
    if n < 2 or len(blob) < header_end:
        raise ValueError(f"load_params: {path}: corrupt layer-size header")
    sizes = list(struct.unpack_from(f"<{n}I", blob, 4))
    n_weights = sum(a * b for a, b in zip(sizes, sizes[1:]))
    n_biases = sum(sizes[1:])
    expected = header_end + 8 * (n_weights + n_biases)
    if len(blob) != expected:
        raise ValueError(
            f"load_params: {path}: expected {expected} bytes for sizes {sizes}, got {len(blob)}"
        )
    data = np.frombuffer(blob, dtype="<f8", offset=header_end)
    layers = []
    offset = 0
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        w = data[offset : offset + fan_out * fan_in].reshape(fan_out, fan_in).copy()
        offset += fan_out * fan_in
        layers.append(Layer(w=w, b=np.empty(0), activation=HIDDEN_ACTIVATION))
    for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        layers[k].b = data[offset : offset + fan_out].copy()
        offset += fan_out
    layers[-1].activation = OUTPUT_ACTIVATION
    return NetworkParams(layers)
