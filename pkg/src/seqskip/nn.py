"""Layer primitives: convolutions, normalizations, gating, attention, losses.

All functions are pure: parameters arrive as tensors, nothing is stored.
Sequence inputs are channels-first, ``[C, T]`` or ``[batch, C, T]``;
attention inputs are channels-last, ``[..., positions, features]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, EvaluationError, MaskingError, ValidationError
from .tensor import Tensor

CAUSAL = "causal"
NONCAUSAL = "noncausal"

_MASK_FILL = -1e9


@dataclass(frozen=True)
class Conv1dSpec:
    """Static description of a 1-d convolution."""

    in_channels: int
    out_channels: int
    kernel_size: int
    dilation: int = 1
    padding_mode: str = CAUSAL

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_size, self.dilation) < 1:
            raise ConfigurationError(f"conv spec fields must be positive: {self}")
        if self.padding_mode not in (CAUSAL, NONCAUSAL):
            raise ConfigurationError(f"unknown padding_mode {self.padding_mode!r}")

    @property
    def receptive_field(self) -> int:
        return 1 + self.dilation * (self.kernel_size - 1)


def conv1d(x: Tensor, spec: Conv1dSpec, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    """Dilated 1-d convolution preserving the temporal length.

    Causal mode pads ``dilation * (kernel_size - 1)`` zeros on the past
    side only, so output column t reads input columns <= t. Noncausal
    mode splits the same amount of padding across both sides (symmetric
    for odd kernels).
    """
    expected = (spec.out_channels, spec.in_channels, spec.kernel_size)
    if tuple(weights.shape) != expected:
        raise ConfigurationError(
            f"conv weights shape {tuple(weights.shape)} does not match spec {expected}"
        )
    if x.ndim not in (2, 3) or x.shape[-2] != spec.in_channels:
        raise ConfigurationError(
            f"conv input shape {tuple(x.shape)} incompatible with {spec.in_channels} input channels"
        )
    t_len = x.shape[-1]
    if t_len == 0:
        raise ValidationError("conv1d input has temporal length 0")
    if bias is not None and tuple(bias.shape) != (spec.out_channels,):
        raise ConfigurationError(f"conv bias shape {tuple(bias.shape)} != ({spec.out_channels},)")

    total = spec.dilation * (spec.kernel_size - 1)
    left = total if spec.padding_mode == CAUSAL else total // 2
    xp = T.pad_axis(x, -1, left, total - left)
    out = None
    for j in range(spec.kernel_size):
        tap = T.reshape(
            T.slice_axis(weights, 2, j, j + 1), (spec.out_channels, spec.in_channels)
        )
        window = T.slice_axis(xp, -1, j * spec.dilation, j * spec.dilation + t_len)
        term = T.matmul(tap, window)
        out = term if out is None else T.add(out, term)
    if bias is not None:
        out = T.add(out, T.reshape(bias, (spec.out_channels, 1)))
    return out


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "sigmoid":
        return T.sigmoid(x)
    if kind == "relu":
        return T.relu(x)
    if kind == "tanh":
        return T.tanh(x)
    raise ConfigurationError(f"unknown activation {kind!r}")


def _stat_shape(param: Tensor, ndim: int, axis: int) -> Tensor:
    shape = [1] * ndim
    shape[axis] = param.shape[0]
    return T.reshape(param, shape)


def instance_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    epsilon: float = 1e-5,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Normalize each channel over the temporal axis, then apply gamma/beta.

    Statistics use the population variance. ``mask`` (1 = valid position,
    broadcastable to x) restricts statistics to valid positions so padded
    tails do not contaminate them; masked positions still produce output.
    """
    if x.ndim not in (2, 3):
        raise ConfigurationError(f"instance_norm expects [C,T] or [B,C,T], got {tuple(x.shape)}")
    if mask is None:
        mu = T.reduce_mean(x, axis=-1, keepdims=True)
        centered = T.add(x, T.neg(mu))
        var = T.reduce_mean(T.mul(centered, centered), axis=-1, keepdims=True)
    else:
        m = np.asarray(mask, dtype=x.dtype.type)
        denom = np.maximum(m.sum(axis=-1, keepdims=True), 1.0)
        mu = T.div(T.reduce_sum(T.mul(x, m), axis=-1, keepdims=True), Tensor(denom))
        centered = T.add(x, T.neg(mu))
        var = T.div(
            T.reduce_sum(T.mul(T.mul(centered, centered), m), axis=-1, keepdims=True),
            Tensor(denom),
        )
    inv = T.pow_scalar(T.add(var, float(epsilon)), -0.5)
    normed = T.mul(centered, inv)
    g = _stat_shape(gamma, x.ndim, -2)
    b = _stat_shape(beta, x.ndim, -2)
    return T.add(T.mul(normed, g), b)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, epsilon: float = 1e-5, axis: int = -2) -> Tensor:
    """Normalize over the channel axis independently at every position.

    Unlike :func:`instance_norm` this mixes no information across time,
    so it is safe inside strictly causal stacks.
    """
    mu = T.reduce_mean(x, axis=axis, keepdims=True)
    centered = T.add(x, T.neg(mu))
    var = T.reduce_mean(T.mul(centered, centered), axis=axis, keepdims=True)
    inv = T.pow_scalar(T.add(var, float(epsilon)), -0.5)
    normed = T.mul(centered, inv)
    g = _stat_shape(gamma, x.ndim, axis)
    b = _stat_shape(beta, x.ndim, axis)
    return T.add(T.mul(normed, g), b)


def gated_block(kind: str, x: Tensor, transform_pre: Tensor, gate_pre: Tensor) -> Tensor:
    """Combine pre-activations of the transform and gate paths.

    highway: sigmoid(gate) * relu(transform) + (1 - sigmoid(gate)) * x
    glu:     transform * sigmoid(gate)
    """
    if tuple(transform_pre.shape) != tuple(gate_pre.shape):
        raise ConfigurationError(
            f"transform/gate shapes differ: {tuple(transform_pre.shape)} vs {tuple(gate_pre.shape)}"
        )
    if kind == "highway":
        if tuple(x.shape) != tuple(transform_pre.shape):
            raise ConfigurationError(
                f"highway carry shape {tuple(x.shape)} != path shape {tuple(transform_pre.shape)}"
            )
        gate = T.sigmoid(gate_pre)
        carry = T.add(1.0, T.neg(gate))
        return T.add(T.mul(gate, T.relu(transform_pre)), T.mul(carry, x))
    if kind == "glu":
        return T.mul(transform_pre, T.sigmoid(gate_pre))
    raise ConfigurationError(f"unknown gated block kind {kind!r}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    # Max subtraction leaves the function (and its gradient) unchanged.
    shift = np.max(x.data, axis=axis, keepdims=True)
    e = T.exp(T.add(x, Tensor(-shift)))
    return T.div(e, T.reduce_sum(e, axis=axis, keepdims=True))


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = T.reshape(x, (*lead, n, heads, d // heads))
    return T.swap_axes(x, -3, -2)


def _merge_heads(x: Tensor) -> Tensor:
    x = T.swap_axes(x, -3, -2)
    *lead, n, h, dh = x.shape
    return T.reshape(x, (*lead, n, h * dh))


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: np.ndarray | None = None,
    heads: int = 1,
) -> Tensor:
    """Scaled dot-product attention with optional masking and heads.

    ``mask[..., n, m]`` truthy means query row n may attend to key m.
    Rows with no attendable key are rejected. With ``heads > 1`` the key
    and value widths are split per head and outputs re-concatenated.
    """
    dk, dv = q.shape[-1], v.shape[-1]
    if k.shape[-1] != dk or k.shape[-2] != v.shape[-2]:
        raise ConfigurationError("key shape must match query width and value count")
    if heads < 1:
        raise ConfigurationError("heads must be >= 1")
    if heads > 1 and (dk % heads or dv % heads):
        raise ConfigurationError(f"heads={heads} must divide d_k={dk} and d_v={dv}")

    mask_arr = None
    if mask is not None:
        mask_arr = np.asarray(mask)
        if not mask_arr.any(axis=-1).all():
            raise MaskingError("attention mask blocks every key for some query row")
        mask_arr = mask_arr.astype(q.dtype.type)

    if heads > 1:
        q, k, v = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
        if mask_arr is not None:
            mask_arr = np.expand_dims(mask_arr, -3)
    scale = 1.0 / float(np.sqrt(dk // heads if heads > 1 else dk))
    scores = T.mul(T.matmul(q, T.swap_axes(k, -1, -2)), scale)
    if mask_arr is not None:
        scores = T.add(T.mul(scores, Tensor(mask_arr)), Tensor(_MASK_FILL * (1.0 - mask_arr)))
    weights = softmax(scores, axis=-1)
    out = T.matmul(weights, v)
    if heads > 1:
        out = _merge_heads(out)
    return out


def attention_weights(q: Tensor, k: Tensor, mask: np.ndarray | None = None) -> np.ndarray:
    """Single-head attention weight matrix, for inspection and tests."""
    dk = q.shape[-1]
    scores = T.mul(T.matmul(q, T.swap_axes(k, -1, -2)), 1.0 / float(np.sqrt(dk)))
    if mask is not None:
        m = np.asarray(mask).astype(q.dtype.type)
        if not m.any(axis=-1).all():
            raise MaskingError("attention mask blocks every key for some query row")
        scores = T.add(T.mul(scores, Tensor(m)), Tensor(_MASK_FILL * (1.0 - m)))
    return softmax(scores, axis=-1).data


# -- losses ------------------------------------------------------------

BCE_EPS = 1e-7


def _masked_mean(values: Tensor, mask: np.ndarray | None) -> Tensor:
    if mask is None:
        if values.size == 0:
            raise EvaluationError("loss over zero elements")
        return T.reduce_mean(values)
    m = np.asarray(mask, dtype=values.dtype.type)
    total = float(m.sum())
    if total <= 0:
        raise EvaluationError("loss mask admits no element")
    return T.mul(T.reduce_sum(T.mul(values, Tensor(m))), 1.0 / total)


def bce(pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean binary cross entropy over unmasked elements.

    Predictions are clamped to [eps, 1-eps] so saturated sigmoids cannot
    produce log(0).
    """
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype.type)
    p = T.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    pos = T.mul(T.log(p), Tensor(t))
    negt = T.mul(T.log(T.add(1.0, T.neg(p))), Tensor(1.0 - t))
    return _masked_mean(T.neg(T.add(pos, negt)), mask)


def mse(pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    """Mean squared error over unmasked elements."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype.type)
    diff = T.add(pred, Tensor(-t))
    return _masked_mean(T.mul(diff, diff), mask)


LOSSES = {"bce": bce, "mse": mse}


def loss(kind: str, pred: Tensor, target, mask: np.ndarray | None = None) -> Tensor:
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ConfigurationError(f"unknown loss kind {kind!r}") from None
    return fn(pred, target, mask)
