"""Numpy convolutional regressor: five strided convolutions, five dense layers.

Tensors are batched NCHW arrays. Parameters live in an insertion-ordered
dict of arrays keyed ``conv1.w``, ``conv1.b``, ... ``fc5.b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Architecture:
    input_shape: tuple[int, int, int] = (4, 66, 200)
    # (out_channels, kernel, stride) per convolution
    convs: tuple[tuple[int, int, int], ...] = ((24, 5, 2), (36, 5, 2), (48, 5, 2), (64, 3, 1), (64, 3, 1))
    fc: tuple[int, ...] = (1164, 100, 50, 10, 1)

    def feature_shapes(self) -> list[tuple[int, int, int]]:
        """Output shape of every convolution; raises if the input is too small."""
        c, h, w = self.input_shape
        shapes = []
        for i, (o, k, s) in enumerate(self.convs, start=1):
            if h < k or w < k:
                raise ValueError(f"conv{i}: input {c}x{h}x{w} smaller than {k}x{k} kernel")
            h, w, c = (h - k) // s + 1, (w - k) // s + 1, o
            shapes.append((c, h, w))
        return shapes

    @property
    def flatten_width(self) -> int:
        c, h, w = self.feature_shapes()[-1] if self.convs else self.input_shape
        return c * h * w

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        cin = self.input_shape[0]
        for i, (o, k, _) in enumerate(self.convs, start=1):
            shapes[f"conv{i}.w"] = (o, cin, k, k)
            shapes[f"conv{i}.b"] = (o,)
            cin = o
        n_in = self.flatten_width
        for i, n_out in enumerate(self.fc, start=1):
            shapes[f"fc{i}.w"] = (n_out, n_in)
            shapes[f"fc{i}.b"] = (n_out,)
            n_in = n_out
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "convs": [list(c) for c in self.convs],
            "fc": list(self.fc),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(
            input_shape=tuple(int(x) for x in d["input_shape"]),
            convs=tuple(tuple(int(x) for x in c) for c in d["convs"]),
            fc=tuple(int(x) for x in d["fc"]),
        )


RISK_NET = Architecture()


def init_params(arch: Architecture, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-uniform weights scaled by fan-in, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in arch.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


def check_params(params: dict[str, np.ndarray], arch: Architecture) -> None:
    expected = arch.param_shapes()
    if list(params) != list(expected):
        raise ValueError(f"parameter names {list(params)} do not match {list(expected)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValueError(f"{name}: shape {params[name].shape}, expected {shape}")


# -- layers ------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    ho, wo = (h - k) // stride + 1, (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def conv2d(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, stride: int) -> np.ndarray:
    """Valid (unpadded) cross-correlation. ``x`` is (C, H, W) or (N, C, H, W)."""
    single = x.ndim == 3
    out, _ = _conv_forward(x[None] if single else x, kernels, bias, stride)
    return out[0] if single else out


def _conv_forward(x, kernels, bias, stride):
    o, c, k, k2 = kernels.shape
    if x.ndim != 4 or x.shape[1] != c or k != k2:
        raise ValueError(f"conv2d: input {x.shape} incompatible with kernels {kernels.shape}")
    if x.shape[2] < k or x.shape[3] < k:
        raise ValueError(f"conv2d: input {x.shape} smaller than kernel {k}x{k}")
    if bias.shape != (o,):
        raise ValueError(f"conv2d: bias {bias.shape}, expected ({o},)")
    n = x.shape[0]
    cols, ho, wo = _im2col(x, k, stride)
    out = cols @ kernels.reshape(o, -1).T + bias
    return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, x_shape, cols, kernels, stride, need_dx=True):
    o, c, k, _ = kernels.shape
    n, _, ho, wo = dout.shape
    dmat = dout.transpose(0, 2, 3, 1).reshape(-1, o)
    dw = (dmat.T @ cols).reshape(kernels.shape)
    db = dmat.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (dmat @ kernels.reshape(o, -1)).reshape(n, ho, wo, c, k, k)
    dx = np.zeros(x_shape, dtype=dout.dtype)
    span_h, span_w = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    for u in range(k):
        for v in range(k):
            dx[:, :, u : u + span_h : stride, v : v + span_w : stride] += dcols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return dx, dw, db


def dense(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``W x + b`` for a vector or a batch of row vectors."""
    if x.shape[-1] != weights.shape[1] or bias.shape != (weights.shape[0],):
        raise ValueError(f"dense: input {x.shape} incompatible with weights {weights.shape} / bias {bias.shape}")
    return x @ weights.T + bias


def relu(t: np.ndarray) -> np.ndarray:
    return np.maximum(t, 0)


def relu_grad(t: np.ndarray) -> np.ndarray:
    """Derivative of relu: 1 where t > 0, else 0 (0 at the kink)."""
    return (t > 0).astype(t.dtype)


# -- network -------------------------------------------------------------------

@dataclass
class _Cache:
    inputs: list = field(default_factory=list)
    cols: list = field(default_factory=list)
    pre: list = field(default_factory=list)


def _arch_from_params(params: dict[str, np.ndarray]) -> tuple[list, list]:
    convs = sorted({n.split(".")[0] for n in params if n.startswith("conv")}, key=lambda s: int(s[4:]))
    fcs = sorted({n.split(".")[0] for n in params if n.startswith("fc")}, key=lambda s: int(s[2:]))
    return convs, fcs


def forward(params: dict[str, np.ndarray], x: np.ndarray, strides: tuple[int, ...], cache: _Cache | None = None):
    """Batched forward pass returning raw (unclamped) outputs of shape (N,)."""
    convs, fcs = _arch_from_params(params)
    if len(strides) != len(convs):
        raise ValueError("one stride per convolution required")
    dtype = params[fcs[-1] + ".w"].dtype
    a = np.asarray(x, dtype=dtype)
    for name, s in zip(convs, strides):
        z, cols = _conv_forward(a, params[name + ".w"], params[name + ".b"], s)
        if cache is not None:
            cache.inputs.append(a)
            cache.cols.append(cols)
            cache.pre.append(z)
        a = relu(z)
    a = a.reshape(a.shape[0], -1)
    for i, name in enumerate(fcs):
        z = dense(a, params[name + ".w"], params[name + ".b"])
        if cache is not None:
            cache.inputs.append(a)
            cache.pre.append(z)
        a = relu(z) if i < len(fcs) - 1 else z
    return a[:, 0]


def model_forward(params: dict[str, np.ndarray], x: np.ndarray, arch: Architecture = RISK_NET) -> float:
    """Raw risk estimate for one (C, H, W) input."""
    if tuple(x.shape) != arch.input_shape:
        raise ValueError(f"input shape {x.shape}, expected {arch.input_shape}")
    check_params(params, arch)
    return float(forward(params, x[None], tuple(s for _, _, s in arch.convs))[0])


def predict_batch(params, x: np.ndarray, arch: Architecture, batch: int = 64) -> np.ndarray:
    strides = tuple(s for _, _, s in arch.convs)
    out = [forward(params, x[i : i + batch], strides) for i in range(0, len(x), batch)]
    return np.concatenate(out) if out else np.zeros(0)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``pred``."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"pred {pred.shape} and target {target.shape} differ")
    if pred.size == 0:
        raise ValueError("mse_loss of an empty batch")
    diff = pred - target.astype(pred.dtype)
    return float(np.mean(diff * diff)), 2.0 * diff / pred.size


def backprop(params, inputs: np.ndarray, targets: np.ndarray, arch: Architecture):
    """MSE loss of the batch and exact gradients for every parameter."""
    strides = tuple(s for _, _, s in arch.convs)
    cache = _Cache()
    pred = forward(params, inputs, strides, cache)
    loss, dpred = mse_loss(pred, np.asarray(targets, dtype=pred.dtype))
    convs, fcs = _arch_from_params(params)
    n_conv = len(convs)
    grads: dict[str, np.ndarray] = {}

    g = dpred[:, None]
    for i in range(len(fcs) - 1, -1, -1):
        name = fcs[i]
        z = cache.pre[n_conv + i]
        if i < len(fcs) - 1:
            g = g * relu_grad(z)
        a = cache.inputs[n_conv + i]
        grads[name + ".w"] = g.T @ a
        grads[name + ".b"] = g.sum(axis=0)
        g = g @ params[name + ".w"]

    if n_conv:
        g = g.reshape(cache.pre[n_conv - 1].shape)
    for i in range(n_conv - 1, -1, -1):
        name = convs[i]
        g = g * relu_grad(cache.pre[i])
        dx, dw, db = _conv_backward(g, cache.inputs[i].shape, cache.cols[i], params[name + ".w"], strides[i], need_dx=i > 0)
        grads[name + ".w"] = dw
        grads[name + ".b"] = db
        g = dx

    ordered = {name: grads[name] for name in params}
    return loss, ordered


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **hyper) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **hyper,
        )


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update; returns new params and state."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient {g.shape} vs parameter {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_p[name] = (p - step).astype(p.dtype)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return new_p, replace(state, m=new_m, v=new_v, t=t)


# -- verification ------------------------------------------------------------------

TINY_NET = Architecture(input_shape=(4, 8, 8), convs=((3, 3, 1), (2, 3, 2)), fc=(5, 1))
# same 5+5 topology as RISK_NET with narrow layers and the smallest viable input
SMALL_RISK_NET = Architecture(
    input_shape=(4, 61, 64),
    convs=((3, 5, 2), (3, 5, 2), (4, 5, 2), (4, 3, 1), (4, 3, 1)),
    fc=(8, 6, 5, 4, 1),
)


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: dict[str, float]
    tolerance: float
    n_checked: int
    n_skipped: int

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_error.values())


def _relu_pattern(params, x, strides):
    cache = _Cache()
    forward(params, x, strides, cache)
    return [z > 0 for z in cache.pre[:-1]], any(np.any(z == 0) for z in cache.pre[:-1])


def gradient_check(
    arch: Architecture = SMALL_RISK_NET,
    tolerance: float = 1e-4,
    seed: int = 0,
    h: float = 1e-5,
    batch: int = 2,
    grad_fn: Callable | None = None,
    abs_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, per parameter tensor.

    Runs in float64. Elements whose perturbation flips any ReLU (including
    pre-activations sitting exactly at 0) are skipped: the loss is not
    differentiable there.
    """
    grad_fn = grad_fn or backprop
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed, dtype=np.float64)
    for name in params:
        if name.endswith(".b"):
            params[name] = rng.uniform(-0.1, 0.1, params[name].shape)
    x = rng.normal(size=(batch,) + arch.input_shape)
    y = rng.uniform(0, 1, size=batch)
    strides = tuple(s for _, _, s in arch.convs)
    _, analytic = grad_fn(params, x, y, arch)
    base_pattern, _ = _relu_pattern(params, x, strides)

    def loss_at():
        return mse_loss(forward(params, x, strides), y)[0]

    errors: dict[str, float] = {}
    checked = skipped = 0
    for name, p in params.items():
        worst = 0.0
        flat = p.reshape(-1)
        ga = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            pat_hi, zero_hi = _relu_pattern(params, x, strides)
            f_hi = loss_at()
            flat[idx] = orig - h
            pat_lo, zero_lo = _relu_pattern(params, x, strides)
            f_lo = loss_at()
            flat[idx] = orig
            same = all(np.array_equal(a, b) for a, b in zip(base_pattern, pat_hi)) and all(
                np.array_equal(a, b) for a, b in zip(base_pattern, pat_lo)
            )
            if not same or zero_hi or zero_lo:
                skipped += 1
                continue
            num = (f_hi - f_lo) / (2 * h)
            denom = max(abs(num), abs(ga[idx]), abs_floor)
            worst = max(worst, abs(num - ga[idx]) / denom)
            checked += 1
        errors[name] = worst
    return GradCheckReport(max_rel_error=errors, tolerance=tolerance, n_checked=checked, n_skipped=skipped)
