"""Differentiable operators for the separation networks and losses.

The set is closed and minimal: exactly what the mask networks, transforms,
and losses need. There is no implicit broadcasting — elementwise ops
require identical shapes, and the few channel-wise ops state their shape
contracts explicitly. Every operator raises on shape mismatch with its
own name in the message so graph-assembly bugs localize immediately.

Shape conventions: network activations are (channels, frames); transform
coefficient planes are (2*bins, frames) with real rows stacked above
imaginary rows; waveforms are 1-D.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..transforms import (
    CoeffFrames,
    FrameSpec,
    STFT_KIND,
    istft as _istft,
    istft_adjoint as _istft_adjoint,
    stft as _stft,
    stft_adjoint as _stft_adjoint,
)
from ..signal import Waveform
from .engine import Tensor, active_tape, apply_op

#: Keeps pair_magnitude differentiable at zero coefficients; the induced
#: magnitude bias (~1e-12) is far below the 1e-5 offset used by the
#: log-magnitude features.
MAGNITUDE_EPS = 1e-24


def _check(condition: bool, op_name: str, message: str) -> None:
    if not condition:
        raise ValueError(f"{op_name}: {message}")


def _note_kink(tensor: Tensor) -> None:
    tape = active_tape()
    if tape is not None and tape.track_kinks and tensor.requires_grad \
            and tensor.size:
        tape.kink_values.append(tensor.data.reshape(-1).copy())


def _grad_if(flag: bool, compute):
    return compute() if flag else None


# ---------------------------------------------------------------------------
# Elementwise and scalar ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, "add", f"shapes {a.shape} and {b.shape} differ")
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g),
                _grad_if(b.requires_grad, lambda: g))
    return apply_op("add", (a, b), a.data + b.data, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, "sub", f"shapes {a.shape} and {b.shape} differ")
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g),
                _grad_if(b.requires_grad, lambda: -g))
    return apply_op("sub", (a, b), a.data - b.data, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape, "mul", f"shapes {a.shape} and {b.shape} differ")
    a_data, b_data = a.data, b.data
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g * b_data),
                _grad_if(b.requires_grad, lambda: g * a_data))
    return apply_op("mul", (a, b), a_data * b_data, backward)


def smul(a: Tensor, factor: float) -> Tensor:
    """Multiply by a Python constant (not a tracked parameter)."""
    factor = float(factor)
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g * factor),)
    return apply_op("smul", (a,), a.data * factor, backward)


def sadd(a: Tensor, offset: float) -> Tensor:
    """Add a Python constant (not a tracked parameter)."""
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g),)
    return apply_op("sadd", (a,), a.data + float(offset), backward)


def scale(a: Tensor, scalar: Tensor) -> Tensor:
    """Multiply a tensor by a scalar *parameter* (shape ())."""
    _check(scalar.shape == (), "scale", f"scalar must have shape (), got {scalar.shape}")
    a_data, s_data = a.data, scalar.data
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g * s_data),
                _grad_if(scalar.requires_grad,
                         lambda: np.asarray(np.sum(g * a_data))))
    return apply_op("scale", (a, scalar), a_data * s_data, backward)


def relu(a: Tensor) -> Tensor:
    _note_kink(a)
    mask = a.data > 0
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g * mask),)
    return apply_op("relu", (a,), np.where(mask, a.data, 0.0), backward)


def prelu(a: Tensor, slope: Tensor) -> Tensor:
    """Parametric ReLU with one shared scalar slope for the negative side."""
    _check(slope.shape == (), "prelu", f"slope must have shape (), got {slope.shape}")
    _note_kink(a)
    a_data = a.data
    positive = a_data > 0
    s = float(slope.data)
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g * np.where(positive, 1.0, s)),
                _grad_if(slope.requires_grad,
                         lambda: np.asarray(np.sum(g * np.where(positive, 0.0, a_data)))))
    return apply_op("prelu", (a, slope), np.where(positive, a_data, s * a_data),
                    backward)


def sigmoid(a: Tensor) -> Tensor:
    out = expit(a.data)
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g * out * (1.0 - out)),)
    return apply_op("sigmoid", (a,), out, backward)


def log(a: Tensor) -> Tensor:
    _check(bool(np.all(a.data > 0)), "log", "inputs must be strictly positive")
    a_data = a.data
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g / a_data),)
    return apply_op("log", (a,), np.log(a_data), backward)


def log10(a: Tensor) -> Tensor:
    _check(bool(np.all(a.data > 0)), "log10", "inputs must be strictly positive")
    a_data = a.data
    ln10 = np.log(10.0)
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g / (a_data * ln10)),)
    return apply_op("log10", (a,), np.log10(a_data), backward)


def reduce_sum(a: Tensor) -> Tensor:
    shape = a.shape
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: np.broadcast_to(g, shape).copy()),)
    return apply_op("reduce_sum", (a,), np.asarray(a.data.sum()), backward)


# ---------------------------------------------------------------------------
# Shape adapters
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = a.shape
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g.reshape(original)),)
    return apply_op("reshape", (a,), a.data.reshape(shape), backward)


def concat_rows(tensors: list[Tensor]) -> Tensor:
    _check(len(tensors) >= 1, "concat_rows", "need at least one tensor")
    _check(all(t.ndim == 2 for t in tensors), "concat_rows", "inputs must be 2-D")
    widths = {t.shape[1] for t in tensors}
    _check(len(widths) == 1, "concat_rows", f"column counts differ: {widths}")
    sizes = [t.shape[0] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    flags = [t.requires_grad for t in tensors]
    def backward(g):
        return tuple(
            g[bounds[i]:bounds[i + 1]] if flags[i] else None
            for i in range(len(sizes)))
    return apply_op("concat_rows", tuple(tensors),
                    np.concatenate([t.data for t in tensors], axis=0), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    _check(a.ndim == 2, "slice_rows", f"input must be 2-D, got shape {a.shape}")
    _check(0 <= start < stop <= a.shape[0], "slice_rows",
           f"rows [{start}, {stop}) out of range for {a.shape[0]} rows")
    shape = a.shape
    def backward(g):
        def scatter():
            out = np.zeros(shape)
            out[start:stop] = g
            return out
        return (_grad_if(a.requires_grad, scatter),)
    return apply_op("slice_rows", (a,), a.data[start:stop].copy(), backward)


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    _check(a.ndim == 1, "slice1d", f"input must be 1-D, got shape {a.shape}")
    _check(0 <= start < stop <= a.shape[0], "slice1d",
           f"[{start}, {stop}) out of range for length {a.shape[0]}")
    length = a.shape[0]
    def backward(g):
        def scatter():
            out = np.zeros(length)
            out[start:stop] = g
            return out
        return (_grad_if(a.requires_grad, scatter),)
    return apply_op("slice1d", (a,), a.data[start:stop].copy(), backward)


def pad1d(a: Tensor, left: int, right: int) -> Tensor:
    _check(a.ndim == 1, "pad1d", f"input must be 1-D, got shape {a.shape}")
    _check(left >= 0 and right >= 0, "pad1d", "pad amounts must be nonnegative")
    length = a.shape[0]
    def backward(g):
        return (_grad_if(a.requires_grad,
                         lambda: g[left:left + length].copy()),)
    return apply_op("pad1d", (a,), np.pad(a.data, (left, right)), backward)


# ---------------------------------------------------------------------------
# Linear-algebra and convolution ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.ndim == 2 and b.ndim == 2, "matmul",
           f"inputs must be 2-D, got {a.shape} and {b.shape}")
    _check(a.shape[1] == b.shape[0], "matmul",
           f"inner dimensions differ: {a.shape} @ {b.shape}")
    a_data, b_data = a.data, b.data
    def backward(g):
        return (_grad_if(a.requires_grad, lambda: g @ b_data.T),
                _grad_if(b.requires_grad, lambda: a_data.T @ g))
    return apply_op("matmul", (a, b), a_data @ b_data, backward)


def conv1d(x: Tensor, weight: Tensor, stride: int = 1, dilation: int = 1) -> Tensor:
    """Valid-padding 1-D convolution: (C_in, T) x (C_out, C_in, P) -> (C_out, T_out)."""
    _check(x.ndim == 2 and weight.ndim == 3, "conv1d",
           f"need (C_in, T) input and (C_out, C_in, P) kernel, "
           f"got {x.shape} and {weight.shape}")
    c_in, t_in = x.shape
    c_out, c_in2, taps = weight.shape
    _check(c_in == c_in2, "conv1d",
           f"input channels {c_in} != kernel channels {c_in2}")
    span = (taps - 1) * dilation + 1
    _check(t_in >= span, "conv1d",
           f"input length {t_in} shorter than kernel span {span}")
    t_out = (t_in - span) // stride + 1
    gather = (np.arange(t_out) * stride)[:, None] + np.arange(taps) * dilation
    patches = x.data[:, gather]                      # (C_in, T_out, P)
    out = np.einsum("oip,itp->ot", weight.data, patches)
    x_data, w_data = x.data, weight.data
    def backward(g):
        def dx():
            grad = np.zeros_like(x_data)
            contrib = np.einsum("ot,oip->itp", g, w_data)
            np.add.at(grad, (slice(None), gather), contrib)
            return grad
        def dw():
            return np.einsum("ot,itp->oip", g, patches)
        return (_grad_if(x.requires_grad, dx),
                _grad_if(weight.requires_grad, dw))
    return apply_op("conv1d", (x, weight), out, backward)


def depthwise_conv1d(x: Tensor, weight: Tensor, dilation: int = 1) -> Tensor:
    """Causal per-channel convolution: out[c,t] = sum_j w[c,j] * x[c, t - j*dilation].

    Samples before the start are zero, so the output keeps the input length
    and an impulse at frame 0 produces nonzeros exactly at {0, d, 2d, ...}.
    """
    _check(x.ndim == 2 and weight.ndim == 2, "depthwise_conv1d",
           f"need (C, T) input and (C, P) kernel, got {x.shape} and {weight.shape}")
    channels, frames = x.shape
    _check(weight.shape[0] == channels, "depthwise_conv1d",
           f"kernel channels {weight.shape[0]} != input channels {channels}")
    taps = weight.shape[1]
    x_data, w_data = x.data, weight.data
    out = np.zeros((channels, frames))
    for j in range(taps):
        shift = j * dilation
        if shift < frames:
            out[:, shift:] += w_data[:, j:j + 1] * x_data[:, :frames - shift]
    def backward(g):
        def dx():
            grad = np.zeros_like(x_data)
            for j in range(taps):
                shift = j * dilation
                if shift < frames:
                    grad[:, :frames - shift] += w_data[:, j:j + 1] * g[:, shift:]
            return grad
        def dw():
            grad = np.zeros_like(w_data)
            for j in range(taps):
                shift = j * dilation
                if shift < frames:
                    grad[:, j] = np.sum(g[:, shift:] * x_data[:, :frames - shift],
                                        axis=1)
            return grad
        return (_grad_if(x.requires_grad, dx),
                _grad_if(weight.requires_grad, dw))
    return apply_op("depthwise_conv1d", (x, weight), out, backward)


def overlap_add(frames: Tensor, hop: int) -> Tensor:
    """Sum (T, W) frame rows into a 1-D signal at stride `hop`."""
    _check(frames.ndim == 2, "overlap_add",
           f"input must be (frames, width), got shape {frames.shape}")
    _check(hop >= 1, "overlap_add", f"hop must be >= 1, got {hop}")
    n, width = frames.shape
    out = np.zeros((n - 1) * hop + width)
    for t in range(n):
        out[t * hop:t * hop + width] += frames.data[t]
    def backward(g):
        def dframes():
            starts = np.arange(n) * hop
            return g[starts[:, None] + np.arange(width)].copy()
        return (_grad_if(frames.requires_grad, dframes),)
    return apply_op("overlap_add", (frames,), out, backward)


def transposed_conv1d(coeffs: Tensor, weight: Tensor, stride: int) -> Tensor:
    """Transposed convolution: (N, T) coefficients with (N, W) kernels -> 1-D signal.

    Equivalent to projecting each coefficient column through the kernel
    rows and overlap-adding the resulting frames at the given stride.
    """
    _check(coeffs.ndim == 2 and weight.ndim == 2, "transposed_conv1d",
           f"need (N, T) coeffs and (N, W) kernel, got {coeffs.shape} "
           f"and {weight.shape}")
    _check(coeffs.shape[0] == weight.shape[0], "transposed_conv1d",
           f"coefficient rows {coeffs.shape[0]} != kernel rows {weight.shape[0]}")
    _check(stride >= 1, "transposed_conv1d", f"stride must be >= 1, got {stride}")
    n_frames_, width = coeffs.shape[1], weight.shape[1]
    frames = coeffs.data.T @ weight.data              # (T, W)
    out = np.zeros((n_frames_ - 1) * stride + width)
    for t in range(n_frames_):
        out[t * stride:t * stride + width] += frames[t]
    c_data, w_data = coeffs.data, weight.data
    def backward(g):
        starts = np.arange(n_frames_) * stride
        g_frames = g[starts[:, None] + np.arange(width)]      # (T, W)
        return (_grad_if(coeffs.requires_grad, lambda: w_data @ g_frames.T),
                _grad_if(weight.requires_grad, lambda: c_data @ g_frames))
    return apply_op("transposed_conv1d", (coeffs, weight), out, backward)


# ---------------------------------------------------------------------------
# Transform ops (STFT coefficient planes)
# ---------------------------------------------------------------------------

def stft_planes(x: Tensor, spec: FrameSpec) -> Tensor:
    """Differentiable STFT: 1-D signal -> (2*n_bins, frames) stacked Re/Im planes."""
    _check(x.ndim == 1, "stft_planes", f"input must be 1-D, got shape {x.shape}")
    length = x.shape[0]
    coeffs = _stft(Waveform(x.data, spec.sample_rate_hz), spec)
    out = np.concatenate([coeffs.data.real.T, coeffs.data.imag.T], axis=0)
    bins = spec.n_bins
    def backward(g):
        def dx():
            cotangent = (g[:bins] + 1j * g[bins:]).T
            return _stft_adjoint(cotangent, spec, length)
        return (_grad_if(x.requires_grad, dx),)
    return apply_op("stft_planes", (x,), out, backward)


def istft_planes(planes: Tensor, spec: FrameSpec, target_len: int) -> Tensor:
    """Differentiable inverse STFT: (2*n_bins, frames) planes -> 1-D signal."""
    bins = spec.n_bins
    _check(planes.ndim == 2 and planes.shape[0] == 2 * bins, "istft_planes",
           f"need ({2 * bins}, frames) planes, got shape {planes.shape}")
    data = (planes.data[:bins] + 1j * planes.data[bins:]).T
    wave = _istft(CoeffFrames(data, STFT_KIND, spec, target_len), target_len)
    def backward(g):
        def dplanes():
            cotangent = _istft_adjoint(g, spec, target_len)
            return np.concatenate([cotangent.real.T, cotangent.imag.T], axis=0)
        return (_grad_if(planes.requires_grad, dplanes),)
    return apply_op("istft_planes", (planes,), wave.samples, backward)


def pair_magnitude(planes: Tensor) -> Tensor:
    """Magnitude of stacked Re/Im planes: (2F, T) -> (F, T), smoothed at zero."""
    _check(planes.ndim == 2 and planes.shape[0] % 2 == 0, "pair_magnitude",
           f"need (2F, T) planes, got shape {planes.shape}")
    bins = planes.shape[0] // 2
    re, im = planes.data[:bins], planes.data[bins:]
    out = np.sqrt(re ** 2 + im ** 2 + MAGNITUDE_EPS)
    def backward(g):
        def dplanes():
            return np.concatenate([g * re / out, g * im / out], axis=0)
        return (_grad_if(planes.requires_grad, dplanes),)
    return apply_op("pair_magnitude", (planes,), out, backward)


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

FEATURE_NORM_EPS = 1e-8


def feature_norm(x: Tensor, gamma: Tensor, beta: Tensor,
                 frozen_stats: tuple[np.ndarray, np.ndarray] | None = None,
                 stats_out: list | None = None) -> Tensor:
    """Feature-wise normalization over frames.

    Per channel c: out[c,t] = gamma[c] * (x[c,t] - mu_c) / sqrt(var_c + eps)
    + beta[c], with mu/var taken over the frame axis.

    `frozen_stats`, a (mu, inv_std) pair of (C, 1) arrays, replaces the
    batch statistics with fixed constants (used by locality probes, where
    the data-dependent statistics would couple every frame). When
    `stats_out` is given, the (mu, inv_std) actually used are appended to
    it so a later call can replay them.
    """
    _check(x.ndim == 2, "feature_norm", f"input must be (C, T), got shape {x.shape}")
    channels = x.shape[0]
    _check(gamma.shape == (channels,) and beta.shape == (channels,), "feature_norm",
           f"gamma/beta must have shape ({channels},), got {gamma.shape} "
           f"and {beta.shape}")
    x_data = x.data
    if frozen_stats is None:
        mu = x_data.mean(axis=1, keepdims=True)
        inv = 1.0 / np.sqrt(x_data.var(axis=1, keepdims=True) + FEATURE_NORM_EPS)
    else:
        mu, inv = frozen_stats
    if stats_out is not None:
        stats_out.append((mu.copy(), inv.copy()))
    x_hat = (x_data - mu) * inv
    out = gamma.data[:, None] * x_hat + beta.data[:, None]
    g_data = gamma.data
    frozen = frozen_stats is not None
    def backward(g):
        def dx():
            gx = g * g_data[:, None]
            if frozen:
                return gx * inv
            return inv * (gx
                          - gx.mean(axis=1, keepdims=True)
                          - x_hat * (gx * x_hat).mean(axis=1, keepdims=True))
        return (_grad_if(x.requires_grad, dx),
                _grad_if(gamma.requires_grad, lambda: np.sum(g * x_hat, axis=1)),
                _grad_if(beta.requires_grad, lambda: np.sum(g, axis=1)))
    return apply_op("feature_norm", (x, gamma, beta), out, backward)
