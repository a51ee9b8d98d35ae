"""
Differentiable operations of the numeric kernel.

Every op is a stateless object with

- ``forward(*inputs, **attrs) -> (output, ctx)``
- ``vjp(ctx, grad_output) -> tuple of input gradients``

Gradients of complex arrays use the convention ``dL/dRe + j·dL/dIm``, so a
real loss L of a complex tensor z has gradient ``g`` with
``dL = Re(sum(conj(g) * dz))``.

All math is float64 / complex128. The DFT reference path builds dense
per-axis DFT matrices (the naive O(N²) transform); the ``fast`` backend uses
scipy.fft and is only taken for power-of-two sizes.
"""

from functools import lru_cache
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.fft
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from freqpriv.core.errors import ShapeError
from freqpriv.tensor.types import ArrayLike, FeatureMap, Spectrum, as_array

Grads = Tuple[Optional[np.ndarray], ...]

DFT_BACKENDS = ("reference", "fast")

# ------------------------------------------------------------------
# DFT helpers
# ------------------------------------------------------------------


@lru_cache(maxsize=64)
def dft_matrix(n: int) -> np.ndarray:
    """Forward DFT matrix M[u, h] = exp(-j·2π·u·h / n)."""
    idx = np.arange(n)
    # reduce u·h mod n before scaling to keep the phase accurate
    phase = np.outer(idx, idx) % n
    mat = np.exp(-2j * np.pi * phase / n)
    mat.setflags(write=False)
    return mat


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


def _use_fast(backend: str, h: int, w: int) -> bool:
    if backend not in DFT_BACKENDS:
        raise ValueError(f"Unknown DFT backend '{backend}', expected one of {DFT_BACKENDS}")
    return backend == "fast" and _is_pow2(h) and _is_pow2(w)


def _dft_unnormalized(x: np.ndarray, backend: str) -> np.ndarray:
    h, w = x.shape[-2:]
    if _use_fast(backend, h, w):
        return scipy.fft.fft2(x, axes=(-2, -1))
    return dft_matrix(h) @ x @ dft_matrix(w)


def _conj_dft_unnormalized(x: np.ndarray, backend: str) -> np.ndarray:
    """sum_u sum_v x(u,v)·exp(+j·2π(uh/H + vw/W)), no 1/(HW) factor."""
    h, w = x.shape[-2:]
    if _use_fast(backend, h, w):
        return scipy.fft.ifft2(x, axes=(-2, -1)) * (h * w)
    return np.conj(dft_matrix(h)) @ x @ np.conj(dft_matrix(w))


# ------------------------------------------------------------------
# Op base
# ------------------------------------------------------------------


class Op:
    """Base class: a forward map and its vector-Jacobian product."""

    name = "op"

    def forward(self, *inputs: np.ndarray, **attrs: Any) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def vjp(self, ctx: Any, grad: np.ndarray) -> Grads:
        raise NotImplementedError

    def __call__(self, *inputs: np.ndarray, **attrs: Any) -> np.ndarray:
        return self.forward(*inputs, **attrs)[0]

    def __repr__(self) -> str:
        return f"<Op {self.name}>"


def _check_chw(x: np.ndarray, op: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{op}: expected C×H×W input, got shape {x.shape}")


# ------------------------------------------------------------------
# Spectral ops
# ------------------------------------------------------------------


class Dft2(Op):
    """Per-channel unnormalized 2D DFT of a real map."""

    name = "dft2"

    def forward(self, x, backend: str = "reference"):
        x = np.asarray(x, dtype=np.float64)
        _check_chw(x, self.name)
        return _dft_unnormalized(x, backend), backend

    def vjp(self, ctx, grad):
        return (np.real(_conj_dft_unnormalized(grad, ctx)),)


class Idft2(Op):
    """Inverse DFT with 1/(HW) scaling, keeping only the real part."""

    name = "idft2"

    def forward(self, f, backend: str = "reference"):
        f = np.asarray(f, dtype=np.complex128)
        _check_chw(f, self.name)
        h, w = f.shape[-2:]
        return np.real(_conj_dft_unnormalized(f, backend)) / (h * w), backend

    def vjp(self, ctx, grad):
        h, w = grad.shape[-2:]
        return (_dft_unnormalized(np.asarray(grad, dtype=np.float64), ctx) / (h * w),)


class ApplyGate(Op):
    """Hadamard product of a complex spectrum with sigmoid(logits)."""

    name = "apply_gate"

    def forward(self, f, logits):
        f = np.asarray(f, dtype=np.complex128)
        logits = np.asarray(logits, dtype=np.float64)
        if f.shape != logits.shape:
            raise ShapeError(
                f"apply_gate: spectrum {f.shape} does not match gate {logits.shape}"
            )
        mask = expit(logits)
        return f * mask, (f, mask)

    def vjp(self, ctx, grad):
        f, mask = ctx
        grad_f = grad * mask
        grad_logits = np.real(grad * np.conj(f)) * mask * (1.0 - mask)
        return grad_f, grad_logits


class SpectralDistance(Op):
    """sum over c,u,v of |weight(u,v)·(fp - ft)|², a scalar."""

    name = "spectral_distance"

    def forward(self, fp, ft, weight):
        fp = np.asarray(fp, dtype=np.complex128)
        ft = np.asarray(ft, dtype=np.complex128)
        weight = np.asarray(weight, dtype=np.float64)
        if fp.shape != ft.shape or fp.shape[-2:] != weight.shape:
            raise ShapeError(
                f"spectral_distance: shapes {fp.shape}, {ft.shape}, weight {weight.shape}"
            )
        diff = fp - ft
        w2 = weight * weight
        value = np.sum(w2 * (diff.real ** 2 + diff.imag ** 2))
        return np.asarray(value), (diff, w2)

    def vjp(self, ctx, grad):
        diff, w2 = ctx
        g = 2.0 * float(grad) * w2 * diff
        return g, -g


# ------------------------------------------------------------------
# Convolutions
# ------------------------------------------------------------------


class Conv1x1(Op):
    """Per-position channel mix: y[o] = sum_i W[o, i]·x[i] + b[o]."""

    name = "conv1x1"

    def forward(self, x, weights, bias):
        x = np.asarray(x, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        _check_chw(x, self.name)
        if weights.ndim != 2 or weights.shape[1] != x.shape[0]:
            raise ShapeError(
                f"conv1x1: weights {weights.shape} do not match {x.shape[0]} input channels"
            )
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"conv1x1: bias {bias.shape} does not match {weights.shape[0]} outputs")
        y = np.tensordot(weights, x, axes=([1], [0])) + bias[:, None, None]
        return y, (x, weights)

    def vjp(self, ctx, grad):
        x, weights = ctx
        grad_x = np.tensordot(weights, grad, axes=([0], [0]))
        grad_w = np.tensordot(grad, x, axes=([1, 2], [1, 2]))
        grad_b = grad.sum(axis=(1, 2))
        return grad_x, grad_w, grad_b


class Conv3x3s2(Op):
    """3×3 cross-correlation, zero padding 1, stride 2."""

    name = "conv3x3s2"

    def forward(self, x, weights, bias):
        x = np.asarray(x, dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        _check_chw(x, self.name)
        c_in, h, w = x.shape
        if h < 3 or w < 3:
            raise ShapeError(f"conv3x3s2: spatial dims must be >= 3, got {h}×{w}")
        if weights.shape[1:] != (c_in, 3, 3):
            raise ShapeError(
                f"conv3x3s2: kernel {weights.shape} does not match (C_out, {c_in}, 3, 3)"
            )
        if bias.shape != (weights.shape[0],):
            raise ShapeError(f"conv3x3s2: bias {bias.shape} does not match {weights.shape[0]} outputs")

        padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
        windows = sliding_window_view(padded, (3, 3), axis=(1, 2))[:, ::2, ::2]
        y = np.tensordot(weights, windows, axes=([1, 2, 3], [0, 3, 4]))
        y = y + bias[:, None, None]
        return y, (x.shape, windows, weights)

    def vjp(self, ctx, grad):
        in_shape, windows, weights = ctx
        c_in, h, w = in_shape
        out_h, out_w = grad.shape[1:]

        grad_w = np.tensordot(grad, windows, axes=([1, 2], [1, 2]))
        grad_b = grad.sum(axis=(1, 2))

        cols = np.tensordot(weights, grad, axes=([0], [0]))  # (c_in, 3, 3, out_h, out_w)
        grad_padded = np.zeros((c_in, h + 2, w + 2))
        for k in range(3):
            for l in range(3):
                grad_padded[:, k:k + 2 * out_h:2, l:l + 2 * out_w:2] += cols[:, k, l]
        return grad_padded[:, 1:-1, 1:-1], grad_w, grad_b


# ------------------------------------------------------------------
# Resampling
# ------------------------------------------------------------------


def interp_matrix(
    in_size: int,
    out_size: int,
    start: float = 0.0,
    extent: Optional[float] = None,
) -> np.ndarray:
    """
    Linear interpolation weights (out_size × in_size), align_corners=False.

    ``start``/``extent`` select a sub-window of the input axis in cell units;
    the default window is the whole axis. Sample positions are clamped to
    [0, in_size - 1].
    """
    if out_size < 1 or in_size < 1:
        raise ShapeError(f"interp_matrix: sizes must be >= 1, got {in_size}->{out_size}")
    extent = float(in_size) if extent is None else float(extent)
    scale = extent / out_size
    src = start + (np.arange(out_size) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo

    mat = np.zeros((out_size, in_size))
    rows = np.arange(out_size)
    np.add.at(mat, (rows, lo), 1.0 - frac)
    np.add.at(mat, (rows, hi), frac)
    return mat


class BilinearResize(Op):
    """Separable bilinear sampling of every channel to out_h × out_w."""

    name = "bilinear_resize"

    def forward(
        self,
        x,
        out_h: int,
        out_w: int,
        window: Optional[Tuple[float, float, float, float]] = None,
    ):
        x = np.asarray(x, dtype=np.float64)
        _check_chw(x, self.name)
        _, h, w = x.shape
        if window is None:
            ry = interp_matrix(h, out_h)
            rx = interp_matrix(w, out_w)
        else:
            y0, x0, wh, ww = window
            ry = interp_matrix(h, out_h, start=y0, extent=wh)
            rx = interp_matrix(w, out_w, start=x0, extent=ww)
        return ry @ x @ rx.T, (ry, rx)

    def vjp(self, ctx, grad):
        ry, rx = ctx
        return (ry.T @ grad @ rx,)


# ------------------------------------------------------------------
# Elementwise ops
# ------------------------------------------------------------------


class Sigmoid(Op):
    name = "sigmoid"

    def forward(self, x):
        s = expit(np.asarray(x, dtype=np.float64))
        return s, s

    def vjp(self, ctx, grad):
        return (grad * ctx * (1.0 - ctx),)


class Silu(Op):
    """x·sigmoid(x), the activation of the toy backbone."""

    name = "silu"

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        s = expit(x)
        return x * s, (x, s)

    def vjp(self, ctx, grad):
        x, s = ctx
        return (grad * (s + x * s * (1.0 - s)),)


class Add(Op):
    name = "add"

    def forward(self, a, b):
        a = np.asarray(a)
        b = np.asarray(b)
        if a.shape != b.shape:
            raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
        return a + b, None

    def vjp(self, ctx, grad):
        return grad, grad


class Scale(Op):
    name = "scale"

    def forward(self, x, factor: float = 1.0):
        return np.asarray(x) * factor, factor

    def vjp(self, ctx, grad):
        return (grad * ctx,)


class ConcatChannels(Op):
    name = "concat_channels"

    def forward(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape[1:] != b.shape[1:]:
            raise ShapeError(f"concat_channels: spatial dims {a.shape[1:]} != {b.shape[1:]}")
        return np.concatenate([a, b], axis=0), a.shape[0]

    def vjp(self, ctx, grad):
        return grad[:ctx], grad[ctx:]


# ------------------------------------------------------------------
# Registry
# ------------------------------------------------------------------

DFT2 = Dft2()
IDFT2 = Idft2()
APPLY_GATE = ApplyGate()
SPECTRAL_DISTANCE = SpectralDistance()
CONV1X1 = Conv1x1()
CONV3X3S2 = Conv3x3s2()
BILINEAR_RESIZE = BilinearResize()
SIGMOID = Sigmoid()
SILU = Silu()
ADD = Add()
SCALE = Scale()
CONCAT_CHANNELS = ConcatChannels()

OPS: Dict[str, Op] = {
    op.name: op
    for op in (
        DFT2, IDFT2, APPLY_GATE, SPECTRAL_DISTANCE, CONV1X1, CONV3X3S2,
        BILINEAR_RESIZE, SIGMOID, SILU, ADD, SCALE, CONCAT_CHANNELS,
    )
}


def register_op(op: Op) -> Op:
    """Add an op defined elsewhere (e.g. a loss) to the registry."""
    OPS[op.name] = op
    return op


# ------------------------------------------------------------------
# Typed functional API
# ------------------------------------------------------------------


def dft2(x: ArrayLike, backend: str = "reference") -> Spectrum:
    return Spectrum(DFT2(as_array(x), backend=backend))


def idft2(f: ArrayLike, backend: str = "reference") -> FeatureMap:
    return FeatureMap(IDFT2(as_array(f), backend=backend))


def conv1x1(x: ArrayLike, weights: np.ndarray, bias: np.ndarray) -> FeatureMap:
    return FeatureMap(CONV1X1(as_array(x), weights, bias))


def conv3x3s2(x: ArrayLike, weights: np.ndarray, bias: np.ndarray) -> FeatureMap:
    return FeatureMap(CONV3X3S2(as_array(x), weights, bias))


def bilinear_resize(x: ArrayLike, out_h: int, out_w: int) -> FeatureMap:
    return FeatureMap(BILINEAR_RESIZE(as_array(x), out_h=out_h, out_w=out_w))


def sigmoid(x: Any) -> np.ndarray:
    return expit(np.asarray(x, dtype=np.float64))


def concat_channels(maps: Sequence[ArrayLike]) -> FeatureMap:
    return FeatureMap(np.concatenate([as_array(m) for m in maps], axis=0))
