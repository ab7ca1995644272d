"""Network primitives over single images laid out as ``[C, H, W]``.

Convolutions are cross-correlations with odd square kernels, stride 1 and
"same" zero padding.  Up-sampling is a 2x2 / stride-2 transposed convolution,
whose windows never overlap, so it reduces to one tensordot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import DTYPE, Tensor, _make, note_branch, sigmoid_array

CLAMP_LO = 0.01
CLAMP_HI = 0.99


@dataclass
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)

    @property
    def bias_shape(self) -> tuple[int]:
        return (self.out_channels,)


@dataclass
class AReLUParams:
    """Per-layer learnable scalars: ``alpha`` before clamping, ``beta`` before the sigmoid."""

    alpha: Tensor
    beta: Tensor

    @property
    def negative_slope(self) -> float:
        return float(np.clip(self.alpha.item(), CLAMP_LO, CLAMP_HI))

    @property
    def positive_gain(self) -> float:
        return 1.0 + float(sigmoid_array(np.asarray(self.beta.item())))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    data = x.data
    active = data > 0.0
    note_branch(active)
    out = np.where(active, data, 0.0)

    def bw(g):
        return (np.where(active, g, 0.0),)

    return _make(out, (x,), "relu", bw)


def arelu(x: Tensor, p: AReLUParams) -> Tensor:
    """Learnable two-sided activation.

    ``clamp(alpha) * x`` for ``x <= 0`` and ``(1 + sigmoid(beta)) * x`` for
    ``x >= 0``; ``alpha`` is clamped to ``[0.01, 0.99]``.  Gradients flow to
    ``x``, ``alpha`` (only while unclamped) and ``beta``.
    """
    alpha, beta = p.alpha, p.beta
    if alpha.size != 1 or beta.size != 1:
        raise ShapeError("AReLU alpha and beta must be scalars")
    a_raw = alpha.item()
    slope = min(max(a_raw, CLAMP_LO), CLAMP_HI)
    alpha_live = CLAMP_LO < a_raw < CLAMP_HI
    s = float(sigmoid_array(np.asarray(beta.item())))
    gain = 1.0 + s
    data = x.data
    pos = data > 0.0
    note_branch(pos)
    note_branch(np.asarray(alpha_live))
    out = np.where(pos, gain * data, slope * data)
    ashape, bshape = alpha.shape, beta.shape

    def bw(g):
        gx = np.where(pos, gain * g, slope * g)
        gp = g * data
        pos_sum = gp[pos].sum()
        neg_sum = gp.sum() - pos_sum
        ga = np.full(ashape, neg_sum if alpha_live else 0.0, dtype=DTYPE)
        gb = np.full(bshape, pos_sum * s * (1.0 - s), dtype=DTYPE)
        return gx, ga, gb

    return _make(out, (x, alpha, beta), "arelu", bw)


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------


def _check_chw(x: Tensor, op: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{op} expects a [C, H, W] tensor, got shape {x.shape}")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded stride-1 cross-correlation.

    ``weight`` is ``[C_out, C_in, k, k]`` with odd ``k``; ``bias`` is ``[C_out]``.
    """
    _check_chw(x, "conv2d")
    c_out, c_in, kh, kw = weight.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input has {x.shape[0]}, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d bias must have shape ({c_out},), got {bias.shape}")
    _, h, w = x.shape
    hw = h * w
    w_data = weight.data
    if kh == 1:
        cols = x.data.reshape(c_in, hw)
        out = w_data.reshape(c_out, c_in) @ cols
        if bias is not None:
            out += bias.data[:, None]

        def bw(g):
            g2 = g.reshape(c_out, hw)
            gx = (w_data.reshape(c_out, c_in).T @ g2).reshape(c_in, h, w)
            gw = (g2 @ cols.T).reshape(weight.shape)
            return gx, gw, g2.sum(axis=1)

        parents = (x, weight) if bias is None else (x, weight, bias)
        return _make(out.reshape(c_out, h, w), parents, "conv2d", bw)

    pad = kh // 2
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    offsets = [(i, j) for i in range(kh) for j in range(kw)]

    def window(arr: np.ndarray, i: int, j: int) -> np.ndarray:
        return arr[:, i : i + h, j : j + w].reshape(arr.shape[0], hw)

    out = np.zeros((c_out, hw), dtype=DTYPE)
    for i, j in offsets:
        out += w_data[:, :, i, j] @ window(xp, i, j)
    if bias is not None:
        out += bias.data[:, None]

    def bw(g):
        g2 = g.reshape(c_out, hw)
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w_data)
        for i, j in offsets:
            gxp[:, i : i + h, j : j + w] += (w_data[:, :, i, j].T @ g2).reshape(c_in, h, w)
            gw[:, :, i, j] = g2 @ window(xp, i, j).T
        gx = gxp[:, pad : pad + h, pad : pad + w]
        return gx, gw, g2.sum(axis=1)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out.reshape(c_out, h, w), parents, "conv2d", bw)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2; ties route the gradient to the first element in scan order."""
    _check_chw(x, "maxpool2d")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    note_branch(arg)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros((c, h // 2, w // 2, 4), dtype=DTYPE)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w)
        return (gx,)

    return _make(out, (x,), "maxpool2d", bw)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """2x2 stride-2 transposed convolution; ``weight`` is ``[C_in, C_out, 2, 2]``."""
    _check_chw(x, "conv_transpose2d")
    c_in, c_out, kh, kw = weight.shape
    if (kh, kw) != (2, 2):
        raise ShapeError(f"conv_transpose2d needs a 2x2 kernel, got {kh}x{kw}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv_transpose2d channel mismatch: input has {x.shape[0]}, weight expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv_transpose2d bias must have shape ({c_out},), got {bias.shape}")
    _, h, w = x.shape
    xd, wd = x.data, weight.data
    # [C_out, 2, 2, H, W] -> [C_out, H, 2, W, 2]
    blocks = np.tensordot(wd, xd, axes=([0], [0]))
    out = blocks.transpose(0, 3, 1, 4, 2).reshape(c_out, 2 * h, 2 * w)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def bw(g):
        gb = g.reshape(c_out, h, 2, w, 2)
        gx = np.einsum("ohiwj,coij->chw", gb, wd, optimize=True)
        gw = np.einsum("ohiwj,chw->coij", gb, xd, optimize=True)
        return gx, gw, g.sum(axis=(1, 2))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(np.ascontiguousarray(out), parents, "conv_transpose2d", bw)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    _check_chw(a, "concat_channels")
    _check_chw(b, "concat_channels")
    if a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels spatial mismatch {a.shape[1:]} vs {b.shape[1:]}")
    ca = a.shape[0]
    out = np.concatenate([a.data, b.data], axis=0)

    def bw(g):
        return g[:ca], g[ca:]

    return _make(out, (a, b), "concat", bw)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    _check_chw(x, "slice_channels")
    c = x.shape[0]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"channel slice [{start}:{stop}] outside 0..{c}")
    out = x.data[start:stop].copy()

    def bw(g):
        gx = np.zeros(x.shape, dtype=DTYPE)
        gx[start:stop] = g
        return (gx,)

    return _make(out, (x,), "slice", bw)
