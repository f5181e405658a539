"""Low-level resampling ops in plain PyTorch.

Filters are separable 1-D FIR kernels. Shapes follow the usual
[batch, channels, height, width] convention.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.signal
import torch
import torch.nn.functional as F


def design_lowpass_filter(numtaps: int, cutoff: float, width: float, fs: float) -> torch.Tensor | None:
    """Kaiser-windowed sinc low-pass filter, or None for the identity."""
    if numtaps == 1:
        return None
    f = scipy.signal.firwin(numtaps=numtaps, cutoff=cutoff, width=width, fs=fs)
    return torch.as_tensor(f, dtype=torch.float32)


def box_filter(numtaps: int) -> torch.Tensor | None:
    """Unnormalized-gain box filter, i.e. nearest-neighbour interpolation."""
    if numtaps == 1:
        return None
    return torch.full([numtaps], 1.0 / numtaps)


def upfirdn2d_direct(x, f, up=1, down=1, padding=(0, 0, 0, 0), gain=1.0):
    """Upsample by zero insertion, pad, filter separably, then decimate.

    ``padding`` is ``(x0, x1, y0, y1)``; negative values crop. Reference
    implementation with depthwise convolutions; :func:`upfirdn2d` gives the
    same result through precomputed resampling matrices.
    """
    B, C, H, W = x.shape
    px0, px1, py0, py1 = (int(p) for p in padding)
    if up > 1:
        x = x.reshape(B, C, H, 1, W, 1)
        x = F.pad(x, [0, up - 1, 0, 0, 0, up - 1])
        x = x.reshape(B, C, H * up, W * up)
    x = F.pad(x, [max(px0, 0), max(px1, 0), max(py0, 0), max(py1, 0)])
    x = x[:, :, max(-py0, 0): x.shape[2] - max(-py1, 0), max(-px0, 0): x.shape[3] - max(-px1, 0)]

    if f is None:
        if gain != 1:
            x = x * gain
        return x[:, :, ::down, ::down]

    f = (f.to(x.dtype) * math.sqrt(gain)).flip(0)
    k = f.numel()
    wx = f.view(1, 1, 1, k).expand(C, 1, 1, k)
    wy = f.view(1, 1, k, 1).expand(C, 1, k, 1)
    x = F.conv2d(x, wx, groups=C, stride=(1, down))
    x = F.conv2d(x, wy, groups=C, stride=(down, 1))
    return x


_MATRIX_CACHE: dict = {}


def resample_matrix(n, f, up=1, down=1, pad=(0, 0), gain=1.0, dtype=torch.float32):
    """Dense [n, n_out] matrix of the 1-D up/pad/filter/down chain (``row @ M``)."""
    taps = None if f is None else tuple(float(v) for v in f.reshape(-1))
    key = (n, taps, up, down, tuple(int(p) for p in pad), float(gain), dtype)
    mat = _MATRIX_CACHE.get(key)
    if mat is None:
        x = torch.eye(n, dtype=torch.float64)
        if up > 1:
            x = F.pad(x[:, :, None], [0, up - 1]).reshape(n, n * up)
        x = F.pad(x, [max(pad[0], 0), max(pad[1], 0)])
        x = x[:, max(-pad[0], 0): x.shape[1] - max(-pad[1], 0)]
        if f is None:
            out = x[:, ::down] * gain
        else:
            k = f.double().flip(0).reshape(1, 1, -1) * gain
            out = F.conv1d(x[:, None], k, stride=down)
        mat = out.reshape(n, -1).to(dtype)
        if len(_MATRIX_CACHE) > 4096:
            _MATRIX_CACHE.clear()
        _MATRIX_CACHE[key] = mat
    return mat


def upfirdn2d(x, f, up=1, down=1, padding=(0, 0, 0, 0), gain=1.0):
    """Upsample by zero insertion, pad, filter separably, then decimate.

    ``padding`` is ``(x0, x1, y0, y1)``; negative values crop. ``gain`` scales
    the 2-D result.
    """
    px0, px1, py0, py1 = (int(p) for p in padding)
    g = math.sqrt(gain)
    mx = resample_matrix(x.shape[3], f, up, down, (px0, px1), g, x.dtype)
    my = resample_matrix(x.shape[2], f, up, down, (py0, py1), g, x.dtype)
    return my.t() @ (x @ mx)


def filtered_lrelu(x, fu, fd, b, up=1, down=1, padding=(0, 0, 0, 0), gain=math.sqrt(2), slope=0.2, clamp=None):
    """Bias, upsample, leaky ReLU, downsample.

    The nonlinearity runs at the temporarily raised sampling rate so that the
    harmonics it creates can be removed by ``fd`` before decimation.
    """
    if b is not None:
        x = x + b.view(1, -1, 1, 1).to(x.dtype)
    x = upfirdn2d(x, fu, up=up, padding=padding, gain=up ** 2)
    x = F.leaky_relu(x, slope)
    if clamp is None:
        # the gain rides along in the downsampling matrices
        return upfirdn2d(x, fd, down=down, gain=gain ** 2)
    x = (x * gain).clamp(-clamp, clamp)
    return upfirdn2d(x, fd, down=down)


def _shift(x, s: int, dim: int):
    """out[j] = x[j - s] along ``dim`` with zero fill."""
    n = x.shape[dim]
    out = torch.zeros_like(x)
    if abs(s) >= n:
        return out
    src = x.narrow(dim, max(-s, 0), n - abs(s))
    out.narrow(dim, max(s, 0), n - abs(s)).copy_(src)
    return out


def _interval_mask(n: int, lo: int, hi: int):
    m = torch.zeros(n)
    lo, hi = max(lo, 0), min(hi, n)
    if lo < hi:
        m[lo:hi] = 1
    return m


def integer_translate(x, tx: int, ty: int):
    """Shift content right by ``tx`` and down by ``ty`` pixels.

    Returns the shifted image and a mask of pixels with defined values.
    """
    tx, ty = int(round(tx)), int(round(ty))
    H, W = x.shape[-2:]
    z = _shift(_shift(x, tx, -1), ty, -2)
    mask = _interval_mask(H, ty, H + ty)[:, None] * _interval_mask(W, tx, W + tx)[None, :]
    return z, mask.to(x).expand_as(x)


def _lanczos(u, a):
    return np.sinc(u) * np.sinc(u / a)


def _frac_shift_1d(x, t: float, dim: int, a: int):
    i = math.floor(t)
    frac = t - i
    taps = np.arange(2 * a) - (a - 1)
    w = _lanczos(taps - frac, a)
    w = w / w.sum()
    out = torch.zeros_like(x)
    for n, wn in zip(taps, w):
        out = out + float(wn) * _shift(x, i + int(n), dim)
    n_pix = x.shape[dim]
    return out, _interval_mask(n_pix, i + a, n_pix + i - a + 1)


def fractional_translate(x, tx: float, ty: float, a: int = 3):
    """Sub-pixel shift with a Lanczos-``a`` kernel; returns (image, valid mask)."""
    z, mx = _frac_shift_1d(x, float(tx), -1, a)
    z, my = _frac_shift_1d(z, float(ty), -2, a)
    mask = my[:, None] * mx[None, :]
    return z, mask.to(x).expand_as(x)


def gaussian_kernel1d(sigma: float, radius: int | None = None) -> torch.Tensor:
    if radius is None:
        radius = max(1, int(math.ceil(3 * sigma)))
    t = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-0.5 * (t / sigma) ** 2)
    return (k / k.sum()).float()


def gaussian_blur(x, sigma: float):
    """Separable Gaussian blur with edge replication (constants are preserved)."""
    if sigma <= 0:
        return x
    k = gaussian_kernel1d(sigma).to(x)
    r = (k.numel() - 1) // 2
    C = x.shape[1]
    x = F.pad(x, [r, r, r, r], mode="replicate")
    x = F.conv2d(x, k.view(1, 1, 1, -1).expand(C, 1, 1, -1), groups=C)
    x = F.conv2d(x, k.view(1, 1, -1, 1).expand(C, 1, -1, 1), groups=C)
    return x
