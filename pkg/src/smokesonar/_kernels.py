"""Hot numeric kernels: numba-jitted loops with pure-numpy fallbacks.

Every kernel exists twice: a ``*_numpy`` vectorized implementation and a
``*_numba`` jitted one (when numba is importable).  The public unsuffixed
names dispatch to one of the two at import time:

* default: numba when available,
* ``SMOKESONAR_NO_NUMBA=1`` in the environment forces the numpy path.

``KERNEL_BACKEND`` records which path is active.  benchmarks/bench_kernels.py
times both paths side by side.

Kernels here are deliberately free of package types: plain float64 arrays in,
plain arrays out, no allocation surprises.  Parallel execution is never used
so results are reproducible run to run.
"""

from __future__ import annotations

import math
import os

import numpy as np

__all__ = [
    "KERNEL_BACKEND",
    "HAVE_NUMBA",
    "rcc_correlate",
    "envelope_correlate",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool2_forward",
    "maxpool2_backward",
    "scatter_add_blocks",
]


def _numba_disabled() -> bool:
    return os.environ.get("SMOKESONAR_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    HAVE_NUMBA = False

KERNEL_BACKEND = "numba" if (HAVE_NUMBA and not _numba_disabled()) else "numpy"


# ---------------------------------------------------------------------------
# Pearson correlation vs. lag (the per-frame ranging profile)
# ---------------------------------------------------------------------------

def rcc_correlate_numpy(emit: np.ndarray, window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation of ``emit`` against every length-len(emit) slice.

    Returns ``(values, degenerate)`` where values[k] is the correlation with
    the slice starting at k and degenerate[k] marks zero-variance slices
    (correlation reported as 0 there).
    """
    m = emit.size
    e = emit - emit.mean()
    se = math.sqrt(float(np.dot(e, e)))
    slices = np.lib.stride_tricks.sliding_window_view(window, m)
    n_lags = slices.shape[0]
    sums = slices.sum(axis=1)
    # e is zero-mean, so sum((w - mean(w)) * e) == w . e
    num = slices @ e
    sq = np.einsum("ij,ij->i", slices, slices)
    var = np.maximum(sq - sums * sums / m, 0.0)
    denom = se * np.sqrt(var)
    degenerate = denom <= 0.0
    values = np.zeros(n_lags)
    np.divide(num, denom, out=values, where=~degenerate)
    return values, degenerate


def _rcc_correlate_loop(emit, window, values, degenerate):
    m = emit.shape[0]
    n_lags = window.shape[0] - m + 1
    e_mean = 0.0
    for i in range(m):
        e_mean += emit[i]
    e_mean /= m
    se2 = 0.0
    for i in range(m):
        d = emit[i] - e_mean
        se2 += d * d
    se = math.sqrt(se2)
    for k in range(n_lags):
        s = 0.0
        sq = 0.0
        num = 0.0
        for i in range(m):
            w = window[k + i]
            s += w
            sq += w * w
            num += w * (emit[i] - e_mean)
        var = sq - s * s / m
        if var < 0.0:
            var = 0.0
        denom = se * math.sqrt(var)
        if denom <= 0.0:
            values[k] = 0.0
            degenerate[k] = True
        else:
            values[k] = num / denom
            degenerate[k] = False


def envelope_correlate_numpy(
    e_re: np.ndarray, e_im: np.ndarray, window: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Envelope and carrier phase of the correlation against a complex
    (analytic) reference.  An exact copy of the real reference scores 1.

    The magnitude is insensitive to the echo's carrier phase, so the peak
    tracks the true delay continuously instead of snapping to the
    carrier-period lattice the real-valued correlation exhibits; the phase
    at the peak recovers the subsample residual.

    Returns (values, phases, degenerate).
    """
    m = e_re.size
    slices = np.lib.stride_tricks.sliding_window_view(window, m)
    n_lags = slices.shape[0]
    sums = slices.sum(axis=1)
    means = sums / m
    num_re = slices @ e_re - sums * (e_re.sum() / m)
    num_im = slices @ e_im - sums * (e_im.sum() / m)
    sq = np.einsum("ij,ij->i", slices, slices)
    var = np.maximum(sq - m * means * means, 0.0)
    e_norm = math.sqrt(float(np.dot(e_re, e_re) + np.dot(e_im, e_im)))
    denom = np.sqrt(var) * e_norm
    degenerate = denom <= 0.0
    values = np.zeros(n_lags)
    np.divide(
        np.sqrt(2.0 * (num_re * num_re + num_im * num_im)),
        denom,
        out=values,
        where=~degenerate,
    )
    # phase of <slice, conj(analytic ref)>: positive when the slice starts
    # past the pulse onset (lag k above the true delay)
    phases = np.arctan2(-num_im, num_re)
    return values, phases, degenerate


def _envelope_correlate_loop(e_re, e_im, window, values, phases, degenerate):
    m = e_re.shape[0]
    n_lags = window.shape[0] - m + 1
    sum_re = 0.0
    sum_im = 0.0
    e_norm2 = 0.0
    for i in range(m):
        sum_re += e_re[i]
        sum_im += e_im[i]
        e_norm2 += e_re[i] * e_re[i] + e_im[i] * e_im[i]
    e_norm = math.sqrt(e_norm2)
    for k in range(n_lags):
        s = 0.0
        sq = 0.0
        dot_re = 0.0
        dot_im = 0.0
        for i in range(m):
            w = window[k + i]
            s += w
            sq += w * w
            dot_re += w * e_re[i]
            dot_im += w * e_im[i]
        mean = s / m
        var = sq - m * mean * mean
        if var < 0.0:
            var = 0.0
        denom = math.sqrt(var) * e_norm
        nr = dot_re - s * (sum_re / m)
        ni = dot_im - s * (sum_im / m)
        phases[k] = math.atan2(-ni, nr)
        if denom <= 0.0:
            values[k] = 0.0
            degenerate[k] = True
        else:
            values[k] = math.sqrt(2.0 * (nr * nr + ni * ni)) / denom
            degenerate[k] = False


# ---------------------------------------------------------------------------
# CNN primitives: valid 2-D convolution (batch) and 2x2 max pooling
# ---------------------------------------------------------------------------

def conv2d_forward_numpy(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid convolution: x (B,C,H,W), w (F,C,kh,kw), b (F) -> (B,F,H',W')."""
    kh, kw = w.shape[2], w.shape[3]
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    y = np.einsum("bchwkl,fckl->bfhw", windows, w, optimize=True)
    return y + b[None, :, None, None]


def _conv2d_forward_loop(x, w, b, y):
    bs, cin, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh = h - kh + 1
    ow = wd - kw + 1
    for n in range(bs):
        for fo in range(f):
            for i in range(oh):
                for j in range(ow):
                    acc = b[fo]
                    for c in range(cin):
                        for p in range(kh):
                            for q in range(kw):
                                acc += x[n, c, i + p, j + q] * w[fo, c, p, q]
                    y[n, fo, i, j] = acc


def conv2d_backward_numpy(x, w, dy, need_dx=True):
    """Gradients of the valid convolution.

    Returns (dw, db, dx); dx is None when need_dx is False (first layer).
    """
    kh, kw = w.shape[2], w.shape[3]
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    dw = np.einsum("bchwkl,bfhw->fckl", windows, dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    if not need_dx:
        return dw, db, None
    # full-correlation of dy with the kernel: pad dy then flip w
    dyp = np.pad(dy, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    win = np.lib.stride_tricks.sliding_window_view(dyp, (kh, kw), axis=(2, 3))
    wflip = w[:, :, ::-1, ::-1]
    dx = np.einsum("bfhwkl,fckl->bchw", win, wflip, optimize=True)
    return dw, db, dx


def _conv2d_backward_loop(x, w, dy, dw, db, dx, need_dx):
    bs, cin, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh = dy.shape[2]
    ow = dy.shape[3]
    for fo in range(f):
        s = 0.0
        for n in range(bs):
            for i in range(oh):
                for j in range(ow):
                    s += dy[n, fo, i, j]
        db[fo] = s
    for fo in range(f):
        for c in range(cin):
            for p in range(kh):
                for q in range(kw):
                    acc = 0.0
                    for n in range(bs):
                        for i in range(oh):
                            for j in range(ow):
                                acc += x[n, c, i + p, j + q] * dy[n, fo, i, j]
                    dw[fo, c, p, q] = acc
    if need_dx:
        for n in range(bs):
            for c in range(cin):
                for i in range(h):
                    for j in range(wd):
                        acc = 0.0
                        for fo in range(f):
                            for p in range(kh):
                                ii = i - p
                                if ii < 0 or ii >= oh:
                                    continue
                                for q in range(kw):
                                    jj = j - q
                                    if jj < 0 or jj >= ow:
                                        continue
                                    acc += dy[n, fo, ii, jj] * w[fo, c, p, q]
                        dx[n, c, i, j] = acc


def maxpool2_forward_numpy(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2 max pooling, stride 2. Returns (y, argmax) with argmax in 0..3.

    Even H and W are required (the 96->92->46->44->22 chain guarantees it).
    Ties resolve to the first position in row-major order, matching the
    loop implementation.
    """
    b, c, h, w = x.shape
    blocks = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(b, c, h // 2, w // 2, 4)
    arg = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return y, arg.astype(np.int8)


def maxpool2_backward_numpy(dy: np.ndarray, arg: np.ndarray, h: int, w: int) -> np.ndarray:
    b, c, oh, ow = dy.shape
    dxb = np.zeros((b, c, oh, ow, 4))
    np.put_along_axis(dxb, arg[..., None].astype(np.int64), dy[..., None], axis=-1)
    dx = dxb.reshape(b, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
    return dx


def _maxpool2_forward_loop(x, y, arg):
    b, c, h, w = x.shape
    for n in range(b):
        for ch in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    best = x[n, ch, 2 * i, 2 * j]
                    bestk = 0
                    k = 0
                    for p in range(2):
                        for q in range(2):
                            v = x[n, ch, 2 * i + p, 2 * j + q]
                            if v > best:
                                best = v
                                bestk = k
                            k += 1
                    y[n, ch, i, j] = best
                    arg[n, ch, i, j] = bestk


def _maxpool2_backward_loop(dy, arg, dx):
    b, c, oh, ow = dy.shape
    for n in range(b):
        for ch in range(c):
            for i in range(oh):
                for j in range(ow):
                    k = arg[n, ch, i, j]
                    p = k // 2
                    q = k % 2
                    dx[n, ch, 2 * i + p, 2 * j + q] = dy[n, ch, i, j]


# ---------------------------------------------------------------------------
# Echo rendering: scatter-add per-frame delayed pulse blocks
# ---------------------------------------------------------------------------

def scatter_add_blocks_numpy(out, blocks, starts, gains):
    """out[starts[i] : starts[i] + blocklen] += gains[i] * blocks[i].

    blocks is (n, blocklen); placements falling outside ``out`` are clipped.
    """
    n_out = out.size
    blen = blocks.shape[1]
    for i in range(starts.size):
        lo = int(starts[i])
        hi = lo + blen
        a = max(lo, 0)
        b = min(hi, n_out)
        if a < b:
            out[a:b] += gains[i] * blocks[i, a - lo : b - lo]


def _scatter_add_blocks_loop(out, blocks, starts, gains):
    n_out = out.shape[0]
    blen = blocks.shape[1]
    for i in range(starts.shape[0]):
        g = gains[i]
        s = starts[i]
        lo = 0 if s >= 0 else -s
        hi = blen if s + blen <= n_out else n_out - s
        for p in range(lo, hi):
            out[s + p] += g * blocks[i, p]


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _rcc_jit = njit(cache=True)(_rcc_correlate_loop)
    _env_jit = njit(cache=True)(_envelope_correlate_loop)
    _conv_fwd_jit = njit(cache=True)(_conv2d_forward_loop)
    _conv_bwd_jit = njit(cache=True)(_conv2d_backward_loop)
    _pool_fwd_jit = njit(cache=True)(_maxpool2_forward_loop)
    _pool_bwd_jit = njit(cache=True)(_maxpool2_backward_loop)
    _scatter_jit = njit(cache=True)(_scatter_add_blocks_loop)

    def rcc_correlate_numba(emit, window):
        n_lags = window.size - emit.size + 1
        values = np.empty(n_lags)
        degenerate = np.zeros(n_lags, dtype=np.bool_)
        _rcc_jit(np.ascontiguousarray(emit), np.ascontiguousarray(window), values, degenerate)
        return values, degenerate

    def envelope_correlate_numba(e_re, e_im, window):
        n_lags = window.size - e_re.size + 1
        values = np.empty(n_lags)
        phases = np.empty(n_lags)
        degenerate = np.zeros(n_lags, dtype=np.bool_)
        _env_jit(
            np.ascontiguousarray(e_re),
            np.ascontiguousarray(e_im),
            np.ascontiguousarray(window),
            values,
            phases,
            degenerate,
        )
        return values, phases, degenerate

    def conv2d_forward_numba(x, w, b):
        bs, _, h, wd = x.shape
        f, _, kh, kw = w.shape
        y = np.empty((bs, f, h - kh + 1, wd - kw + 1))
        _conv_fwd_jit(x, w, b, y)
        return y

    def conv2d_backward_numba(x, w, dy, need_dx=True):
        dw = np.empty_like(w)
        db = np.empty(w.shape[0])
        dx = np.empty_like(x) if need_dx else np.empty((1, 1, 1, 1))
        _conv_bwd_jit(x, w, dy, dw, db, dx, need_dx)
        return dw, db, (dx if need_dx else None)

    def maxpool2_forward_numba(x):
        b, c, h, w = x.shape
        y = np.empty((b, c, h // 2, w // 2))
        arg = np.empty((b, c, h // 2, w // 2), dtype=np.int8)
        _pool_fwd_jit(x, y, arg)
        return y, arg

    def maxpool2_backward_numba(dy, arg, h, w):
        b, c, _, _ = dy.shape
        dx = np.zeros((b, c, h, w))
        _pool_bwd_jit(dy, arg, dx)
        return dx

    def scatter_add_blocks_numba(out, blocks, starts, gains):
        _scatter_jit(out, np.ascontiguousarray(blocks), starts, gains)


if KERNEL_BACKEND == "numba":
    rcc_correlate = rcc_correlate_numba
    envelope_correlate = envelope_correlate_numba
    conv2d_forward = conv2d_forward_numba
    conv2d_backward = conv2d_backward_numba
    maxpool2_forward = maxpool2_forward_numba
    maxpool2_backward = maxpool2_backward_numba
    scatter_add_blocks = scatter_add_blocks_numba
else:
    rcc_correlate = rcc_correlate_numpy
    envelope_correlate = envelope_correlate_numpy
    conv2d_forward = conv2d_forward_numpy
    conv2d_backward = conv2d_backward_numpy
    maxpool2_forward = maxpool2_forward_numpy
    maxpool2_backward = maxpool2_backward_numpy
    scatter_add_blocks = scatter_add_blocks_numpy
