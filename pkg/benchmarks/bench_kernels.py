#!/usr/bin/env python3
"""Benchmark the numba-jitted kernels against their pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--repeat 5]

Both implementations are imported explicitly, so the SMOKESONAR_NO_NUMBA
dispatch flag plays no role here; results also sanity-check that the two
paths agree numerically.
"""

import argparse
import time

import numpy as np

from smokesonar import _kernels
from smokesonar.frontend import ChirpConfig, windowed_chirp
from smokesonar.ranging import analytic_reference


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if not _kernels.HAVE_NUMBA:
        print("numba is not importable; nothing to compare")
        return

    rng = np.random.default_rng(0)
    cfg = ChirpConfig()
    chirp = windowed_chirp(cfg)
    e_re, e_im = analytic_reference(chirp)
    rows = []

    # per-frame correlation kernels: 1000 frames worth
    frames = rng.normal(0, 0.01, (1000, cfg.frame_len))
    frames[:, 100:164] += chirp.samples * 0.05

    def rcc_np():
        for f in frames:
            _kernels.rcc_correlate_numpy(chirp.samples, f)

    def rcc_nb():
        for f in frames:
            _kernels.rcc_correlate_numba(chirp.samples, f)

    def env_np():
        for f in frames:
            _kernels.envelope_correlate_numpy(e_re, e_im, f)

    def env_nb():
        for f in frames:
            _kernels.envelope_correlate_numba(e_re, e_im, f)

    a, _ = _kernels.rcc_correlate_numpy(chirp.samples, frames[0])
    b, _ = _kernels.rcc_correlate_numba(chirp.samples, frames[0])
    assert np.allclose(a, b, atol=1e-10)
    ea, _, _ = _kernels.envelope_correlate_numpy(e_re, e_im, frames[0])
    eb, _, _ = _kernels.envelope_correlate_numba(e_re, e_im, frames[0])
    assert np.allclose(ea, eb, atol=1e-10)
    rows.append(("rcc_correlate x1000", timeit(rcc_np, args.repeat), timeit(rcc_nb, args.repeat)))
    rows.append(("envelope_correlate x1000", timeit(env_np, args.repeat), timeit(env_nb, args.repeat)))

    # CNN kernels on a training-like batch
    x = rng.normal(0, 1, (16, 1, 96, 96))
    w1 = rng.normal(0, 0.05, (8, 1, 5, 5))
    b1 = np.zeros(8)
    y_np = _kernels.conv2d_forward_numpy(x, w1, b1)
    y_nb = _kernels.conv2d_forward_numba(x, w1, b1)
    assert np.allclose(y_np, y_nb, atol=1e-9)
    rows.append((
        "conv2d_forward 16x96x96",
        timeit(lambda: _kernels.conv2d_forward_numpy(x, w1, b1), args.repeat),
        timeit(lambda: _kernels.conv2d_forward_numba(x, w1, b1), args.repeat),
    ))
    dy = rng.normal(0, 1, y_np.shape)
    g_np = _kernels.conv2d_backward_numpy(x, w1, dy)
    g_nb = _kernels.conv2d_backward_numba(x, w1, dy)
    assert np.allclose(g_np[0], g_nb[0], atol=1e-8) and np.allclose(g_np[2], g_nb[2], atol=1e-8)
    rows.append((
        "conv2d_backward 16x96x96",
        timeit(lambda: _kernels.conv2d_backward_numpy(x, w1, dy), args.repeat),
        timeit(lambda: _kernels.conv2d_backward_numba(x, w1, dy), args.repeat),
    ))

    p_np = _kernels.maxpool2_forward_numpy(y_np)
    p_nb = _kernels.maxpool2_forward_numba(y_np)
    assert np.allclose(p_np[0], p_nb[0])
    rows.append((
        "maxpool2_forward",
        timeit(lambda: _kernels.maxpool2_forward_numpy(y_np), args.repeat),
        timeit(lambda: _kernels.maxpool2_forward_numba(y_np), args.repeat),
    ))

    # echo scatter for a 60 s scene
    blocks = rng.normal(0, 0.02, (6200, 192))
    starts = (np.arange(6200, dtype=np.int64) * 464) + 100
    gains = np.abs(rng.normal(0.03, 0.01, 6200))
    out_np = np.zeros(6200 * 464 + 1000)
    out_nb = np.zeros_like(out_np)
    _kernels.scatter_add_blocks_numpy(out_np, blocks, starts, gains)
    _kernels.scatter_add_blocks_numba(out_nb, blocks, starts, gains)
    assert np.allclose(out_np, out_nb)
    rows.append((
        "scatter_add_blocks 60s",
        timeit(lambda: _kernels.scatter_add_blocks_numpy(np.zeros_like(out_np), blocks, starts, gains), args.repeat),
        timeit(lambda: _kernels.scatter_add_blocks_numba(np.zeros_like(out_np), blocks, starts, gains), args.repeat),
    ))

    print(f"{'kernel':34s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for name, t_np, t_nb in rows:
        print(f"{name:34s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
