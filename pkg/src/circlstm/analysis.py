"""Experiments shared by the CLI and the acceptance suite."""

from __future__ import annotations

import time

import numpy as np

from .circulant import (
    BlockCirculantMatrix,
    CallCounters,
    SpectralWeights,
    circulant_matvec_ops,
    compression_stats,
    dense_matvec_ops,
    expand_to_dense,
    matvec_fft,
    matvec_fft_fxp,
    matvec_naive,
)
from .fxp import Q3_12, FxpFormat, ShiftPolicy, quantize_array


def sweep_rows(arch, ks=(1, 2, 4, 8, 16)) -> list[dict]:
    """Compression statistics per block size; ``ratio_to_next`` compares each row with the next k."""
    rows = [compression_stats(arch, k) for k in ks]
    for a, b in zip(rows, rows[1:]):
        a["ratio_to_next"] = a["param_count"] / b["param_count"]
    if rows:
        rows[-1]["ratio_to_next"] = None
    return rows


def policy_mse(k: int, policy, vectors: int = 1000, seed: int = 0, m: int = 64, n: int = 64,
               fmt: FxpFormat = Q3_12) -> float:
    """MSE of the fixed-point spectral mat-vec against the float product on the same quantized inputs.

    Weights are uniform in +-1/sqrt(n), inputs uniform in [-1, 1); the corpus
    depends only on ``(k, seed, m, n)``, so every policy sees the same data.
    """
    rng = np.random.default_rng(seed)
    B = BlockCirculantMatrix.random(m, n, k, rng)
    W = SpectralWeights.from_matrix(B, fmt)
    xq = quantize_array(rng.uniform(-1, 1, (vectors, n)), fmt)
    ref = matvec_naive(B, xq.to_float())
    out = matvec_fft_fxp(W, xq, ShiftPolicy.parse(policy)).to_float()
    return float(np.mean((out - ref) ** 2))


def policy_rows(ks=(4, 8, 16), vectors: int = 1000, seed: int = 0, m: int = 64, n: int = 64) -> list[dict]:
    rows = []
    for k in ks:
        for pol in ShiftPolicy:
            rows.append({"block_size": k, "policy": pol.value,
                         "mse": policy_mse(k, pol, vectors, seed, m, n)})
    return rows


def fused_layer_shapes(arch, layer: int = 0) -> list[tuple[str, int, int]]:
    """Matrices one direction of a layer multiplies per step, gates fused into one."""
    n = arch.layer_input_dim(layer) + arch.output_dim
    shapes = [(f"l{layer}.gates", 4 * arch.hidden_dim, n)]
    if arch.projection:
        shapes.append((f"l{layer}.W_ym", arch.projection_dim, arch.hidden_dim))
    return shapes


def bench_layer(arch, k: int, frames: int = 32, repetitions: int = 3, seed: int = 0) -> dict:
    """Host wall-clock of one layer's per-step mat-vecs, spectral path vs dense path.

    Frames are processed one at a time, as a recurrent step requires. The
    best of ``repetitions`` runs is kept for each path.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    if frames < 1:
        raise ValueError("frames must be at least 1")
    rng = np.random.default_rng(seed)
    shapes = fused_layer_shapes(arch, 0)
    mats = [BlockCirculantMatrix.random(m, n, k, rng) for _, m, n in shapes]
    spectral = [SpectralWeights.from_matrix(B) for B in mats]
    dense = [expand_to_dense(B) for B in mats]
    xs = [rng.uniform(-1, 1, (frames, B.n)) for B in mats]

    def run_fft(counters=None):
        for W, x in zip(spectral, xs):
            for t in range(frames):
                matvec_fft(W, x[t], counters)

    def run_dense():
        for D, x in zip(dense, xs):
            for t in range(frames):
                D @ x[t]

    fft_t, dense_t = [], []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        run_fft()
        fft_t.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        run_dense()
        dense_t.append(time.perf_counter() - t0)
    counters = CallCounters()
    run_fft(counters)
    worst = max(float(np.abs(matvec_fft(W, x[0]) - D @ x[0]).max())
                for W, D, x in zip(spectral, dense, xs))
    fft_ops = sum(circulant_matvec_ops(m, n, k) for _, m, n in shapes)
    dense_ops = sum(dense_matvec_ops(m, n) for _, m, n in shapes)
    return {
        "block_size": k,
        "matrices": ";".join(f"{m}x{n}" for _, m, n in shapes),
        "frames": frames,
        "fft_fps": frames / min(fft_t),
        "dense_fps": frames / min(dense_t),
        "speedup": min(dense_t) / min(fft_t),
        "analytic_speedup": dense_ops / fft_ops,
        "fft_ops_per_frame": fft_ops,
        "dense_ops_per_frame": dense_ops,
        "dft_calls": counters.dft_calls,
        "idft_calls": counters.idft_calls,
        "pointwise_calls": counters.pointwise_calls,
        "max_abs_diff": worst,
    }


def bench_stats_check(arch, k: int) -> dict:
    """compression_stats over the benched shapes, for cross-checking bench op counts."""

    class _Shapes:
        block_size = k

        def matrix_shapes(self):
            return fused_layer_shapes(arch, 0)

        def vector_param_count(self):
            return 0

    return compression_stats(_Shapes(), k)
