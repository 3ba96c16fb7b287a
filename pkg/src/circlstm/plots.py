"""Figure rendering for CLI reports (files only, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .pwl import EXACT, build_pwl  # noqa: E402


def _save(fig, path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def plot_sweep(rows, path) -> str:
    """Parameter count and analytic op ratio against block size."""
    ks = [r["block_size"] for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.plot(ks, [r["param_count"] / 1e6 for r in rows], "o-", label="block-circulant")
    a.plot(ks, [r["dense_param_count"] / 1e6 / k for r, k in zip(rows, ks)], "k--", lw=1, label="dense / k")
    a.set_xscale("log", base=2)
    a.set_yscale("log")
    a.set_xlabel("block size k")
    a.set_ylabel("parameters (M)")
    a.legend()
    b.plot(ks, [r["complexity_ratio"] for r in rows], "s-")
    b.set_xscale("log", base=2)
    b.set_xlabel("block size k")
    b.set_ylabel("FFT ops / dense ops")
    b.axhline(1.0, color="grey", lw=0.8)
    return _save(fig, path)


def plot_pwl(path) -> str:
    x = np.linspace(-10, 10, 4001)
    fig, axes = plt.subplots(2, 2, figsize=(9, 5), sharex=True)
    for col, name in enumerate(("sigmoid", "tanh")):
        t = build_pwl(name)
        axes[0, col].plot(x, EXACT[name](x), "k", lw=1, label="exact")
        axes[0, col].plot(x, t(x), "r--", lw=1, label="22 segments")
        axes[0, col].plot(t.breakpoints, t(t.breakpoints), "r.", ms=4)
        axes[0, col].set_title(name)
        axes[0, col].legend()
        axes[1, col].plot(x, t(x) - EXACT[name](x), lw=1)
        axes[1, col].set_ylabel("error")
        axes[1, col].set_xlabel("x")
    return _save(fig, path)


def plot_schedule(report: dict, path) -> str:
    """Per-stage cycles, annotated with replication and operator count."""
    cycles = report["stage_cycles"]
    idx = np.arange(len(cycles))
    fig, ax = plt.subplots(figsize=(max(4, 1.4 * len(cycles)), 3.5))
    bars = ax.bar(idx, cycles, color=["tab:red" if i == report["bottleneck_stage"] else "tab:blue"
                                      for i in idx])
    for i, bar in enumerate(bars):
        ax.annotate(f"R={report['replication'][i]}\n{len(report['stages'][i])} ops",
                    (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=8)
    ax.set_xticks(idx, [f"stage {i + 1}" for i in idx])
    ax.set_ylabel("cycles per frame")
    ax.set_title(f"{report['platform']}: {report['fps']:.0f} FPS (modelled)")
    return _save(fig, path)


def plot_policy(rows, path) -> str:
    """Fixed-point MSE per shift policy and block size."""
    policies = sorted({r["policy"] for r in rows})
    ks = sorted({r["block_size"] for r in rows})
    width = 0.8 / len(policies)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for j, pol in enumerate(policies):
        vals = [next(r["mse"] for r in rows if r["policy"] == pol and r["block_size"] == k) for k in ks]
        ax.bar(np.arange(len(ks)) + j * width, vals, width, label=pol)
    ax.set_yscale("log")
    ax.set_xticks(np.arange(len(ks)) + width * (len(policies) - 1) / 2, [f"k={k}" for k in ks])
    ax.set_ylabel("MSE vs float")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_bench(rows, path) -> str:
    ks = [r["block_size"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [r["speedup"] for r in rows], "o-", label="measured")
    ax.plot(ks, [r["analytic_speedup"] for r in rows], "k--", lw=1, label="op-count ratio")
    ax.set_xscale("log", base=2)
    ax.axhline(1.0, color="grey", lw=0.8)
    ax.set_xlabel("block size k")
    ax.set_ylabel("dense time / FFT time")
    ax.legend()
    return _save(fig, path)
