"""Piece-wise linear sigmoid/tanh with 22 segments.

Tables are built on [0, 8] with 11 chord segments whose breakpoints equalise
the chord error (greedy maximal segments, bisection on the error target),
then mirrored onto [-8, 0]. Outside [-8, 8] the output clamps to the
asymptote.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fxp import Q3_12, FxpFormat, FxpScalar, FxpVector, fxp_add, fxp_mul, quantize_array

N_SEGMENTS = 22
DOMAIN = 8.0
MAX_ERROR = 0.01
COEF_FMT = FxpFormat(frac_bits=14)  # slopes/intercepts, |value| < 2


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


EXACT = {"sigmoid": sigmoid, "tanh": np.tanh}
_ASYMPTOTES = {"sigmoid": (0.0, 1.0), "tanh": (-1.0, 1.0)}


def _chord_error(f, a, b, samples=257):
    t = np.linspace(a, b, samples)
    chord = f(a) + (f(b) - f(a)) * (t - a) / (b - a)
    return float(np.abs(f(t) - chord).max())


def _cover(f, lo, hi, tol, limit):
    # chord error grows with segment length on the concave half-domain, so bisection is valid
    pts = [lo]
    x = lo
    while x < hi and len(pts) <= limit + 1:
        if _chord_error(f, x, hi) <= tol:
            y = hi
        else:
            a, b = x, hi
            for _ in range(48):
                mid = 0.5 * (a + b)
                if _chord_error(f, x, mid) <= tol:
                    a = mid
                else:
                    b = mid
            y = a
        pts.append(y)
        x = y
    return pts


@dataclass(frozen=True, eq=False)
class PwlTable:
    name: str
    breakpoints: np.ndarray  # 23 increasing values, segment i is [b_i, b_{i+1})
    slopes: np.ndarray
    intercepts: np.ndarray
    clamp_low: float
    clamp_high: float
    max_error: float

    @property
    def n_segments(self) -> int:
        return len(self.slopes)

    def __call__(self, x):
        """Float evaluation (used for plotting and error checks)."""
        x = np.asarray(x, dtype=np.float64)
        seg = np.clip(np.searchsorted(self.breakpoints, x, side="right") - 1, 0, self.n_segments - 1)
        y = self.slopes[seg] * x + self.intercepts[seg]
        y = np.where(x < self.breakpoints[0], self.clamp_low, y)
        return np.where(x >= self.breakpoints[-1], self.clamp_high, y)

    def quantized(self, fmt: FxpFormat = Q3_12) -> "QuantizedPwl":
        return _quantized(self, fmt)


@dataclass(frozen=True, eq=False)
class QuantizedPwl:
    table: PwlTable
    fmt: FxpFormat
    breakpoints: np.ndarray  # raw, in fmt
    slopes: FxpVector  # COEF_FMT
    intercepts: FxpVector  # fmt
    clamp_low: int
    clamp_high: int


@lru_cache(maxsize=None)
def _quantized_cached(name: str, fmt: FxpFormat) -> QuantizedPwl:
    return _build_quantized(build_pwl(name), fmt)


def _quantized(table: PwlTable, fmt: FxpFormat) -> QuantizedPwl:
    if table is build_pwl(table.name):
        return _quantized_cached(table.name, fmt)
    return _build_quantized(table, fmt)


def _build_quantized(table: PwlTable, fmt: FxpFormat) -> QuantizedPwl:
    return QuantizedPwl(
        table,
        fmt,
        quantize_array(table.breakpoints, fmt).raw,
        quantize_array(table.slopes, COEF_FMT),
        quantize_array(table.intercepts, fmt),
        int(quantize_array(table.clamp_low, fmt).raw),
        int(quantize_array(table.clamp_high, fmt).raw),
    )


@lru_cache(maxsize=None)
def build_pwl(name: str) -> PwlTable:
    if name not in EXACT:
        raise ValueError(f"unknown activation {name!r}")
    f = EXACT[name]
    half = N_SEGMENTS // 2
    lo, hi = 0.0, 0.1
    for _ in range(50):
        mid = 0.5 * (lo + hi)
        if len(_cover(f, 0.0, DOMAIN, mid, half)) - 1 <= half:
            hi = mid
        else:
            lo = mid
    right = np.array(_cover(f, 0.0, DOMAIN, hi, half))
    if len(right) - 1 < half:
        # fewer segments were enough; split the longest ones to keep the count fixed
        right = list(right)
        while len(right) - 1 < half:
            i = int(np.argmax(np.diff(right)))
            right.insert(i + 1, 0.5 * (right[i] + right[i + 1]))
        right = np.array(right)
    bps = np.concatenate([-right[::-1], right[1:]])
    ys = f(bps)
    slopes = np.diff(ys) / np.diff(bps)
    intercepts = ys[:-1] - slopes * bps[:-1]
    low, high = _ASYMPTOTES[name]
    table = PwlTable(name, bps, slopes, intercepts, low, high, 0.0)
    grid = np.linspace(-DOMAIN, DOMAIN, 100_001)
    err = float(np.abs(table(grid) - f(grid)).max())
    if not err < MAX_ERROR:
        raise RuntimeError(f"{name} table misses the error target: {err}")
    object.__setattr__(table, "max_error", err)
    for arr in (bps, slopes, intercepts):
        arr.flags.writeable = False
    return table


def pwl_eval(table: "PwlTable | QuantizedPwl", x, ops: Counter | None = None):
    """Fixed-point evaluation: locate the segment by comparison, then one multiply and one add.

    ``x`` is an :class:`FxpScalar` or :class:`FxpVector`; the result has the
    same format. ``ops`` (if given) accumulates per-element ``mul``/``add``
    counts and the number of comparisons.
    """
    q = table if isinstance(table, QuantizedPwl) else table.quantized(x.fmt)
    if q.fmt != x.fmt:
        q = q.table.quantized(x.fmt)
    scalar = isinstance(x, FxpScalar)
    raw = np.atleast_1d(np.asarray(x.raw, dtype=np.int64))
    n_seg = len(q.slopes)
    seg = np.clip(np.searchsorted(q.breakpoints, raw, side="right") - 1, 0, n_seg - 1)
    xv = FxpVector(raw, x.fmt)
    y = fxp_add(fxp_mul(FxpVector(q.slopes.raw[seg], COEF_FMT), xv, out=x.fmt),
                FxpVector(q.intercepts.raw[seg], x.fmt)).raw
    y = np.where(raw < q.breakpoints[0], q.clamp_low, y)
    y = np.where(raw >= q.breakpoints[-1], q.clamp_high, y)
    if ops is not None:
        ops["eval"] += raw.size
        ops["mul"] += raw.size
        ops["add"] += raw.size
        ops["compare"] += raw.size * int(np.ceil(np.log2(len(q.breakpoints) + 1)))
    if scalar:
        return FxpScalar(int(y[0]), x.fmt)
    return FxpVector(y.reshape(np.shape(x.raw)), x.fmt)
