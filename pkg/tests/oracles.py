"""Independent reference implementations used only by the tests."""

import math
from fractions import Fraction

import numpy as np


def round_half_even(q: Fraction) -> int:
    fl = math.floor(q)
    rem = q - fl
    if rem > Fraction(1, 2) or (rem == Fraction(1, 2) and fl % 2 == 1):
        return fl + 1
    return fl


def clamp(v: int, bits: int = 16) -> int:
    return max(-(1 << (bits - 1)), min((1 << (bits - 1)) - 1, v))


def quantize_ref(x: float, frac: int, bits: int = 16) -> int:
    return clamp(round_half_even(Fraction(x) * (1 << frac)), bits)


def mul_ref(a: int, fa: int, b: int, fb: int, fo: int, bits: int = 16) -> int:
    value = Fraction(a, 1 << fa) * Fraction(b, 1 << fb)
    return clamp(round_half_even(value * (1 << fo)), bits)


def naive_dft(x):
    x = np.asarray(x, dtype=complex)
    k = len(x)
    j = np.arange(k)
    return np.array([np.sum(x * np.exp(-2j * np.pi * f * j / k)) for f in range(k)])


def naive_idft(full):
    full = np.asarray(full, dtype=complex)
    k = len(full)
    j = np.arange(k)
    return np.array([np.sum(full * np.exp(2j * np.pi * j * t / k)) for t in range(k)]) / k


def circulant_dense(rows, m, n):
    """Expand (p, q, k) first rows by explicit loops: block row r is the first row rotated right by r."""
    p, q, k = rows.shape
    D = np.zeros((p * k, q * k))
    for i in range(p):
        for j in range(q):
            for r in range(k):
                for c in range(k):
                    D[i * k + r, j * k + c] = rows[i, j, (c - r) % k]
    return D[:m, :n]
