"""Real-input DFT/IDFT kernels with conjugate-symmetric packing.

Both the float reference and the fixed-point pipeline use the same iterative
radix-2 decimation-in-time structure: bit-reversed load, then log2(k)
butterfly stages. The fixed-point version narrows to the datapath format at
every stage boundary and applies the per-stage shifts of a
:class:`~circlstm.fxp.ShiftPolicy`.

All kernels transform along the last axis; leading axes are batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fxp import (
    Q3_12,
    FxpFormat,
    FxpVector,
    ShiftPolicy,
    log2_exact,
    rshift_rne,
    saturate,
    stage_shifts,
)


def _check_k(k: int) -> int:
    # k == 1 is the degenerate identity transform used by uncompressed layers
    return log2_exact(k)


@lru_cache(maxsize=None)
def _bitrev(k: int) -> np.ndarray:
    n = _check_k(k)
    idx = np.arange(k)
    rev = np.zeros(k, dtype=np.int64)
    for b in range(n):
        rev |= ((idx >> b) & 1) << (n - 1 - b)
    rev.flags.writeable = False
    return rev


@lru_cache(maxsize=None)
def _twiddles(m: int) -> np.ndarray:
    """exp(-2*pi*i*j/m) for j < m/2 (forward direction)."""
    j = np.arange(m // 2)
    tw = np.exp(-2j * np.pi * j / m)
    tw.flags.writeable = False
    return tw


@lru_cache(maxsize=None)
def _twiddles_fxp(m: int, fmt: FxpFormat) -> tuple[np.ndarray, np.ndarray]:
    tw = _twiddles(m)
    scale = float(1 << fmt.frac_bits)
    re = np.clip(np.rint(tw.real * scale), fmt.raw_min, fmt.raw_max).astype(np.int64)
    im = np.clip(np.rint(tw.imag * scale), fmt.raw_min, fmt.raw_max).astype(np.int64)
    re.flags.writeable = False
    im.flags.writeable = False
    return re, im


def fft_radix2(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalised complex radix-2 DIT FFT along the last axis."""
    z = np.asarray(z, dtype=np.complex128)
    k = z.shape[-1]
    _check_k(k)
    lead = z.shape[:-1]
    z = z[..., _bitrev(k)]
    m = 2
    while m <= k:
        tw = _twiddles(m)
        if inverse:
            tw = tw.conj()
        z = z.reshape(*lead, k // m, m)
        a = z[..., : m // 2]
        t = z[..., m // 2:] * tw
        z = np.concatenate([a + t, a - t], axis=-1)
        m *= 2
    return z.reshape(*lead, k)


@dataclass(frozen=True, eq=False)
class PackedSpectrum:
    """Bins 0..k/2 of the DFT of a real length-k signal (possibly batched)."""

    k: int
    bins: np.ndarray

    def __post_init__(self):
        _check_k(self.k)
        bins = np.asarray(self.bins, dtype=np.complex128)
        if bins.shape[-1] != self.k // 2 + 1:
            raise ValueError(f"expected {self.k // 2 + 1} bins, got {bins.shape[-1]}")
        object.__setattr__(self, "bins", bins)

    @property
    def n_bins(self) -> int:
        return self.k // 2 + 1

    def conj(self) -> "PackedSpectrum":
        return PackedSpectrum(self.k, self.bins.conj())


def pack(full: np.ndarray) -> PackedSpectrum:
    """Keep the non-redundant half of a conjugate-symmetric spectrum."""
    full = np.asarray(full, dtype=np.complex128)
    k = full.shape[-1]
    bins = full[..., : k // 2 + 1].copy()
    bins[..., 0] = bins[..., 0].real
    bins[..., -1] = bins[..., -1].real
    return PackedSpectrum(k, bins)


def unpack(s: PackedSpectrum) -> np.ndarray:
    """Rebuild the full length-k spectrum using bin[k-i] = conj(bin[i])."""
    upper = s.bins[..., 1: s.k // 2].conj()[..., ::-1]
    return np.concatenate([s.bins, upper], axis=-1)


def dft(x) -> PackedSpectrum:
    x = np.asarray(x, dtype=np.float64)
    return pack(fft_radix2(x, inverse=False))


def idft(s: PackedSpectrum) -> np.ndarray:
    """Inverse of :func:`dft`, including the 1/k normalisation."""
    return fft_radix2(unpack(s), inverse=True).real / s.k


def spectrum_pointwise_mul(a: PackedSpectrum, b: PackedSpectrum) -> PackedSpectrum:
    if a.k != b.k:
        raise ValueError(f"block size mismatch: {a.k} vs {b.k}")
    return PackedSpectrum(a.k, a.bins * b.bins)


def pointwise_op_count(k: int) -> dict:
    """Real arithmetic for one packed complex pointwise product."""
    bins = k // 2 + 1
    return {"mul": 4 * bins, "add": 2 * bins}


def real_fft_op_count(k: int) -> int:
    """Real adds+multiplies of a length-k real-input FFT (half a complex radix-2 FFT)."""
    if k < 2:
        return 0
    return 5 * k * log2_exact(k) // 2


# --------------------------------------------------------------------------
# fixed point


@dataclass(frozen=True, eq=False)
class FxpSpectrum:
    """Packed spectrum with raw fixed-point real/imaginary parts.

    ``prescale`` is the number of bits of 1/k already folded in by the
    forward transform (non-zero only for ``DISTRIBUTED_IN_DFT``).
    """

    k: int
    re: np.ndarray
    im: np.ndarray
    fmt: FxpFormat = Q3_12
    prescale: int = 0

    def to_complex(self) -> np.ndarray:
        return (self.re + 1j * self.im) * self.fmt.lsb

    @classmethod
    def quantize(cls, s: PackedSpectrum, fmt: FxpFormat = Q3_12) -> "FxpSpectrum":
        scale = float(1 << fmt.frac_bits)
        re = np.rint(np.clip(s.bins.real * scale, fmt.raw_min, fmt.raw_max)).astype(np.int64)
        im = np.rint(np.clip(s.bins.imag * scale, fmt.raw_min, fmt.raw_max)).astype(np.int64)
        return cls(s.k, re, im, fmt)

    def conj(self) -> "FxpSpectrum":
        return FxpSpectrum(self.k, self.re, saturate(-self.im, self.fmt), self.fmt, self.prescale)


def _fft_fxp(re, im, fmt: FxpFormat, tw_fmt: FxpFormat, shifts, inverse: bool):
    k = re.shape[-1]
    lead = re.shape[:-1]
    rev = _bitrev(k)
    re, im = re[..., rev], im[..., rev]
    m, stage = 2, 0
    while m <= k:
        wr, wi = _twiddles_fxp(m, tw_fmt)
        if inverse:
            wi = -wi
        re = re.reshape(*lead, k // m, m)
        im = im.reshape(*lead, k // m, m)
        h = m // 2
        ar, ai, br, bi = re[..., :h], im[..., :h], re[..., h:], im[..., h:]
        # twiddle product registered back to the datapath width
        tr = saturate(rshift_rne(br * wr - bi * wi, tw_fmt.frac_bits), fmt)
        ti = saturate(rshift_rne(br * wi + bi * wr, tw_fmt.frac_bits), fmt)
        sh = shifts[stage]
        re = saturate(rshift_rne(np.concatenate([ar + tr, ar - tr], axis=-1), sh), fmt)
        im = saturate(rshift_rne(np.concatenate([ai + ti, ai - ti], axis=-1), sh), fmt)
        m *= 2
        stage += 1
    return re.reshape(*lead, k), im.reshape(*lead, k)


def dft_fxp(x: FxpVector, policy: ShiftPolicy = ShiftPolicy.DISTRIBUTED_IN_IDFT,
            twiddle_fmt: FxpFormat | None = None) -> FxpSpectrum:
    """Staged fixed-point forward transform of real input.

    Under ``DISTRIBUTED_IN_DFT`` the result is the spectrum divided by k.
    """
    policy = ShiftPolicy.parse(policy)
    k = x.raw.shape[-1]
    _check_k(k)
    fwd, _ = stage_shifts(policy, k)
    re, im = _fft_fxp(x.raw, np.zeros_like(x.raw), x.fmt, twiddle_fmt or x.fmt, fwd, False)
    n = k // 2 + 1
    return FxpSpectrum(k, re[..., :n].copy(), im[..., :n].copy(), x.fmt, sum(fwd))


def unpack_fxp(s: FxpSpectrum) -> tuple[np.ndarray, np.ndarray]:
    upper_re = s.re[..., 1: s.k // 2][..., ::-1]
    upper_im = saturate(-s.im[..., 1: s.k // 2][..., ::-1], s.fmt)
    return (np.concatenate([s.re, upper_re], axis=-1),
            np.concatenate([s.im, upper_im], axis=-1))


def idft_fxp(s: FxpSpectrum, policy: ShiftPolicy = ShiftPolicy.DISTRIBUTED_IN_IDFT,
             twiddle_fmt: FxpFormat | None = None) -> FxpVector:
    """Staged fixed-point inverse transform; only the real part is kept."""
    policy = ShiftPolicy.parse(policy)
    _, inv = stage_shifts(policy, s.k)
    re, im = unpack_fxp(s)
    out_re, _ = _fft_fxp(re, im, s.fmt, twiddle_fmt or s.fmt, inv, True)
    return FxpVector(out_re, s.fmt)
