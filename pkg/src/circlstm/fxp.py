"""Bit-accurate signed fixed-point arithmetic.

Scalars carry their raw two's-complement value as a Python ``int``; vectors
carry an ``int64`` numpy array. Every narrowing step rounds half-to-even and
saturates, there is no wraparound anywhere.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Union

import numpy as np

DATAPATH_BITS = 16
WIDE_BITS = 32

_QFMT = re.compile(r"^[qQ](\d+)\.(\d+)$")


@dataclass(frozen=True)
class FxpFormat:
    """Signed Q-format: one sign bit, ``int_bits`` integer bits, ``frac_bits`` fractional bits."""

    frac_bits: int = 12
    total_bits: int = DATAPATH_BITS

    def __post_init__(self):
        if self.total_bits not in (DATAPATH_BITS, WIDE_BITS):
            raise ValueError(f"unsupported width {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(f"frac_bits must be in [0, {self.total_bits}), got {self.frac_bits}")

    @property
    def int_bits(self) -> int:
        return self.total_bits - 1 - self.frac_bits

    @property
    def raw_min(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def raw_max(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return self.raw_min * self.lsb

    @property
    def max_value(self) -> float:
        return self.raw_max * self.lsb

    @classmethod
    def parse(cls, text: str) -> "FxpFormat":
        """Parse ``"q3.12"`` style strings (integer bits exclude the sign bit)."""
        match = _QFMT.match(text.strip())
        if match is None:
            raise ValueError(f"bad fixed-point format {text!r}, expected q<int>.<frac>")
        int_bits, frac_bits = int(match.group(1)), int(match.group(2))
        if int_bits + frac_bits + 1 != DATAPATH_BITS:
            raise ValueError(f"{text!r} is not a {DATAPATH_BITS}-bit format")
        return cls(frac_bits=frac_bits)

    def __str__(self) -> str:
        return f"q{self.int_bits}.{self.frac_bits}"


Q3_12 = FxpFormat(12)


@dataclass(frozen=True)
class FxpScalar:
    raw: int
    fmt: FxpFormat = Q3_12

    def __post_init__(self):
        if not self.fmt.raw_min <= self.raw <= self.fmt.raw_max:
            raise ValueError(f"raw value {self.raw} does not fit {self.fmt}")

    def to_float(self) -> float:
        return self.raw * self.fmt.lsb

    def __float__(self) -> float:
        return self.to_float()


@dataclass(frozen=True, eq=False)
class FxpVector:
    raw: np.ndarray
    fmt: FxpFormat = Q3_12

    def __post_init__(self):
        raw = np.asarray(self.raw, dtype=np.int64)
        if raw.size and (raw.min() < self.fmt.raw_min or raw.max() > self.fmt.raw_max):
            raise ValueError(f"raw values do not fit {self.fmt}")
        object.__setattr__(self, "raw", raw)

    def __len__(self) -> int:
        return self.raw.shape[-1]

    def __getitem__(self, idx):
        item = self.raw[idx]
        if np.ndim(item) == 0:
            return FxpScalar(int(item), self.fmt)
        return FxpVector(item, self.fmt)

    @property
    def shape(self):
        return self.raw.shape

    def to_float(self) -> np.ndarray:
        return self.raw * self.fmt.lsb

    def __eq__(self, other):
        return (
            isinstance(other, FxpVector)
            and self.fmt == other.fmt
            and np.array_equal(self.raw, other.raw)
        )


Fxp = Union[FxpScalar, FxpVector]


def saturate(raw, fmt: FxpFormat):
    """Clamp raw integers into ``fmt``'s range."""
    if isinstance(raw, (int, np.integer)):
        return int(min(max(int(raw), fmt.raw_min), fmt.raw_max))
    return np.clip(raw, fmt.raw_min, fmt.raw_max)


def rshift_rne(raw, shift: int):
    """Arithmetic right shift with round-half-to-even; negative ``shift`` shifts left."""
    if shift <= 0:
        if isinstance(raw, (int, np.integer)):
            return int(raw) << -shift
        return np.left_shift(raw, -shift)
    if isinstance(raw, (int, np.integer)):
        raw = int(raw)
        q = raw >> shift
        r = raw - (q << shift)
        half = 1 << (shift - 1)
        return q + (1 if r > half or (r == half and q & 1) else 0)
    raw = np.asarray(raw, dtype=np.int64)
    q = raw >> shift
    r = raw - (q << shift)
    half = 1 << (shift - 1)
    up = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + up.astype(np.int64)


def quantize(x: float, fmt: FxpFormat = Q3_12) -> FxpScalar:
    """Nearest representable value (ties to even), saturating at the range bounds."""
    if np.isnan(x):
        raise ValueError("cannot quantize NaN")
    scaled = float(x) * (1 << fmt.frac_bits)
    if scaled >= fmt.raw_max:
        return FxpScalar(fmt.raw_max, fmt)
    if scaled <= fmt.raw_min:
        return FxpScalar(fmt.raw_min, fmt)
    # float * 2**f is exact, and round() on a float is round-half-even
    return FxpScalar(int(round(scaled)), fmt)


def quantize_array(x, fmt: FxpFormat = Q3_12) -> FxpVector:
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("cannot quantize NaN")
    scaled = np.clip(x * float(1 << fmt.frac_bits), fmt.raw_min, fmt.raw_max)
    return FxpVector(np.rint(scaled).astype(np.int64), fmt)


def dequantize(value: Fxp):
    return value.to_float()


def _wrap(raw, fmt: FxpFormat, like_vector: bool) -> Fxp:
    if like_vector:
        return FxpVector(raw, fmt)
    return FxpScalar(int(raw), fmt)


def fxp_mul(a: Fxp, b: Fxp, out: FxpFormat | None = None) -> Fxp:
    """Full-precision product, rounded back to ``out`` (default: ``a``'s format) and saturated.

    Works elementwise when either operand is a vector.
    """
    out = out or a.fmt
    vector = isinstance(a, FxpVector) or isinstance(b, FxpVector)
    if vector:
        prod = np.asarray(a.raw, dtype=np.int64) * np.asarray(b.raw, dtype=np.int64)
    else:
        prod = a.raw * b.raw
    shift = a.fmt.frac_bits + b.fmt.frac_bits - out.frac_bits
    return _wrap(saturate(rshift_rne(prod, shift), out), out, vector)


def fxp_add(a: Fxp, b: Fxp) -> Fxp:
    """Saturating add of two values in the same format."""
    if a.fmt != b.fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    vector = isinstance(a, FxpVector) or isinstance(b, FxpVector)
    if vector:
        total = np.asarray(a.raw, dtype=np.int64) + np.asarray(b.raw, dtype=np.int64)
    else:
        total = a.raw + b.raw
    return _wrap(saturate(total, a.fmt), a.fmt, vector)


class ShiftPolicy(enum.Enum):
    """Where the 1/k normalisation of the inverse transform is applied."""

    ALL_AT_IDFT_END = "all-at-idft-end"
    DISTRIBUTED_IN_IDFT = "distributed-in-idft"
    DISTRIBUTED_IN_DFT = "distributed-in-dft"

    @classmethod
    def parse(cls, text: "str | ShiftPolicy") -> "ShiftPolicy":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("_", "-")
        for policy in cls:
            if policy.value == key or policy.name.lower().replace("_", "-") == key:
                return policy
        aliases = {"allatidftend": cls.ALL_AT_IDFT_END,
                   "distributedinidft": cls.DISTRIBUTED_IN_IDFT,
                   "distributedindft": cls.DISTRIBUTED_IN_DFT}
        if key.replace("-", "") in aliases:
            return aliases[key.replace("-", "")]
        raise ValueError(f"unknown shift policy {text!r}")


def log2_exact(k: int) -> int:
    if k < 1 or k & (k - 1):
        raise ValueError(f"block size must be a power of two, got {k}")
    return k.bit_length() - 1


def shift_schedule(policy: ShiftPolicy, k: int) -> list[int]:
    """Per-stage right-shift amounts realising the 1/k factor.

    ``ALL_AT_IDFT_END`` yields one entry applied at the last inverse stage; the
    distributed policies yield one 1-bit shift per butterfly stage (in the
    inverse or the forward transform respectively).
    """
    n = log2_exact(k)
    policy = ShiftPolicy.parse(policy)
    if policy is ShiftPolicy.ALL_AT_IDFT_END:
        return [n]
    return [1] * n


def stage_shifts(policy: ShiftPolicy, k: int) -> tuple[list[int], list[int]]:
    """Expand :func:`shift_schedule` to ``(dft_stage_shifts, idft_stage_shifts)``, each log2(k) long."""
    n = log2_exact(k)
    policy = ShiftPolicy.parse(policy)
    zeros = [0] * n
    if policy is ShiftPolicy.ALL_AT_IDFT_END:
        idft = zeros.copy()
        if n:
            idft[-1] = n
        return zeros, idft
    if policy is ShiftPolicy.DISTRIBUTED_IN_IDFT:
        return zeros, [1] * n
    return [1] * n, zeros
