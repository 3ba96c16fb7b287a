"""Block-circulant weight matrices and their mat-vec / gradient paths.

Block (i, j) of an m x n matrix is the k x k circulant whose row r is the
defining vector ``w_ij`` cyclically right-shifted by r, i.e.
``W_ij[r, c] = w_ij[(c - r) mod k]``. That block applied to ``x_j`` is the
circular cross-correlation of ``w_ij`` and ``x_j``, so the spectral path
multiplies by ``conj(F(w_ij))``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .fxp import (
    Q3_12,
    WIDE_BITS,
    FxpFormat,
    FxpVector,
    ShiftPolicy,
    log2_exact,
    rshift_rne,
    saturate,
)
from .spectral import (
    FxpSpectrum,
    PackedSpectrum,
    dft,
    dft_fxp,
    idft,
    idft_fxp,
    real_fft_op_count,
)

_ACC = FxpFormat(frac_bits=24, total_bits=WIDE_BITS)


@dataclass(frozen=True, eq=False)
class BlockCirculantMatrix:
    m: int
    n: int
    k: int
    rows: np.ndarray  # (p, q, k) defining vectors

    def __post_init__(self):
        log2_exact(self.k)
        if self.m < 1 or self.n < 1:
            raise ValueError("matrix dimensions must be positive")
        rows = np.array(self.rows, dtype=np.float64)
        if rows.shape != (self.p, self.q, self.k):
            raise ValueError(f"rows must have shape {(self.p, self.q, self.k)}, got {rows.shape}")
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def p(self) -> int:
        return -(-self.m // self.k)

    @property
    def q(self) -> int:
        return -(-self.n // self.k)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @property
    def param_count(self) -> int:
        return self.p * self.q * self.k

    @classmethod
    def zeros(cls, m, n, k):
        return cls(m, n, k, np.zeros((-(-m // k), -(-n // k), k)))

    @classmethod
    def identity(cls, n, k):
        """Identity blocks on the diagonal (w_ii = e0)."""
        q = -(-n // k)
        rows = np.zeros((q, q, k))
        rows[np.arange(q), np.arange(q), 0] = 1.0
        return cls(n, n, k, rows)

    @classmethod
    def random(cls, m, n, k, rng: np.random.Generator, bound: float | None = None):
        """Uniform defining vectors in [-bound, bound], default bound 1/sqrt(n)."""
        bound = 1.0 / math.sqrt(n) if bound is None else bound
        rows = rng.uniform(-bound, bound, size=(-(-m // k), -(-n // k), k))
        return cls(m, n, k, rows)


def _circ_index(k: int) -> np.ndarray:
    r = np.arange(k)
    return (r[None, :] - r[:, None]) % k


def expand_to_dense(B: BlockCirculantMatrix) -> np.ndarray:
    blocks = B.rows[:, :, _circ_index(B.k)]  # (p, q, r, c)
    dense = blocks.transpose(0, 2, 1, 3).reshape(B.p * B.k, B.q * B.k)
    return dense[: B.m, : B.n].copy()


def _check_input(B: BlockCirculantMatrix, x: np.ndarray):
    if x.shape[-1] != B.n:
        raise ValueError(f"input length {x.shape[-1]} does not match matrix width {B.n}")


def _pad_blocks(x: np.ndarray, length: int, blocks: int, k: int) -> np.ndarray:
    pad = blocks * k - length
    if pad:
        x = np.concatenate([x, np.zeros(x.shape[:-1] + (pad,), dtype=x.dtype)], axis=-1)
    return x.reshape(x.shape[:-1] + (blocks, k))


def matvec_naive(B: BlockCirculantMatrix, x) -> np.ndarray:
    """Oracle path: expand every block and do a dense product. Batched over leading axes."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(B, x)
    return x @ expand_to_dense(B).T


class CallCounters:
    """Exact transform/product call counts; safe to share between threads."""

    def __init__(self, dft_calls=0, idft_calls=0, pointwise_calls=0):
        self.dft_calls = dft_calls
        self.idft_calls = idft_calls
        self.pointwise_calls = pointwise_calls
        self._lock = threading.Lock()

    def add(self, dft=0, idft=0, pointwise=0):
        with self._lock:
            self.dft_calls += dft
            self.idft_calls += idft
            self.pointwise_calls += pointwise

    def merge(self, other: "CallCounters"):
        self.add(other.dft_calls, other.idft_calls, other.pointwise_calls)

    def as_dict(self) -> dict:
        return {"dft_calls": self.dft_calls, "idft_calls": self.idft_calls,
                "pointwise_calls": self.pointwise_calls}

    def __repr__(self):
        return f"CallCounters({self.as_dict()})"


@dataclass(frozen=True, eq=False)
class SpectralWeights:
    """Precomputed weight spectra F(w_ij), float and quantized."""

    matrix: BlockCirculantMatrix
    spectra: PackedSpectrum  # bins shape (p, q, k/2+1)
    fmt: FxpFormat = Q3_12
    quantized: FxpSpectrum = field(default=None)

    @classmethod
    def from_matrix(cls, B: BlockCirculantMatrix, fmt: FxpFormat = Q3_12,
                    counters: CallCounters | None = None) -> "SpectralWeights":
        spectra = dft(B.rows)
        if counters is not None:
            counters.add(dft=B.p * B.q)
        return cls(B, spectra, fmt, FxpSpectrum.quantize(spectra, fmt))

    @classmethod
    def from_spectra(cls, B: BlockCirculantMatrix, spectra: PackedSpectrum,
                     fmt: FxpFormat = Q3_12, quantized: FxpSpectrum | None = None):
        if quantized is None:
            quantized = FxpSpectrum.quantize(spectra, fmt)
        return cls(B, spectra, fmt, quantized)


    @cached_property
    def freq_major_conj(self) -> np.ndarray:
        """conj(F(w)) laid out (F, p, q) for the batched per-frequency product."""
        return np.ascontiguousarray(self.spectra.bins.conj().transpose(2, 0, 1))


def precompute_spectra(B: BlockCirculantMatrix, fmt: FxpFormat = Q3_12) -> SpectralWeights:
    return SpectralWeights.from_matrix(B, fmt)


def matvec_fft(W, x, counters: CallCounters | None = None) -> np.ndarray:
    """a_i = IDFT( sum_j conj(F(w_ij)) * F(x_j) ), one inverse transform per block row.

    ``W`` may be a :class:`BlockCirculantMatrix` (spectra computed on the fly
    and counted) or precomputed :class:`SpectralWeights`.
    """
    if isinstance(W, BlockCirculantMatrix):
        W = SpectralWeights.from_matrix(W, counters=counters)
    B = W.matrix
    x = np.asarray(x, dtype=np.float64)
    _check_input(B, x)
    batch = int(np.prod(x.shape[:-1], dtype=np.int64))
    xb = _pad_blocks(x, B.n, B.q, B.k)  # (..., q, k)
    X = dft(xb).bins  # (..., q, F)
    # frequency-major batched matmul: (F, p, q) @ (F, q, batch)
    lead = X.shape[:-2]
    Xf = X.reshape(batch, B.q, -1).transpose(2, 1, 0)
    acc = np.matmul(W.freq_major_conj, Xf)  # (F, p, batch)
    acc = acc.transpose(2, 1, 0).reshape(lead + (B.p, -1))
    a = idft(PackedSpectrum(B.k, acc))  # (..., p, k)
    if counters is not None:
        counters.add(dft=B.q * batch, idft=B.p * batch, pointwise=B.p * B.q * batch)
    return a.reshape(lead + (B.p * B.k,))[..., : B.m]


def matvec_fft_fxp(W: SpectralWeights, x: FxpVector,
                   policy: ShiftPolicy = ShiftPolicy.DISTRIBUTED_IN_IDFT,
                   counters: CallCounters | None = None) -> FxpVector:
    """Fixed-point spectral mat-vec.

    DFT(x_j) -> products with the quantized conj(F(w_ij)) at full precision ->
    32-bit saturating accumulation over j -> narrow to 16 bits -> IDFT. The
    result has ``x``'s format.
    """
    policy = ShiftPolicy.parse(policy)
    B = W.matrix
    if x.raw.shape[-1] != B.n:
        raise ValueError(f"input length {x.raw.shape[-1]} does not match matrix width {B.n}")
    fmt = x.fmt
    lead = x.raw.shape[:-1]
    batch = int(np.prod(lead, dtype=np.int64))
    xb = FxpVector(_pad_blocks(x.raw, B.n, B.q, B.k), fmt)
    X = dft_fxp(xb, policy)  # re/im (..., q, F)
    wq = W.quantized
    wr, wi = wq.re, wq.im  # conj applied in the product below
    xr, xi = X.re, X.im
    lo, hi = _ACC.raw_min, _ACC.raw_max
    acc_r = np.zeros(lead + (B.p, B.k // 2 + 1), dtype=np.int64)
    acc_i = np.zeros_like(acc_r)
    for j in range(B.q):
        xr_j = xr[..., None, j, :]
        xi_j = xi[..., None, j, :]
        # conj(w) * x
        pr = np.clip(wr[:, j, :] * xr_j + wi[:, j, :] * xi_j, lo, hi)
        pi = np.clip(wr[:, j, :] * xi_j - wi[:, j, :] * xr_j, lo, hi)
        acc_r = np.clip(acc_r + pr, lo, hi)
        acc_i = np.clip(acc_i + pi, lo, hi)
    shift = wq.fmt.frac_bits
    spec = FxpSpectrum(B.k, saturate(rshift_rne(acc_r, shift), fmt),
                       saturate(rshift_rne(acc_i, shift), fmt), fmt, X.prescale)
    a = idft_fxp(spec, policy)
    if counters is not None:
        counters.add(dft=B.q * batch, idft=B.p * batch, pointwise=B.p * B.q * batch)
    return FxpVector(a.raw.reshape(lead + (B.p * B.k,))[..., : B.m], fmt)


def grad(B: BlockCirculantMatrix, x, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of L through a = B x, given dL/da.

    dL/dx_j = IDFT( sum_i F(w_ij) * F(g_i) )         (circular convolution)
    dL/dw_ij = IDFT( conj(F(g_i)) * F(x_j) )          (circular correlation)
    Returns ``(dL/dw of shape (p, q, k), dL/dx of length n)``.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    _check_input(B, x)
    if g.shape != (B.m,) or x.shape != (B.n,):
        raise ValueError(f"expected x of shape ({B.n},) and upstream of shape ({B.m},)")
    X = dft(_pad_blocks(x, B.n, B.q, B.k)).bins  # (q, F)
    G = dft(_pad_blocks(g, B.m, B.p, B.k)).bins  # (p, F)
    Fw = dft(B.rows).bins  # (p, q, F)
    dx = idft(PackedSpectrum(B.k, np.einsum("pqf,pf->qf", Fw, G)))
    dw = idft(PackedSpectrum(B.k, G.conj()[:, None, :] * X[None, :, :]))
    return dw, dx.reshape(-1)[: B.n]


def project_dense(D, k: int) -> BlockCirculantMatrix:
    """Frobenius-nearest block-circulant matrix: average each block's circulant diagonals.

    Only entries inside the m x n matrix take part in the average; padded
    positions are ignored.
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    m, n = D.shape
    p, q = -(-m // k), -(-n // k)
    padded = np.zeros((p * k, q * k))
    mask = np.zeros((p * k, q * k))
    padded[:m, :n] = D
    mask[:m, :n] = 1.0
    r = np.arange(k)
    cols = (r[None, :] + r[:, None]) % k  # [d, r] -> column (r + d) mod k
    blocks = padded.reshape(p, k, q, k).transpose(0, 2, 1, 3)  # (p, q, r, c)
    mblocks = mask.reshape(p, k, q, k).transpose(0, 2, 1, 3)
    vals = blocks[:, :, r[None, :], cols]  # (p, q, d, r)
    cnt = mblocks[:, :, r[None, :], cols].sum(axis=-1)
    rows = np.divide(vals.sum(axis=-1), cnt, out=np.zeros((p, q, k)), where=cnt > 0)
    return BlockCirculantMatrix(m, n, k, rows)


# --------------------------------------------------------------------------
# operation counts and compression statistics


def dense_matvec_ops(m: int, n: int) -> int:
    return 2 * m * n


def circulant_matvec_ops(m: int, n: int, k: int) -> int:
    """Real adds+multiplies of one spectral mat-vec with precomputed weight spectra.

    q input transforms, p*q packed complex products, (q-1) spectral
    accumulations per block row, p inverse transforms. ``k == 1`` is the
    uncompressed dense product.
    """
    if k == 1:
        return dense_matvec_ops(m, n)
    p, q = -(-m // k), -(-n // k)
    bins = k // 2 + 1
    return (q * real_fft_op_count(k) + p * q * 6 * bins
            + p * (q - 1) * 2 * bins + p * real_fft_op_count(k))


def compression_stats(arch, k: int | None = None) -> dict:
    """Parameter counts and analytic complexity for an architecture.

    ``arch`` must provide ``matrix_shapes()`` -> [(name, m, n), ...] and
    ``vector_param_count()``; ``k`` overrides ``arch.block_size``.
    """
    k = arch.block_size if k is None else k
    log2_exact(k)
    shapes = arch.matrix_shapes()
    dense_matrix = sum(m * n for _, m, n in shapes)
    compressed_matrix = sum((-(-m // k)) * (-(-n // k)) * k for _, m, n in shapes)
    extra = arch.vector_param_count()
    dense_ops = sum(dense_matvec_ops(m, n) for _, m, n in shapes)
    fft_ops = sum(circulant_matvec_ops(m, n, k) for _, m, n in shapes)
    return {
        "block_size": k,
        "param_count": compressed_matrix + extra,
        "dense_param_count": dense_matrix + extra,
        "matrix_param_count": compressed_matrix,
        "dense_matrix_param_count": dense_matrix,
        "uncompressed_param_count": extra,
        "compression_ratio": (dense_matrix + extra) / (compressed_matrix + extra),
        "matrix_compression_ratio": dense_matrix / compressed_matrix,
        "dense_ops": dense_ops,
        "fft_ops": fft_ops,
        "complexity_ratio": fft_ops / dense_ops,
    }
