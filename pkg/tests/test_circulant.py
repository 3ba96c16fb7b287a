import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from circlstm.circulant import (
    BlockCirculantMatrix,
    CallCounters,
    SpectralWeights,
    circulant_matvec_ops,
    compression_stats,
    dense_matvec_ops,
    expand_to_dense,
    grad,
    matvec_fft,
    matvec_fft_fxp,
    matvec_naive,
    project_dense,
)
from circlstm.fxp import Q3_12, FxpVector, ShiftPolicy, quantize_array
from circlstm.lstm import GOOGLE_LSTM, SMALL_LSTM
from circlstm.spectral import dft
from tests.oracles import circulant_dense


@st.composite
def instances(draw, ks=(2, 4, 8, 16), max_blocks=4):
    k = draw(st.sampled_from(ks))
    p = draw(st.integers(1, max_blocks))
    q = draw(st.integers(1, max_blocks))
    m = draw(st.integers((p - 1) * k + 1, p * k))
    n = draw(st.integers((q - 1) * k + 1, q * k))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    return BlockCirculantMatrix.random(m, n, k, rng, bound=1.0), rng.uniform(-1, 1, n)


def test_matrix_shape_and_validation():
    B = BlockCirculantMatrix.zeros(10, 7, 4)
    assert (B.p, B.q, B.param_count) == (3, 2, 24)
    with pytest.raises(ValueError):
        BlockCirculantMatrix(4, 4, 4, np.zeros((1, 1, 3)))
    with pytest.raises(ValueError):
        BlockCirculantMatrix.zeros(4, 4, 3)
    with pytest.raises(ValueError):
        B.rows[0, 0, 0] = 1.0


def test_expand_examples():
    rng = np.random.default_rng(0)
    rows = rng.standard_normal((3, 5, 1))
    assert np.array_equal(expand_to_dense(BlockCirculantMatrix(3, 5, 1, rows)), rows[:, :, 0])
    B = BlockCirculantMatrix(8, 4, 4, rng.standard_normal((2, 1, 4)))
    assert B.param_count == 8 and expand_to_dense(B).size == 32
    eye = BlockCirculantMatrix(8, 8, 4, np.tile(np.eye(4)[0], (2, 2, 1)))
    D = expand_to_dense(eye)
    assert np.array_equal(D[:4, :4], np.eye(4)) and np.array_equal(D[4:, :4], np.eye(4))


def test_expand_row_rotation_convention():
    B = BlockCirculantMatrix(4, 4, 4, np.array([[[1.0, 2.0, 3.0, 4.0]]]))
    assert expand_to_dense(B).tolist() == [[1, 2, 3, 4], [4, 1, 2, 3], [3, 4, 1, 2], [2, 3, 4, 1]]


@given(instances(max_blocks=3))
def test_expand_matches_loop_oracle(inst):
    B, _ = inst
    assert np.array_equal(expand_to_dense(B), circulant_dense(B.rows, B.m, B.n))


def test_naive_examples():
    I = BlockCirculantMatrix.identity(10, 4)
    x = np.arange(10.0)
    assert np.array_equal(matvec_naive(I, x), x)
    assert np.all(matvec_naive(BlockCirculantMatrix.zeros(6, 10, 2), x) == 0)
    rng = np.random.default_rng(1)
    B = BlockCirculantMatrix(4, 4, 4, rng.standard_normal((1, 1, 4)))
    x = rng.standard_normal(4)
    hand = np.array([sum(B.rows[0, 0, (c - r) % 4] * x[c] for c in range(4)) for r in range(4)])
    assert np.allclose(matvec_naive(B, x), hand)
    with pytest.raises(ValueError):
        matvec_naive(B, np.ones(5))


@given(instances())
def test_fft_matches_naive(inst):
    B, x = inst
    ref = matvec_naive(B, x)
    out = matvec_fft(SpectralWeights.from_matrix(B), x)
    assert np.linalg.norm(out - ref) <= 1e-8 * max(np.linalg.norm(ref), 1e-12)


@given(instances())
def test_call_count_contract(inst):
    B, x = inst
    c = CallCounters()
    W = SpectralWeights.from_matrix(B)
    matvec_fft(W, x, c)
    assert (c.dft_calls, c.idft_calls, c.pointwise_calls) == (B.q, B.p, B.p * B.q)


def test_counts_without_precomputed_spectra():
    B = BlockCirculantMatrix.random(16, 24, 8, np.random.default_rng(2))
    c = CallCounters()
    matvec_fft(B, np.ones(24), c)
    assert c.dft_calls == B.q + B.p * B.q  # weight spectra computed on the fly
    assert c.idft_calls == B.p


def test_batched_fft_and_counts():
    rng = np.random.default_rng(3)
    B = BlockCirculantMatrix.random(20, 12, 4, rng)
    X = rng.standard_normal((2, 3, 12))
    c = CallCounters()
    out = matvec_fft(SpectralWeights.from_matrix(B), X, c)
    assert out.shape == (2, 3, 20)
    assert np.allclose(out, matvec_naive(B, X))
    assert c.idft_calls == 6 * B.p


def test_counters_thread_safe():
    c = CallCounters()

    def work():
        for _ in range(1000):
            c.add(1, 2, 3)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert c.as_dict() == {"dft_calls": 8000, "idft_calls": 16000, "pointwise_calls": 24000}
    d = CallCounters()
    d.merge(c)
    assert d.pointwise_calls == 24000


def test_spectral_weights_invariant():
    B = BlockCirculantMatrix.random(8, 8, 4, np.random.default_rng(4))
    W = SpectralWeights.from_matrix(B)
    assert np.allclose(W.spectra.bins, dft(B.rows).bins)
    assert np.abs(W.quantized.to_complex() - W.spectra.bins).max() <= 2 ** -13 * np.sqrt(2)


# --------------------------------------------------------------------------
# fixed point


def test_fxp_zero_input_gives_zero():
    B = BlockCirculantMatrix.random(16, 16, 8, np.random.default_rng(5))
    W = SpectralWeights.from_matrix(B)
    for pol in ShiftPolicy:
        assert np.all(matvec_fft_fxp(W, FxpVector(np.zeros(16, dtype=np.int64)), pol).raw == 0)


def _identity_error(k, policy):
    W = SpectralWeights.from_matrix(BlockCirculantMatrix.identity(3 * k, k))
    x = quantize_array(np.random.default_rng(6).uniform(-0.25, 0.25, (50, 3 * k)))
    return np.abs(matvec_fft_fxp(W, x, policy).to_float() - x.to_float()).max()


@pytest.mark.parametrize("k", [2, 4, 8, 16])
@pytest.mark.parametrize("policy", [ShiftPolicy.ALL_AT_IDFT_END, ShiftPolicy.DISTRIBUTED_IN_IDFT])
def test_fxp_identity_recovers_input(k, policy):
    assert _identity_error(k, policy) <= 2 * 2 ** -12


@pytest.mark.parametrize("k", [2, 4, 8, 16])
def test_fxp_identity_prescaled_forward(k):
    # scaling in the forward transform drops up to log2(k) low bits of the spectrum
    assert _identity_error(k, ShiftPolicy.DISTRIBUTED_IN_DFT) <= k * 2 ** -12


def test_fxp_extreme_inputs_saturate():
    B = BlockCirculantMatrix(16, 16, 8, np.full((2, 2, 8), 1.0))
    W = SpectralWeights.from_matrix(B)
    x = FxpVector(np.full(16, Q3_12.raw_max, dtype=np.int64))
    for pol in ShiftPolicy:
        out = matvec_fft_fxp(W, x, pol)
        assert out.raw.min() > 0  # true result is +128 everywhere; wraparound would flip the sign
    assert matvec_fft_fxp(W, x, ShiftPolicy.DISTRIBUTED_IN_DFT).raw.max() == Q3_12.raw_max


def test_fxp_matches_float_within_measured_bound():
    rng = np.random.default_rng(7)
    B = BlockCirculantMatrix.random(64, 64, 8, rng)
    W = SpectralWeights.from_matrix(B)
    x = quantize_array(rng.uniform(-1, 1, (200, 64)))
    ref = matvec_naive(B, x.to_float())
    c = CallCounters()
    out = matvec_fft_fxp(W, x, ShiftPolicy.DISTRIBUTED_IN_DFT, c)
    assert np.abs(out.to_float() - ref).max() < 0.01
    assert c.idft_calls == 200 * B.p and c.dft_calls == 200 * B.q


# --------------------------------------------------------------------------
# gradients


def _loss(B, x, g):
    return float(g @ matvec_naive(B, x))


def _fd_check(B, x, g, h=1e-5):
    dw, dx = grad(B, x, g)
    num_w = np.zeros_like(B.rows)
    for idx in np.ndindex(B.rows.shape):
        up, dn = B.rows.copy(), B.rows.copy()
        up[idx] += h
        dn[idx] -= h
        num_w[idx] = (_loss(BlockCirculantMatrix(B.m, B.n, B.k, up), x, g)
                      - _loss(BlockCirculantMatrix(B.m, B.n, B.k, dn), x, g)) / (2 * h)
    num_x = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        num_x[i] = (_loss(B, x + e, g) - _loss(B, x - e, g)) / (2 * h)
    rel_w = np.linalg.norm(dw - num_w) / np.linalg.norm(num_w)
    rel_x = np.linalg.norm(dx - num_x) / np.linalg.norm(num_x)
    return rel_w, rel_x


def test_grad_zero_upstream():
    B = BlockCirculantMatrix.random(8, 8, 4, np.random.default_rng(8))
    dw, dx = grad(B, np.ones(8), np.zeros(8))
    assert np.all(dw == 0) and np.all(dx == 0)


def test_grad_k2_first_output():
    x = np.array([0.3, -1.2])
    B = BlockCirculantMatrix(2, 2, 2, np.array([[[0.5, 2.0]]]))
    dw, _ = grad(B, x, np.array([1.0, 0.0]))
    assert np.allclose(dw[0, 0], x)


@pytest.mark.parametrize("k,m,n", [(2, 6, 5), (4, 8, 12), (8, 16, 13)])
def test_grad_finite_differences(k, m, n):
    rng = np.random.default_rng(k)
    B = BlockCirculantMatrix.random(m, n, k, rng, bound=1.0)
    rel_w, rel_x = _fd_check(B, rng.standard_normal(n), rng.standard_normal(m))
    assert rel_w < 1e-5 and rel_x < 1e-5


def test_grad_shape_mismatch():
    B = BlockCirculantMatrix.zeros(4, 4, 2)
    with pytest.raises(ValueError):
        grad(B, np.ones(4), np.ones(3))


# --------------------------------------------------------------------------
# projection


@given(instances(max_blocks=3))
def test_project_recovers_block_circulant(inst):
    B, _ = inst
    D = expand_to_dense(B)
    P = project_dense(D, B.k)
    if B.m % B.k == 0 and B.n % B.k == 0:
        assert np.allclose(P.rows, B.rows)
    assert np.allclose(expand_to_dense(P), D)


def test_project_k1_identity_and_idempotent():
    D = np.random.default_rng(9).standard_normal((5, 7))
    assert np.array_equal(expand_to_dense(project_dense(D, 1)), D)
    P = project_dense(D, 4)
    P2 = project_dense(expand_to_dense(P), 4)
    assert np.allclose(P.rows, P2.rows)


def test_project_beats_random_candidates():
    rng = np.random.default_rng(10)
    D = rng.standard_normal((6, 6))
    best = np.linalg.norm(expand_to_dense(project_dense(D, 2)) - D)
    for _ in range(100):
        C = BlockCirculantMatrix(6, 6, 2, rng.standard_normal((3, 3, 2)))
        assert best <= np.linalg.norm(expand_to_dense(C) - D)


# --------------------------------------------------------------------------
# counts and statistics


def test_op_counts():
    assert dense_matvec_ops(3, 4) == 24
    assert circulant_matvec_ops(3, 4, 1) == 24
    # k=8, p=q=1: two real FFTs (60 each) + one packed product (30)
    assert circulant_matvec_ops(8, 8, 8) == 150


def test_storage_exact_when_divisible():
    for k in (1, 2, 4, 8, 16):
        B = BlockCirculantMatrix.zeros(64, 128, k)
        assert B.param_count * k == 64 * 128


def test_compression_stats_k1():
    s = compression_stats(GOOGLE_LSTM, 1)
    assert s["compression_ratio"] == 1.0 and s["complexity_ratio"] == 1.0


def test_compression_stats_google_table_values():
    expected = {1: 8.01, 2: 4.03, 4: 2.04, 8: 1.05, 16: 0.55}
    for k, millions in expected.items():
        assert round(compression_stats(GOOGLE_LSTM, k)["param_count"] / 1e6, 2) == millions


def test_compression_stats_small_model():
    one_layer = SMALL_LSTM.replace(num_layers=1)
    assert round(compression_stats(one_layer, 8)["matrix_param_count"] / 1e6, 2) == 0.28
    assert round(compression_stats(one_layer, 16)["matrix_param_count"] / 1e6, 2) == 0.14
