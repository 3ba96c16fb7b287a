import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from circlstm.circulant import BlockCirculantMatrix, CallCounters, compression_stats
from circlstm.fxp import ShiftPolicy
from circlstm.lstm import (
    GOOGLE_LSTM,
    SMALL_LSTM,
    CellState,
    LstmArchSpec,
    LstmWeights,
    init_random,
    load_arch,
    lstm_step,
    run_sequence,
)


def small(**kw):
    base = dict(input_dim=12, hidden_dim=16, num_layers=1, block_size=4)
    base.update(kw)
    return LstmArchSpec(**base)


def test_arch_validation():
    with pytest.raises(ValueError):
        small(projection=True)
    with pytest.raises(ValueError):
        small(projection_dim=8)
    with pytest.raises(ValueError):
        small(hidden_dim=0)
    with pytest.raises(ValueError):
        small(block_size=6)
    with pytest.raises(ValueError):
        small(cell_activation="relu")
    with pytest.raises(ValueError):
        LstmArchSpec.from_dict({**small().to_dict(), "bogus": 1})


def test_arch_json_roundtrip(tmp_path):
    path = tmp_path / "arch.json"
    path.write_text(json.dumps(GOOGLE_LSTM.to_dict()))
    assert LstmArchSpec.load(path) == GOOGLE_LSTM
    assert load_arch(str(path)) == GOOGLE_LSTM
    assert load_arch("small") is SMALL_LSTM


def test_preset_dimensions():
    assert GOOGLE_LSTM.layer_input_dim(0) == 153
    assert GOOGLE_LSTM.layer_input_dim(1) == 512
    shapes = GOOGLE_LSTM.matrix_shapes()
    assert ("l0.fwd.W_i", 1024, 665) in shapes
    assert ("l1.fwd.W_ym", 512, 1024) in shapes
    assert SMALL_LSTM.layer_input_dim(1) == 1024
    assert SMALL_LSTM.sequence_output_dim == 1024


def test_weights_layout_and_param_count():
    arch = small(projection=True, projection_dim=8, num_layers=2, bidirectional=True)
    w = init_random(arch, 0)
    names = w.named_tensors()
    assert "l1.bwd.W_ym" in names and "l0.fwd.w_ic" in names
    assert w.param_count() == compression_stats(arch)["param_count"]
    # fused gate matrices see [x_t, y_{t-1}]
    assert w.cells[1][0].gates["i"].n == 2 * 8 + 8
    with pytest.raises(ValueError):
        bad = dict(names)
        bad["l0.fwd.b_i"] = np.zeros(3)
        LstmWeights.from_named_tensors(arch, bad)


def test_init_is_seeded():
    a = init_random(small(), 5).named_tensors()
    b = init_random(small(), 5).named_tensors()
    c = init_random(small(), 6).named_tensors()
    assert np.array_equal(a["l0.fwd.W_f"].rows, b["l0.fwd.W_f"].rows)
    assert not np.array_equal(a["l0.fwd.W_f"].rows, c["l0.fwd.W_f"].rows)
    bound = 1 / np.sqrt(12 + 16)
    assert np.abs(a["l0.fwd.W_f"].rows).max() <= bound


def zero_weights(arch):
    tensors = {}
    for name, m, n in arch.matrix_shapes():
        tensors[name] = BlockCirculantMatrix.zeros(m, n, arch.block_size)
    for name, t in init_random(arch, 0).named_tensors().items():
        if name not in tensors:
            tensors[name] = np.zeros_like(t)
    return LstmWeights.from_named_tensors(arch, tensors)


@pytest.mark.parametrize("mode", ["float", "dense", "fxp"])
def test_zero_weights_give_zero_output(mode):
    arch = small(projection=True, projection_dim=8)
    w = zero_weights(arch)
    cell = w.cells[0][0]
    trace = {}
    st_ = lstm_step(cell, np.ones(12), CellState.zeros(cell), mode, trace=trace)
    s = st_.as_float()
    # every gate sits at sigmoid(0) = 0.5, so c = i * g = 0.25 and the zero projection kills y
    assert np.allclose(s.c, 0.25, atol=0.01) and np.all(s.y == 0)
    g = trace["g"].to_float() if mode == "fxp" else trace["g"]
    assert np.allclose(g, 0.5, atol=0.01)


def test_float_step_matches_dense_on_every_gate():
    arch = small(projection=True, projection_dim=8, peephole=True)
    cell = init_random(arch, 1).cells[0][0]
    rng = np.random.default_rng(0)
    prev = CellState(rng.uniform(-1, 1, 16), rng.uniform(-1, 1, 8))
    x = rng.uniform(-1, 1, 12)
    tf, td = {}, {}
    a = lstm_step(cell, x, prev, "float", trace=tf)
    b = lstm_step(cell, x, prev, "dense", trace=td)
    for g in "ifco":
        assert np.abs(tf["pre"][g] - td["pre"][g]).max() < 1e-8
    assert np.abs(a.c - b.c).max() < 1e-8 and np.abs(a.y - b.y).max() < 1e-8


def test_gate_ranges_and_cell_activation_toggle():
    arch = small()
    cell = init_random(arch, 2).cells[0][0]
    trace = {}
    lstm_step(cell, np.random.default_rng(1).uniform(-3, 3, 12), CellState.zeros(cell), trace=trace)
    for g in "ifgo":
        assert np.all((trace[g] > 0) & (trace[g] < 1))
    cell_t = init_random(small(cell_activation="tanh"), 2).cells[0][0]
    lstm_step(cell_t, -np.ones(12) * 3, CellState.zeros(cell_t), trace=trace)
    assert np.any(trace["g"] < 0)


def test_fxp_gates_in_unit_interval():
    cell = init_random(small(), 3).cells[0][0]
    trace = {}
    lstm_step(cell, np.random.default_rng(2).uniform(-8, 8, 12), CellState.zeros(cell), "fxp", trace=trace)
    for g in "ifgo":
        v = trace[g].to_float()
        assert np.all((v >= 0) & (v <= 1))


def test_fxp_vs_float_small_inputs():
    arch = small(projection=True, projection_dim=8)
    cell = init_random(arch, 4).cells[0][0]
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.5, 0.5, 12)
    for policy in ShiftPolicy:
        a = lstm_step(cell, x, CellState.zeros(cell), "float")
        b = lstm_step(cell, x, CellState.zeros(cell), "fxp", policy=policy).as_float()
        assert np.abs(a.y - b.y).max() < 0.02
        assert np.abs(a.c - b.c).max() < 0.02


def test_dimension_mismatch():
    cell = init_random(small(), 0).cells[0][0]
    with pytest.raises(ValueError):
        lstm_step(cell, np.ones(11), CellState.zeros(cell))
    with pytest.raises(ValueError):
        lstm_step(cell, np.ones(11), CellState.zeros(cell, "fxp"), "fxp")
    with pytest.raises(ValueError):
        lstm_step(cell, np.ones(12), CellState.zeros(cell), "magic")
    with pytest.raises(ValueError):
        run_sequence(init_random(small(), 0), np.ones((3, 11)))


def test_empty_sequence_rejected():
    with pytest.raises(ValueError):
        run_sequence(init_random(small(), 0), np.zeros((0, 12)))


def test_single_step_sequence():
    w = init_random(small(), 5)
    x = np.random.default_rng(4).uniform(-1, 1, (1, 12))
    cell = w.cells[0][0]
    assert np.allclose(run_sequence(w, x)[0], lstm_step(cell, x[0], CellState.zeros(cell)).y)


def test_two_layer_sequence_matches_dense_oracle():
    arch = LstmArchSpec(input_dim=20, hidden_dim=32, num_layers=2, block_size=4,
                        projection=True, projection_dim=16)
    w = init_random(arch, 6)
    X = np.random.default_rng(5).uniform(-1, 1, (20, 20))
    c = CallCounters()
    a = run_sequence(w, X, "float", counters=c)
    b = run_sequence(w, X, "dense")
    assert a.shape == (20, 16)
    assert np.abs(a - b).max() < 1e-8
    assert c.idft_calls > 0


def test_bidirectional_palindrome_symmetry():
    arch = small(bidirectional=True)
    w = init_random(arch, 7)
    # give the backward direction the forward direction's weights
    fwd = w.cells[0][0]
    w.cells[0][1] = type(fwd)(fwd.gates, fwd.bias, fwd.peephole, fwd.projection, fwd.cell_activation, fwd.fmt)
    half = np.random.default_rng(6).uniform(-1, 1, (4, 12))
    X = np.concatenate([half, half[::-1]])
    Y = run_sequence(w, X)
    h = arch.output_dim
    assert np.allclose(Y[:, :h], Y[::-1, h:], atol=1e-12)


def test_classifier_output():
    arch = small(output_classes=5, projection=True, projection_dim=8)
    w = init_random(arch, 8)
    X = np.random.default_rng(7).uniform(-1, 1, (3, 12))
    out = run_sequence(w, X)
    assert out.shape == (3, 5)
    q = run_sequence(w, X, "fxp")
    assert np.abs(out - q).max() < 0.05


def test_fxp_deterministic():
    w = init_random(small(projection=True, projection_dim=8), 9)
    X = np.random.default_rng(8).uniform(-1, 1, (4, 12))
    assert np.array_equal(run_sequence(w, X, "fxp"), run_sequence(w, X, "fxp"))


@settings(max_examples=15)
@given(st.integers(0, 2 ** 31), st.sampled_from([2, 4, 8]), st.booleans(), st.booleans())
def test_float_equals_dense_property(seed, k, peephole, projection):
    arch = LstmArchSpec(input_dim=10, hidden_dim=16, block_size=k, peephole=peephole,
                        projection=projection, projection_dim=8 if projection else None)
    w = init_random(arch, seed)
    X = np.random.default_rng(seed).uniform(-1, 1, (3, 10))
    assert np.abs(run_sequence(w, X) - run_sequence(w, X, "dense")).max() < 1e-8
