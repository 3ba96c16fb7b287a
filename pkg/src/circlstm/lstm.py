"""LSTM cells over block-circulant weights.

Gate equations follow the Google LSTM with peephole and projection::

    i = sigmoid(W_i [x, y_prev] + w_ic * c_prev + b_i)
    f = sigmoid(W_f [x, y_prev] + w_fc * c_prev + b_f)
    g = act_g(W_c [x, y_prev] + b_c)          # act_g is sigmoid unless configured as tanh
    c = f * c_prev + g * i
    o = sigmoid(W_o [x, y_prev] + w_oc * c + b_o)
    m = o * tanh(c)
    y = W_ym m                                # y = m without projection

Three execution modes: ``"float"`` (spectral mat-vecs, exact activations),
``"dense"`` (expanded dense mat-vecs, the oracle) and ``"fxp"`` (16-bit
fixed point, spectral mat-vecs, piece-wise linear activations).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .circulant import (
    BlockCirculantMatrix,
    CallCounters,
    SpectralWeights,
    expand_to_dense,
    matvec_fft,
    matvec_fft_fxp,
)
from .fxp import Q3_12, FxpFormat, FxpVector, ShiftPolicy, fxp_add, fxp_mul, log2_exact, quantize_array, rshift_rne, saturate
from .pwl import build_pwl, pwl_eval, sigmoid

GATES = ("i", "f", "c", "o")
PEEPHOLES = ("i", "f", "o")
MODES = ("float", "dense", "fxp")


@dataclass(frozen=True)
class LstmArchSpec:
    input_dim: int
    hidden_dim: int
    num_layers: int = 1
    projection_dim: int | None = None
    projection: bool = False
    peephole: bool = True
    bidirectional: bool = False
    block_size: int = 8
    cell_activation: str = "sigmoid"
    output_classes: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "num_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.projection != (self.projection_dim is not None):
            raise ValueError("projection_dim must be given iff projection is enabled")
        if self.projection_dim is not None and self.projection_dim < 1:
            raise ValueError("projection_dim must be positive")
        if self.cell_activation not in ("sigmoid", "tanh"):
            raise ValueError("cell_activation must be 'sigmoid' or 'tanh'")
        if self.output_classes < 0:
            raise ValueError("output_classes must be non-negative")
        log2_exact(self.block_size)

    @property
    def directions(self) -> int:
        return 2 if self.bidirectional else 1

    @property
    def output_dim(self) -> int:
        """Per-direction recurrent output width."""
        return self.projection_dim if self.projection else self.hidden_dim

    @property
    def sequence_output_dim(self) -> int:
        return self.output_classes or self.output_dim * self.directions

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.output_dim * self.directions

    def direction_names(self) -> list[str]:
        return ["fwd", "bwd"] if self.bidirectional else ["fwd"]

    def matrix_shapes(self, layers=None) -> list[tuple[str, int, int]]:
        """All compressed matrices as ``(name, rows, cols)``."""
        shapes = []
        for l in range(self.num_layers) if layers is None else layers:
            n = self.layer_input_dim(l) + self.output_dim
            for d in self.direction_names():
                for g in GATES:
                    shapes.append((f"l{l}.{d}.W_{g}", self.hidden_dim, n))
                if self.projection:
                    shapes.append((f"l{l}.{d}.W_ym", self.projection_dim, self.hidden_dim))
        return shapes

    def vector_param_count(self) -> int:
        """Uncompressed parameters: biases, peepholes and the optional classifier."""
        per_cell = 4 * self.hidden_dim + (3 * self.hidden_dim if self.peephole else 0)
        total = per_cell * self.num_layers * self.directions
        if self.output_classes:
            total += self.output_classes * (self.output_dim * self.directions + 1)
        return total

    def replace(self, **kw) -> "LstmArchSpec":
        d = asdict(self)
        d.update(kw)
        return LstmArchSpec(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LstmArchSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown architecture fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "LstmArchSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ESE baseline dimensions: 153-d input, 1024 cells, 512-d projection, 2 layers,
# 61-way phone classifier.
GOOGLE_LSTM = LstmArchSpec(
    input_dim=153, hidden_dim=1024, num_layers=2, projection_dim=512, projection=True,
    peephole=True, bidirectional=False, block_size=8, output_classes=61,
)
SMALL_LSTM = LstmArchSpec(
    input_dim=39, hidden_dim=512, num_layers=2, projection_dim=None, projection=False,
    peephole=False, bidirectional=True, block_size=8,
)
PRESETS = {"google": GOOGLE_LSTM, "small": SMALL_LSTM}


def load_arch(name_or_path: str) -> LstmArchSpec:
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    return LstmArchSpec.load(name_or_path)


# --------------------------------------------------------------------------
# weights


@dataclass(eq=False)
class CellWeights:
    """Everything one layer/direction needs to run a step."""

    gates: dict[str, BlockCirculantMatrix]
    bias: dict[str, np.ndarray]
    peephole: dict[str, np.ndarray] | None = None
    projection: BlockCirculantMatrix | None = None
    cell_activation: str = "sigmoid"
    fmt: FxpFormat = Q3_12
    _spectral: dict = field(default_factory=dict, repr=False)
    _dense: dict = field(default_factory=dict, repr=False)
    _quant: dict = field(default_factory=dict, repr=False)

    @property
    def hidden_dim(self) -> int:
        return self.gates["i"].m

    @property
    def concat_dim(self) -> int:
        return self.gates["i"].n

    @property
    def output_dim(self) -> int:
        return self.projection.m if self.projection is not None else self.hidden_dim

    @property
    def input_dim(self) -> int:
        return self.concat_dim - self.output_dim

    def matrices(self) -> dict[str, BlockCirculantMatrix]:
        mats = {f"W_{g}": self.gates[g] for g in GATES}
        if self.projection is not None:
            mats["W_ym"] = self.projection
        return mats

    def spectral(self, name: str) -> SpectralWeights:
        if name not in self._spectral:
            self._spectral[name] = SpectralWeights.from_matrix(self.matrices()[name], self.fmt)
        return self._spectral[name]

    def set_spectral(self, name: str, sw: SpectralWeights):
        self._spectral[name] = sw

    def dense(self, name: str) -> np.ndarray:
        if name not in self._dense:
            self._dense[name] = expand_to_dense(self.matrices()[name])
        return self._dense[name]

    def quant(self, key: str, values) -> FxpVector:
        if key not in self._quant:
            self._quant[key] = quantize_array(values, self.fmt)
        return self._quant[key]


@dataclass(eq=False)
class LstmWeights:
    arch: LstmArchSpec
    cells: list[list[CellWeights]]  # [layer][direction]
    classifier: tuple[np.ndarray, np.ndarray] | None = None

    def named_tensors(self) -> dict[str, object]:
        """Flat name -> BlockCirculantMatrix | ndarray mapping (bundle layout)."""
        out = {}
        for l, per_dir in enumerate(self.cells):
            for d, cell in zip(self.arch.direction_names(), per_dir):
                pre = f"l{l}.{d}."
                for name, mat in cell.matrices().items():
                    out[pre + name] = mat
                for g in GATES:
                    out[pre + f"b_{g}"] = cell.bias[g]
                if cell.peephole is not None:
                    for g in PEEPHOLES:
                        out[pre + f"w_{g}c"] = cell.peephole[g]
        if self.classifier is not None:
            out["out.W"], out["out.b"] = self.classifier
        return out

    @classmethod
    def from_named_tensors(cls, arch: LstmArchSpec, tensors: dict, fmt: FxpFormat = Q3_12):
        cells = []
        for l in range(arch.num_layers):
            per_dir = []
            for d in arch.direction_names():
                pre = f"l{l}.{d}."
                gates = {g: tensors[pre + f"W_{g}"] for g in GATES}
                bias = {g: np.asarray(tensors[pre + f"b_{g}"], dtype=np.float64) for g in GATES}
                peep = None
                if arch.peephole:
                    peep = {g: np.asarray(tensors[pre + f"w_{g}c"], dtype=np.float64) for g in PEEPHOLES}
                proj = tensors[pre + "W_ym"] if arch.projection else None
                per_dir.append(CellWeights(gates, bias, peep, proj, arch.cell_activation, fmt))
            cells.append(per_dir)
        classifier = None
        if arch.output_classes:
            classifier = (np.asarray(tensors["out.W"], dtype=np.float64),
                          np.asarray(tensors["out.b"], dtype=np.float64))
        weights = cls(arch, cells, classifier)
        weights.validate()
        return weights

    def validate(self):
        arch = self.arch
        for l, per_dir in enumerate(self.cells):
            for cell in per_dir:
                n = arch.layer_input_dim(l) + arch.output_dim
                for g in GATES:
                    if cell.gates[g].shape != (arch.hidden_dim, n):
                        raise ValueError(f"layer {l} gate {g}: expected {(arch.hidden_dim, n)}, "
                                         f"got {cell.gates[g].shape}")
                    if cell.bias[g].shape != (arch.hidden_dim,):
                        raise ValueError(f"layer {l} bias {g} has wrong length")
                if cell.peephole is not None:
                    for g in PEEPHOLES:
                        if cell.peephole[g].shape != (arch.hidden_dim,):
                            raise ValueError(f"layer {l} peephole {g} has wrong length")
                if arch.projection and cell.projection.shape != (arch.projection_dim, arch.hidden_dim):
                    raise ValueError(f"layer {l} projection has wrong shape")

    def param_count(self) -> int:
        total = 0
        for t in self.named_tensors().values():
            total += t.param_count if isinstance(t, BlockCirculantMatrix) else np.size(t)
        return total


def init_random(arch: LstmArchSpec, seed: int, fmt: FxpFormat = Q3_12) -> LstmWeights:
    """Uniform weights in [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a seeded generator."""
    rng = np.random.default_rng(seed)
    k = arch.block_size
    tensors = {}
    for name, m, n in arch.matrix_shapes():
        tensors[name] = BlockCirculantMatrix.random(m, n, k, rng)
    for l in range(arch.num_layers):
        bound = 1.0 / math.sqrt(arch.layer_input_dim(l) + arch.output_dim)
        for d in arch.direction_names():
            pre = f"l{l}.{d}."
            for g in GATES:
                tensors[pre + f"b_{g}"] = rng.uniform(-bound, bound, arch.hidden_dim)
            if arch.peephole:
                for g in PEEPHOLES:
                    tensors[pre + f"w_{g}c"] = rng.uniform(-bound, bound, arch.hidden_dim)
    if arch.output_classes:
        n = arch.output_dim * arch.directions
        bound = 1.0 / math.sqrt(n)
        tensors["out.W"] = rng.uniform(-bound, bound, (arch.output_classes, n))
        tensors["out.b"] = rng.uniform(-bound, bound, arch.output_classes)
    return LstmWeights.from_named_tensors(arch, tensors, fmt)


# --------------------------------------------------------------------------
# execution


@dataclass
class CellState:
    """Recurrent state; float arrays in float/dense mode, FxpVector in fxp mode."""

    c: object
    y: object

    @classmethod
    def zeros(cls, cell: CellWeights, mode: str = "float") -> "CellState":
        if mode == "fxp":
            return cls(FxpVector(np.zeros(cell.hidden_dim, dtype=np.int64), cell.fmt),
                       FxpVector(np.zeros(cell.output_dim, dtype=np.int64), cell.fmt))
        return cls(np.zeros(cell.hidden_dim), np.zeros(cell.output_dim))

    def as_float(self) -> "CellState":
        if isinstance(self.c, FxpVector):
            return CellState(self.c.to_float(), self.y.to_float())
        return self


def _matvec(cell: CellWeights, name: str, v, mode: str, counters):
    if mode == "dense":
        return cell.dense(name) @ v
    return matvec_fft(cell.spectral(name), v, counters)


def _act(name: str, v):
    return sigmoid(v) if name == "sigmoid" else np.tanh(v)


def lstm_step(cell: CellWeights, x_t, prev: CellState, mode: str = "float", *,
              policy: ShiftPolicy = ShiftPolicy.DISTRIBUTED_IN_IDFT,
              counters: CallCounters | None = None, trace: dict | None = None) -> CellState:
    """One time step. ``trace`` (if given) receives gate pre-activations and activations."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "fxp":
        return _step_fxp(cell, x_t, prev, policy, counters, trace)
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape != (cell.input_dim,):
        raise ValueError(f"expected input of length {cell.input_dim}, got {x_t.shape}")
    xy = np.concatenate([x_t, prev.y])
    pre = {g: _matvec(cell, f"W_{g}", xy, mode, counters) + cell.bias[g] for g in GATES}
    if cell.peephole is not None:
        pre["i"] = pre["i"] + cell.peephole["i"] * prev.c
        pre["f"] = pre["f"] + cell.peephole["f"] * prev.c
    i = sigmoid(pre["i"])
    f = sigmoid(pre["f"])
    g = _act(cell.cell_activation, pre["c"])
    c = f * prev.c + g * i
    if cell.peephole is not None:
        pre["o"] = pre["o"] + cell.peephole["o"] * c
    o = sigmoid(pre["o"])
    m = o * np.tanh(c)
    y = _matvec(cell, "W_ym", m, mode, counters) if cell.projection is not None else m
    if trace is not None:
        trace.update(pre=pre, i=i, f=f, g=g, o=o, c=c, m=m, y=y)
    return CellState(c, y)


def _step_fxp(cell: CellWeights, x_t, prev: CellState, policy, counters, trace) -> CellState:
    fmt = cell.fmt
    if not isinstance(x_t, FxpVector):
        x_t = quantize_array(x_t, fmt)
    if x_t.raw.shape != (cell.input_dim,):
        raise ValueError(f"expected input of length {cell.input_dim}, got {x_t.raw.shape}")
    if not isinstance(prev.c, FxpVector):
        prev = CellState(quantize_array(prev.c, fmt), quantize_array(prev.y, fmt))
    xy = FxpVector(np.concatenate([x_t.raw, prev.y.raw]), fmt)
    pre = {}
    for g in GATES:
        a = matvec_fft_fxp(cell.spectral(f"W_{g}"), xy, policy, counters)
        pre[g] = fxp_add(a, cell.quant(f"b_{g}", cell.bias[g]))
    if cell.peephole is not None:
        for g in ("i", "f"):
            pre[g] = fxp_add(pre[g], fxp_mul(cell.quant(f"w_{g}c", cell.peephole[g]), prev.c))
    sig = build_pwl("sigmoid").quantized(fmt)
    tanh = build_pwl("tanh").quantized(fmt)
    i = pwl_eval(sig, pre["i"])
    f = pwl_eval(sig, pre["f"])
    g = pwl_eval(sig if cell.cell_activation == "sigmoid" else tanh, pre["c"])
    c = fxp_add(fxp_mul(f, prev.c), fxp_mul(g, i))
    if cell.peephole is not None:
        pre["o"] = fxp_add(pre["o"], fxp_mul(cell.quant("w_oc", cell.peephole["o"]), c))
    o = pwl_eval(sig, pre["o"])
    m = fxp_mul(o, pwl_eval(tanh, c))
    if cell.projection is not None:
        y = matvec_fft_fxp(cell.spectral("W_ym"), m, policy, counters)
    else:
        y = m
    if trace is not None:
        trace.update(pre=pre, i=i, f=f, g=g, o=o, c=c, m=m, y=y)
    return CellState(c, y)


def _classify(weights: LstmWeights, ys: np.ndarray, mode: str) -> np.ndarray:
    W, b = weights.classifier
    if mode != "fxp":
        return ys @ W.T + b
    fmt = weights.cells[0][0].fmt
    wq = quantize_array(W, fmt).raw
    bq = quantize_array(b, fmt).raw
    yq = quantize_array(ys, fmt).raw
    acc = yq @ wq.T  # products at 2*frac, wide accumulation
    acc = saturate(acc, FxpFormat(2 * fmt.frac_bits, 32))
    out = saturate(rshift_rne(acc, fmt.frac_bits) + bq, fmt)
    return out * fmt.lsb


def run_sequence(weights: LstmWeights, X, mode: str = "float", *,
                 policy: ShiftPolicy = ShiftPolicy.DISTRIBUTED_IN_IDFT,
                 counters: CallCounters | None = None) -> np.ndarray:
    """Run all layers over a (T, input_dim) sequence from zero state; returns (T, out) floats.

    Bidirectional layers concatenate the forward half then the backward half.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("sequence must be a non-empty (T, input_dim) array")
    if X.shape[1] != weights.arch.input_dim:
        raise ValueError(f"frames have {X.shape[1]} features, model expects {weights.arch.input_dim}")
    layer_in = X
    for per_dir in weights.cells:
        outs = []
        for d, cell in enumerate(per_dir):
            seq = layer_in if d == 0 else layer_in[::-1]
            state = CellState.zeros(cell, mode)
            ys = []
            for x_t in seq:
                state = lstm_step(cell, x_t, state, mode, policy=policy, counters=counters)
                ys.append(state.y.to_float() if mode == "fxp" else state.y)
            ys = np.stack(ys)
            outs.append(ys if d == 0 else ys[::-1])
        layer_in = np.concatenate(outs, axis=1)
    if weights.classifier is not None:
        return _classify(weights, layer_in, mode)
    return layer_in
