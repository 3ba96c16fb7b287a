"""Operator dependency graphs, priority list scheduling and stage replication.

An LSTM cell is described by a few assignment statements in a tiny expression
language (``conv(W, v)``, ``+``, ``*``, ``sigmoid()``, ``tanh()``). Every
operator occurrence becomes a node. Names that are never assigned, including
``*_prev`` recurrent state, are external inputs, so the feedback edges of the
recurrence never appear and the graph is a DAG by construction.
"""

from __future__ import annotations

import itertools
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import networkx as nx

from .circulant import circulant_matvec_ops
from .estimate import (
    RESOURCES,
    OpCostProfile,
    PlatformProfile,
    assignment_cycles,
    check_fit,
    estimate_pipeline,
    resources,
    stage_cycles,
    stage_unit_resources,
)

KINDS = ("circulant-conv", "ewise-mul", "ewise-add", "sigmoid", "tanh")


class CycleError(ValueError):
    pass


class InfeasibleError(RuntimeError):
    pass


@dataclass
class OpNode:
    id: int
    kind: str
    label: str
    weight: int  # arithmetic operations
    workload: int  # schedulable work items
    length: int  # output vector length
    matrix: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.weight <= 0 or self.workload <= 0:
            raise ValueError("weight and workload must be positive")


@dataclass
class OpGraph:
    nodes: dict  # id -> OpNode
    dag: nx.DiGraph

    @classmethod
    def from_edges(cls, weights: dict, edges, kinds: dict | None = None,
                   workloads: dict | None = None) -> "OpGraph":
        """Build a graph directly, mostly for tests and synthetic workloads."""
        kinds = kinds or {}
        workloads = workloads or {}
        nodes = {v: OpNode(v, kinds.get(v, "ewise-add"), f"n{v}", w, workloads.get(v, w), 1)
                 for v, w in weights.items()}
        dag = nx.DiGraph()
        dag.add_nodes_from(nodes)
        dag.add_edges_from(edges)
        return cls(nodes, dag)

    def __len__(self):
        return len(self.nodes)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.dag.edges)

    @property
    def sources(self) -> list[int]:
        return sorted(v for v in self.dag if self.dag.in_degree(v) == 0)

    @property
    def sinks(self) -> list[int]:
        return sorted(v for v in self.dag if self.dag.out_degree(v) == 0)

    def weights(self) -> dict:
        return {v: n.weight for v, n in self.nodes.items()}

    def kind_counts(self) -> Counter:
        return Counter(n.kind for n in self.nodes.values())

    def longest_chain(self, subset) -> int:
        """Number of operators on the longest dependency path inside ``subset``."""
        sub = self.dag.subgraph(subset)
        if sub.number_of_nodes() == 0:
            return 0
        return nx.dag_longest_path_length(sub) + 1

    def to_text(self, parallelism: dict | None = None) -> str:
        lines = [f"# opgraph nodes={len(self.nodes)} edges={self.dag.number_of_edges()}"]
        for v in sorted(self.nodes):
            n = self.nodes[v]
            par = 1 if parallelism is None else parallelism[v]
            lines.append(f"node {v} {n.kind} W={n.weight} Q={n.workload} N={par} {n.label}")
        lines += [f"edge {u} {v}" for u, v in self.edges]
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# equation language

_TOKEN = re.compile(r"\s*(?:([A-Za-z_]\w*)|(.))")


def _tokenize(text: str) -> list[str]:
    out = []
    for name, sym in _TOKEN.findall(text):
        tok = name or sym
        if tok.strip():
            out.append(tok)
    return out


class _Builder:
    def __init__(self, matrices: dict, default_length: int, k: int, lanes: int):
        self.matrices = matrices
        self.default_length = default_length
        self.k = k
        self.lanes = lanes
        self.nodes: dict[int, OpNode] = {}
        self.edges: list[tuple[int, int]] = []
        self.defined: dict[str, int] = {}

    def statement(self, text: str):
        toks = _tokenize(text)
        if len(toks) < 3 or toks[1] != "=":
            raise ValueError(f"expected 'name = expression', got {text!r}")
        self.toks, self.pos = toks[2:], 0
        target = toks[0]
        ref = self.expr()
        if self.pos != len(self.toks):
            raise ValueError(f"trailing tokens in {text!r}")
        if not isinstance(ref, int):
            raise ValueError(f"{target} must be computed by at least one operator")
        self.nodes[ref].label = target
        self.defined[target] = ref

    def peek(self):
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise ValueError(f"expected {expected or 'token'}, got {tok!r}")
        self.pos += 1
        return tok

    def expr(self):
        terms = [self.term()]
        while self.peek() == "+":
            self.take()
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else self.ewise("ewise-add", terms)

    def term(self):
        ref = self.factor()
        while self.peek() == "*":
            self.take()
            ref = self.ewise("ewise-mul", [ref, self.factor()])
        return ref

    def factor(self):
        tok = self.take()
        if tok == "(":
            ref = self.expr()
            self.take(")")
            return ref
        if tok in ("sigmoid", "tanh") and self.peek() == "(":
            self.take("(")
            arg = self.expr()
            self.take(")")
            return self.ewise(tok, [arg])
        if tok == "conv" and self.peek() == "(":
            self.take("(")
            mat = self.take()
            self.take(",")
            arg = self.expr()
            self.take(")")
            return self.conv(mat, arg)
        if not re.fullmatch(r"[A-Za-z_]\w*", tok):
            raise ValueError(f"unexpected token {tok!r}")
        return self.defined.get(tok, tok)  # undefined names are external inputs

    def add_node(self, kind, label, weight, workload, length, args, matrix=None) -> int:
        v = len(self.nodes)
        self.nodes[v] = OpNode(v, kind, label, weight, workload, length, matrix)
        for a in args:
            if isinstance(a, int):
                self.edges.append((a, v))
        return v

    def _label(self, a):
        return self.nodes[a].label if isinstance(a, int) else a

    def ewise(self, kind, args) -> int:
        lengths = [self.nodes[a].length for a in args if isinstance(a, int)]
        length = lengths[0] if lengths else self.default_length
        sym = {"ewise-add": "+", "ewise-mul": "*"}.get(kind)
        if sym:
            label = f"({sym.join(self._label(a) for a in args)})"
        else:
            label = f"{kind}({self._label(args[0])})"
        return self.add_node(kind, label, length, -(-length // self.lanes), length, args)

    def conv(self, mat, arg) -> int:
        if mat not in self.matrices:
            raise ValueError(f"unknown matrix {mat!r}")
        m, n = self.matrices[mat]
        p, q = -(-m // self.k), -(-n // self.k)
        return self.add_node("circulant-conv", f"conv({mat},{self._label(arg)})",
                             circulant_matvec_ops(m, n, self.k), p * q, m, [arg], mat)


def parse_equations(statements, matrices: dict, default_length: int, k: int,
                    lanes: int = 1) -> OpGraph:
    """Build an :class:`OpGraph` from assignment statements.

    ``matrices`` maps matrix names to ``(rows, cols)``; element-wise operators
    on external operands only get ``default_length``.
    """
    b = _Builder(matrices, default_length, k, lanes)
    for s in statements:
        b.statement(s)
    dag = nx.DiGraph()
    dag.add_nodes_from(b.nodes)
    dag.add_edges_from(b.edges)
    return OpGraph(b.nodes, dag)


def cell_equations(arch) -> list[str]:
    act_g = arch.cell_activation
    if arch.peephole:
        eqs = ["i = sigmoid(conv(W_i, xy) + W_ic * c_prev + b_i)",
               "f = sigmoid(conv(W_f, xy) + W_fc * c_prev + b_f)",
               f"g = {act_g}(conv(W_c, xy) + b_c)",
               "c = f * c_prev + g * i",
               "o = sigmoid(conv(W_o, xy) + W_oc * c + b_o)"]
    else:
        eqs = ["i = sigmoid(conv(W_i, xy) + b_i)",
               "f = sigmoid(conv(W_f, xy) + b_f)",
               f"g = {act_g}(conv(W_c, xy) + b_c)",
               "c = f * c_prev + g * i",
               "o = sigmoid(conv(W_o, xy) + b_o)"]
    eqs.append("m = o * tanh(c)")
    if arch.projection:
        eqs.append("y = conv(W_ym, m)")
    return eqs


def build_graph(arch, layer: int = 0, lanes: int = 1) -> OpGraph:
    """Operator DAG of one time step of one cell (one layer, one direction)."""
    concat = arch.layer_input_dim(layer) + arch.output_dim
    mats = {f"W_{g}": (arch.hidden_dim, concat) for g in "ifco"}
    if arch.projection:
        mats["W_ym"] = (arch.projection_dim, arch.hidden_dim)
    return parse_equations(cell_equations(arch), mats, arch.hidden_dim, arch.block_size, lanes)


# --------------------------------------------------------------------------
# priorities


def compute_priorities(G, W: dict | None = None) -> dict:
    """P(v) = W(v) + max over successors P(s); sinks get P = W."""
    dag = G.dag if isinstance(G, OpGraph) else G
    if W is None:
        W = G.weights()
    try:
        order = list(nx.topological_sort(dag))
    except nx.NetworkXUnfeasible:
        raise CycleError("operator graph contains a cycle") from None
    P = {}
    for v in reversed(order):
        P[v] = W[v] + max((P[s] for s in dag.successors(v)), default=0)
    return P


def priority_order(P: dict) -> list:
    return sorted(P, key=lambda v: (-P[v], v))


# --------------------------------------------------------------------------
# scheduling


@dataclass
class StageAssignment:
    graph: OpGraph
    stages: list  # list of lists of node ids
    parallelism: dict  # node id -> N(v)
    replication: list  # R per stage
    compounded: list = field(default_factory=list)  # nodes scaled more than once

    @property
    def num_stages(self) -> int:
        return len(self.stages)

    def stage_of(self) -> dict:
        return {v: k for k, st in enumerate(self.stages) for v in st}

    def validate(self):
        where = self.stage_of()
        flat = [v for st in self.stages for v in st]
        if len(flat) != len(where) or set(flat) != set(self.graph.nodes):
            raise ValueError("stages do not partition the graph")
        if any(not st for st in self.stages):
            raise ValueError("empty stage")
        for u, v in self.graph.dag.edges:
            if where[u] > where[v]:
                raise ValueError(f"edge {u}->{v} goes backwards across stages")
        if any(self.parallelism[v] < 1 for v in flat):
            raise ValueError("parallelism must be at least 1")
        if len(self.replication) != len(self.stages) or min(self.replication) < 1:
            raise ValueError("one replication factor >= 1 per stage required")

    def with_replication(self, replication) -> "StageAssignment":
        return StageAssignment(self.graph, self.stages, self.parallelism, list(replication),
                               self.compounded)

    def to_dict(self) -> dict:
        nodes = self.graph.nodes
        return {
            "num_stages": self.num_stages,
            "stages": [[{"id": v, "kind": nodes[v].kind, "label": nodes[v].label,
                         "N": self.parallelism[v]} for v in st] for st in self.stages],
            "replication": list(self.replication),
            "compounded": list(self.compounded),
            "double_buffers": self.num_stages - 1,
        }


def _fits(graph, stages, parallelism, costs, budget) -> bool:
    trial = StageAssignment(graph, stages, parallelism, [1] * len(stages))
    return check_fit(resources(trial, costs), budget).feasible


def schedule(G: OpGraph, budget: PlatformProfile | None, costs: OpCostProfile,
             W: dict | None = None, P: dict | None = None) -> StageAssignment:
    """Greedy priority-ordered stage formation.

    Candidates are visited in decreasing priority (ties by ascending id). A
    candidate v joins the open stage if, after rescaling, the whole pipeline
    at R = 1 still fits ``budget``; otherwise it opens a new stage. Rescaling
    multiplies each co-resident N(u) by ceil(W(u)/W(v)) and gives v the
    parallelism max_u N(u)*ceil(W(v)/W(u)), so heavier operators get more
    lanes than lighter ones sharing the stage.
    """
    budget = budget or PlatformProfile.unlimited()
    W = G.weights() if W is None else W
    P = compute_priorities(G, W) if P is None else P
    closed: list[list[int]] = []
    current: list[int] = []
    N: dict[int, int] = {}
    scaled = Counter()
    for v in priority_order(P):
        trial = dict(N)
        grew = []
        for u in current:
            factor = math.ceil(W[u] / W[v])
            trial[u] = N[u] * factor
            if factor > 1:
                grew.append(u)
        trial[v] = max((N[u] * math.ceil(W[v] / W[u]) for u in current), default=1)
        if current and _fits(G, closed + [current + [v]], trial, costs, budget):
            current.append(v)
            N = trial
            scaled.update(grew)
            continue
        if current:
            closed.append(current)
        current = [v]
        N[v] = 1
        if not _fits(G, closed + [current], N, costs, budget):
            raise InfeasibleError(
                f"operator {v} ({G.nodes[v].label}) does not fit the {budget.name} budget at N=1")
    closed.append(current)
    out = StageAssignment(G, closed, N, [1] * len(closed), sorted(v for v, c in scaled.items() if c > 1))
    out.validate()
    return out


# --------------------------------------------------------------------------
# replication


def _stage_tables(assignment, costs, cap):
    """Per stage: cycles for R = 1..cap and resources of one copy."""
    nodes = assignment.graph.nodes
    cycles, units = [], []
    for k, st in enumerate(assignment.stages):
        ops = [(nodes[v].workload, assignment.parallelism[v]) for v in st]
        depth = costs.depth(assignment.graph.longest_chain(st))
        cycles.append([stage_cycles(ops, r, depth) for r in range(1, cap + 1)])
        units.append(stage_unit_resources(assignment, k, costs))
    return cycles, units


def _totals(R, units):
    return {r: sum(R[k] * units[k][r] for k in range(len(R))) for r in RESOURCES}


def _rank(R, cycles, units):
    tot = _totals(R, units)
    return (max(cycles[k][R[k] - 1] for k in range(len(R))),
            *(tot[r] for r in RESOURCES), tuple(R))


def replication_exhaustive(assignment, budget, costs, cap: int = 16) -> list[int]:
    """Best R over all vectors in [1, cap]^K: max FPS, then least DSP, BRAM, LUT, FF, then lexicographic."""
    cycles, units = _stage_tables(assignment, costs, cap)
    best = None
    for R in itertools.product(range(1, cap + 1), repeat=len(assignment.stages)):
        if not check_fit(_totals(R, units), budget).feasible:
            continue
        key = _rank(R, cycles, units)
        if best is None or key < best:
            best = key
    if best is None:
        raise InfeasibleError("no replication vector fits the budget")
    return list(best[-1])


def replication_threshold(assignment, budget, costs, cap: int = 16) -> list[int]:
    """Same optimum as :func:`replication_exhaustive` in time linear in K*cap.

    For each candidate bottleneck T (ascending) each stage takes the least R
    meeting T; that vector is componentwise minimal, so with non-negative
    costs it also wins every tie-break.
    """
    cycles, units = _stage_tables(assignment, costs, cap)
    for T in sorted({c for row in cycles for c in row}):
        R = []
        for row in cycles:
            r = next((i + 1 for i, c in enumerate(row) if c <= T), None)
            if r is None:
                break
            R.append(r)
        else:
            if check_fit(_totals(R, units), budget).feasible:
                return R
    raise InfeasibleError("no replication vector fits the budget")


def enumerate_replication(assignment, budget: PlatformProfile, costs: OpCostProfile,
                          cap: int = 16, method: str = "auto") -> list[int]:
    """Replication factors maximising modelled FPS under the budget.

    ``auto`` searches exhaustively when there are at most 65536 vectors and
    otherwise uses the threshold method, which returns the same answer.
    """
    if cap < 1:
        raise ValueError("cap must be at least 1")
    if method == "auto":
        method = "exhaustive" if cap ** len(assignment.stages) <= 65536 else "threshold"
    if method == "exhaustive":
        return replication_exhaustive(assignment, budget, costs, cap)
    if method == "threshold":
        return replication_threshold(assignment, budget, costs, cap)
    raise ValueError(f"unknown method {method!r}")


def plan(G: OpGraph, budget: PlatformProfile | None, costs: OpCostProfile,
         cap: int = 16) -> StageAssignment:
    """Schedule, then pick replication factors."""
    budget = budget or PlatformProfile.unlimited()
    a = schedule(G, budget, costs)
    return a.with_replication(enumerate_replication(a, budget, costs, cap))


def schedule_report(assignment: StageAssignment, costs: OpCostProfile,
                    platform: PlatformProfile) -> dict:
    est = estimate_pipeline(assignment, costs, platform)
    out = assignment.to_dict()
    out["stage_cycles"] = est.stage_cycles
    out["bottleneck_stage"] = est.stage_cycles.index(max(est.stage_cycles))
    out.update({k: v for k, v in est.to_dict().items() if k != "stage_cycles"})
    out["platform"] = platform.name
    return out


__all__ = [
    "KINDS", "CycleError", "InfeasibleError", "OpNode", "OpGraph", "StageAssignment",
    "parse_equations", "cell_equations", "build_graph", "compute_priorities", "priority_order",
    "schedule", "enumerate_replication", "replication_exhaustive", "replication_threshold",
    "plan", "schedule_report", "assignment_cycles",
]
