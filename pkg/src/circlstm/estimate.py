"""Analytical throughput and resource models for a staged pipeline.

Stage latency: ``T_k = ceil(max_v(Q(v) / N(v)) / R_k) + D_k`` cycles, with the
pipeline depth ``D_k`` affine in the longest operator chain inside the stage.
Throughput: ``FPS = frequency / max_k T_k``. Resources are linear:
``X = sum_k R_k * sum_{v in G_k} dX(kind(v)) * N(v)`` for X in DSP, BRAM, LUT, FF.

The default cost profile is synthetic. It is useful for checking the model
algebra and the scheduler, not for predicting real FPGA utilisation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources as _res
from pathlib import Path

RESOURCES = ("dsp", "bram", "lut", "ff")


@dataclass(frozen=True)
class PlatformProfile:
    name: str
    dsp: float
    bram: float
    lut: float
    ff: float
    frequency: float = 200e6

    def __post_init__(self):
        for r in RESOURCES:
            if not getattr(self, r) > 0:
                raise ValueError(f"{r} budget must be positive")
        if not self.frequency > 0:
            raise ValueError("frequency must be positive")

    def budget(self) -> dict:
        return {r: getattr(self, r) for r in RESOURCES}

    @classmethod
    def unlimited(cls, frequency: float = 200e6) -> "PlatformProfile":
        inf = math.inf
        return cls("unlimited", inf, inf, inf, inf, frequency)

    def to_dict(self) -> dict:
        return asdict(self)


def _data(name: str) -> dict:
    return json.loads(_res.files("circlstm").joinpath("data").joinpath(name).read_text())


def platform_presets() -> dict[str, PlatformProfile]:
    return {k: PlatformProfile(**v) for k, v in _data("platforms.json").items()}


def load_platform(name_or_path: str) -> PlatformProfile:
    """Preset name (``ku060``, ``7v3``, ``unlimited``) or a JSON file with the same fields."""
    key = name_or_path.lower()
    if key == "unlimited":
        return PlatformProfile.unlimited()
    presets = platform_presets()
    if key in presets:
        return presets[key]
    path = Path(name_or_path)
    if not path.exists():
        raise ValueError(f"unknown platform {name_or_path!r} (presets: {', '.join(presets)})")
    return PlatformProfile(**json.loads(path.read_text()))


@dataclass(frozen=True)
class OpCost:
    dsp: float = 0
    bram: float = 0
    lut: float = 0
    ff: float = 0

    def __post_init__(self):
        for r in RESOURCES:
            if getattr(self, r) < 0:
                raise ValueError(f"negative {r} cost")


@dataclass(frozen=True)
class OpCostProfile:
    """Per-unit-parallelism resource cost of each operator kind plus the depth model."""

    ops: dict = field(default_factory=dict)  # kind -> OpCost
    depth_base: int = 0
    depth_per_op: int = 5
    lanes: int = 1

    def __post_init__(self):
        if self.depth_base < 0 or self.depth_per_op < 0:
            raise ValueError("depth model must be non-negative")
        if self.lanes < 1:
            raise ValueError("lanes must be positive")

    def cost(self, kind: str) -> OpCost:
        try:
            return self.ops[kind]
        except KeyError:
            raise ValueError(f"no cost entry for operator kind {kind!r}") from None

    def depth(self, chain_ops: int) -> int:
        return self.depth_base + self.depth_per_op * chain_ops

    def with_costs(self, **kinds) -> "OpCostProfile":
        ops = dict(self.ops)
        ops.update(kinds)
        return OpCostProfile(ops, self.depth_base, self.depth_per_op, self.lanes)

    def to_dict(self) -> dict:
        return {"ops": {k: asdict(v) for k, v in self.ops.items()},
                "depth_base": self.depth_base, "depth_per_op": self.depth_per_op,
                "lanes": self.lanes}

    @classmethod
    def from_dict(cls, d: dict) -> "OpCostProfile":
        ops = {k: OpCost(**v) for k, v in d["ops"].items()}
        return cls(ops, d.get("depth_base", 0), d.get("depth_per_op", 5), d.get("lanes", 1))

    @classmethod
    def default(cls) -> "OpCostProfile":
        return cls.from_dict(_data("costs_default.json"))

    @classmethod
    def load(cls, path) -> "OpCostProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# performance


def stage_cycles(ops, replication: int = 1, depth: int = 0) -> int:
    """``ops`` is an iterable of ``(workload, parallelism)`` pairs of one stage."""
    if replication < 1:
        raise ValueError("replication must be at least 1")
    worst = max(Fraction(q, n) for q, n in ops)
    return math.ceil(worst / replication) + depth


def fps(cycles, frequency: float) -> float:
    cycles = list(cycles)
    if not cycles:
        raise ValueError("need at least one stage")
    return frequency / max(cycles)


def _stage_ops(assignment, k: int):
    nodes = assignment.graph.nodes
    return [(nodes[v].workload, assignment.parallelism[v]) for v in assignment.stages[k]]


def assignment_cycles(assignment, costs: OpCostProfile, replication=None) -> list[int]:
    replication = assignment.replication if replication is None else replication
    out = []
    for k in range(len(assignment.stages)):
        depth = costs.depth(assignment.graph.longest_chain(assignment.stages[k]))
        out.append(stage_cycles(_stage_ops(assignment, k), replication[k], depth))
    return out


# --------------------------------------------------------------------------
# resources


def stage_unit_resources(assignment, k: int, costs: OpCostProfile) -> dict:
    """Resources of one copy of stage ``k`` (the inner sum)."""
    nodes = assignment.graph.nodes
    totals = dict.fromkeys(RESOURCES, 0)
    for v in assignment.stages[k]:
        c = costs.cost(nodes[v].kind)
        n = assignment.parallelism[v]
        for r in RESOURCES:
            totals[r] += getattr(c, r) * n
    return totals


def resources(assignment, costs: OpCostProfile, replication=None) -> dict:
    replication = assignment.replication if replication is None else replication
    totals = dict.fromkeys(RESOURCES, 0)
    for k in range(len(assignment.stages)):
        unit = stage_unit_resources(assignment, k, costs)
        for r in RESOURCES:
            totals[r] += replication[k] * unit[r]
    return totals


@dataclass(frozen=True)
class FitReport:
    feasible: bool
    utilization: dict  # resource -> fraction of budget

    def to_dict(self) -> dict:
        return {"feasible": self.feasible,
                "utilization": {r: (None if math.isnan(u) else u) for r, u in self.utilization.items()}}


def check_fit(totals: dict, platform: PlatformProfile) -> FitReport:
    util = {}
    ok = True
    for r in RESOURCES:
        budget = getattr(platform, r)
        util[r] = 0.0 if math.isinf(budget) else totals[r] / budget
        ok = ok and totals[r] <= budget
    return FitReport(ok, util)


@dataclass(frozen=True)
class PipelineEstimate:
    stage_cycles: list
    fps: float
    resources: dict
    fit: FitReport
    frequency: float

    @property
    def feasible(self) -> bool:
        return self.fit.feasible

    def to_dict(self) -> dict:
        return {"stage_cycles": list(self.stage_cycles), "fps": self.fps,
                "resources": dict(self.resources), "frequency": self.frequency,
                **self.fit.to_dict()}


def estimate_pipeline(assignment, costs: OpCostProfile, platform: PlatformProfile,
                      replication=None) -> PipelineEstimate:
    cycles = assignment_cycles(assignment, costs, replication)
    totals = resources(assignment, costs, replication)
    return PipelineEstimate(cycles, fps(cycles, platform.frequency), totals,
                            check_fit(totals, platform), platform.frequency)
