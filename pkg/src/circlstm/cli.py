"""Command-line front end: compress, infer, verify, schedule, estimate, bench, sweep.

Every command prints a run report (``--format json|table|csv``) and can also
write it to ``--report``; ``--plot-dir`` additionally renders figures.

Exit codes: 0 success, 2 usage error, 3 verification failure, 4 bad input data
or infeasible request.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import bench_layer, bench_stats_check, policy_rows, sweep_rows
from .bundle import BundleError, load_bundle, read_sequence, save_bundle, weights_from_dense, write_sequence
from .circulant import BlockCirculantMatrix, CallCounters, SpectralWeights, matvec_fft, matvec_naive
from .estimate import OpCostProfile, estimate_pipeline, load_platform
from .fxp import FxpFormat, ShiftPolicy, log2_exact
from .graph import InfeasibleError, build_graph, enumerate_replication, plan, schedule, schedule_report
from .lstm import LstmWeights, init_random, load_arch, run_sequence

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_DATA = 0, 2, 3, 4


class VerificationFailed(Exception):
    pass


@dataclass
class RunReport:
    command: str
    inputs_digest: str
    outputs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    tool_version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# rendering


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        v = float(v)
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    return v


def _is_table(v) -> bool:
    return isinstance(v, list) and bool(v) and all(isinstance(r, dict) for r in v)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        elif not _is_table(v):
            out[key] = v
    return out


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v, separators=(",", ":"))
    return "" if v is None else str(v)


def _tables(d: dict, prefix: str = ""):
    for k, v in d.items():
        if _is_table(v):
            yield prefix + k, v
        elif isinstance(v, dict):
            yield from _tables(v, f"{prefix}{k}.")


def render(report: RunReport, fmt: str) -> str:
    data = _jsonable(report.to_dict())
    if fmt == "json":
        return json.dumps(data, indent=2, sort_keys=True) + "\n"
    scalars = _flatten({k: data[k] for k in ("command", "inputs_digest", "tool_version")})
    scalars.update(_flatten(data["outputs"], "outputs."))
    scalars.update(_flatten(data["metrics"], "metrics."))
    tables = list(_tables(data["outputs"], "outputs.")) + list(_tables(data["metrics"], "metrics."))
    buf = io.StringIO()
    if fmt == "csv":
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in scalars.items():
            w.writerow([k, _cell(v)])
        for name, rows in tables:
            buf.write(f"\n# {name}\n")
            cols = list(dict.fromkeys(c for r in rows for c in r))
            w.writerow(cols)
            for r in rows:
                w.writerow([_cell(r.get(c)) for c in cols])
        return buf.getvalue()
    width = max(map(len, scalars), default=0)
    for k, v in scalars.items():
        buf.write(f"{k.ljust(width)}  {_cell(v)}\n")
    for name, rows in tables:
        cols = list(dict.fromkeys(c for r in rows for c in r))
        cells = [[_cell(r.get(c)) for c in cols] for r in rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
        buf.write(f"\n[{name}]\n")
        buf.write("  ".join(c.ljust(wd) for c, wd in zip(cols, widths)).rstrip() + "\n")
        for row in cells:
            buf.write("  ".join(c.ljust(wd) for c, wd in zip(row, widths)).rstrip() + "\n")
    return buf.getvalue()


def parse_table(text: str) -> tuple[dict, dict]:
    """Inverse of the ``table`` rendering: (scalar key -> text, table name -> rows of text)."""
    scalars, tables, current, cols = {}, {}, None, None
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("[") and line.endswith("]"):
            current, cols = line[1:-1], None
            tables[current] = []
        elif current is None:
            key, _, value = line.partition("  ")
            scalars[key] = value.strip()
        elif cols is None:
            cols = line.split()
        else:
            tables[current].append(dict(zip(cols, line.split())))
    return scalars, tables


# --------------------------------------------------------------------------
# argument types


def _block_size(text: str) -> int:
    try:
        k = int(text)
        log2_exact(k)
    except ValueError:
        raise argparse.ArgumentTypeError(f"block size must be a power of two, got {text!r}") from None
    return k


def _block_list(text: str) -> list[int]:
    return [_block_size(t) for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        v = 0
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return v


def _fxp(text: str) -> FxpFormat:
    try:
        return FxpFormat.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _policy(text: str) -> ShiftPolicy:
    try:
        return ShiftPolicy.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


# --------------------------------------------------------------------------
# helpers


_PRESENTATION = {"func", "format", "plot_dir", "report"}


def _digest(args, files=()) -> str:
    """Hash of the parameters and input files that determine the results (not how they are shown)."""
    h = hashlib.sha256()
    params = {k: _cell(v) for k, v in sorted(vars(args).items()) if k not in _PRESENTATION}
    h.update(json.dumps(params, sort_keys=True).encode())
    for f in files:
        p = Path(f)
        if p.is_dir():
            p = p / "manifest.json"
        if p.exists():
            h.update(p.read_bytes())
    return h.hexdigest()


def _arch_from(args, k=None):
    """Architecture from --bundle when given, else --arch; ``k`` overrides the block size."""
    weights = None
    if getattr(args, "bundle", None):
        weights, _ = load_bundle(args.bundle)
        arch = weights.arch
    else:
        arch = load_arch(args.arch)
    if k is not None:
        arch = arch.replace(block_size=k)
    return arch, weights


def _costs(args) -> OpCostProfile:
    return OpCostProfile.load(args.costs) if args.costs else OpCostProfile.default()


def _figure(args, report: RunReport, name: str, fn, *fargs):
    if args.plot_dir:
        report.outputs.setdefault("figures", []).append(fn(*fargs, Path(args.plot_dir) / name))


def _with_format(weights: LstmWeights, fmt: FxpFormat | None) -> LstmWeights:
    if fmt is None or fmt == weights.cells[0][0].fmt:
        return weights
    return LstmWeights.from_named_tensors(weights.arch, weights.named_tensors(), fmt)


# --------------------------------------------------------------------------
# commands


def cmd_compress(args) -> RunReport:
    report = RunReport("compress", _digest(args, [args.dense] if args.dense else []))
    arch = load_arch(args.arch)
    if args.sweep:
        rows = sweep_rows(arch, args.sweep)
        report.outputs["sweep"] = [
            {"block_size": r["block_size"], "param_count": r["param_count"],
             "param_millions": round(r["param_count"] / 1e6, 2),
             "compression_ratio": r["compression_ratio"],
             "matrix_compression_ratio": r["matrix_compression_ratio"],
             "ratio_to_next": r["ratio_to_next"],
             "complexity_ratio": r["complexity_ratio"]} for r in rows]
        from .plots import plot_sweep
        _figure(args, report, "sweep.png", plot_sweep, rows)
        if not args.out:
            return report
    if not args.out:
        raise argparse.ArgumentTypeError("compress needs --out unless --sweep is given")
    if args.block_size:
        arch = arch.replace(block_size=args.block_size)
    if args.dense:
        weights = weights_from_dense(arch, args.dense, args.fxp)
        source = "dense"
    else:
        weights = init_random(arch, args.seed, args.fxp or FxpFormat())
        source = "random"
    manifest = save_bundle(weights, args.out, seed=args.seed, source=source, spectra=not args.no_spectra)
    from .circulant import compression_stats
    stats = compression_stats(arch)
    report.outputs.update({
        "bundle": str(args.out), "block_size": arch.block_size, "source": source,
        "tensors": len(manifest["tensors"]), "param_count": weights.param_count(),
        "dense_param_count": stats["dense_param_count"],
        "compression_ratio": stats["compression_ratio"],
        "matrix_compression_ratio": stats["matrix_compression_ratio"],
    })
    return report


def cmd_infer(args) -> RunReport:
    report = RunReport("infer", _digest(args, [args.bundle, args.sequence]))
    weights, manifest = load_bundle(args.bundle)
    weights = _with_format(weights, args.fxp)
    X = read_sequence(args.sequence, weights.arch.input_dim)
    if X.shape[0] == 0:
        raise ValueError("input sequence is empty")
    counters = CallCounters()
    t0 = time.perf_counter()
    Y = run_sequence(weights, X, args.mode, policy=args.shift_policy, counters=counters)
    elapsed = time.perf_counter() - t0
    report.metrics.update({"frames": int(X.shape[0]), "seconds": elapsed,
                           "frames_per_second": X.shape[0] / elapsed, "counters": counters.as_dict()})
    if args.mode == "fxp":
        report.metrics["policy"] = ShiftPolicy.parse(args.shift_policy).value
        report.metrics["fxp_format"] = str(weights.cells[0][0].fmt)
    if args.verify:
        oracle = run_sequence(weights, X, "dense")
        dev = float(np.abs(Y - oracle).max())
        if args.mode == "fxp":
            report.metrics["max_deviation_vs_float"] = float(np.abs(Y - run_sequence(weights, X, "float")).max())
            report.metrics["max_deviation_vs_dense"] = dev
        else:
            report.metrics["max_deviation_vs_dense"] = dev
            report.metrics["verified"] = dev < args.tolerance
            if not dev < args.tolerance:
                report.outputs["shape"] = list(Y.shape)
                raise VerificationFailed(report)
    if args.out:
        write_sequence(args.out, Y)
        report.outputs["written"] = str(args.out)
    else:
        report.outputs["frames"] = Y.tolist()
    report.outputs["shape"] = list(Y.shape)
    return report


def _oracle_instances(count: int, seed: int):
    rng = np.random.default_rng(seed)
    ks = (2, 4, 8, 16)
    for i in range(count):
        k = ks[i % len(ks)]
        p, q = rng.integers(1, 5, size=2)
        m = int(rng.integers((p - 1) * k + 1, p * k + 1))
        n = int(rng.integers((q - 1) * k + 1, q * k + 1))
        B = BlockCirculantMatrix.random(m, n, k, rng, bound=1.0)
        yield B, rng.standard_normal(n)


def cmd_verify(args) -> RunReport:
    report = RunReport("verify", _digest(args, [args.bundle] if args.bundle else []))
    rows = []
    worst = 0.0
    count_ok = True
    t0 = time.perf_counter()
    for B, x in _oracle_instances(args.instances, args.seed):
        c = CallCounters()
        W = SpectralWeights.from_matrix(B)
        fast = matvec_fft(W, x, c)
        ref = matvec_naive(B, x)
        worst = max(worst, float(np.linalg.norm(fast - ref) / max(np.linalg.norm(ref), 1e-300)))
        count_ok &= (c.dft_calls, c.idft_calls, c.pointwise_calls) == (B.q, B.p, B.p * B.q)
    rows.append({"check": "matvec_fft vs matvec_naive", "value": worst, "limit": 1e-8,
                 "passed": worst < 1e-8})
    rows.append({"check": "call counts q/p/pq", "value": int(count_ok), "limit": 1,
                 "passed": bool(count_ok)})
    if args.bundle:
        weights, _ = load_bundle(args.bundle)  # raises on hash or spectrum mismatch
        rows.append({"check": "bundle hashes and spectra", "value": 1, "limit": 1, "passed": True})
        rng = np.random.default_rng(args.seed)
        X = rng.uniform(-1, 1, (args.frames, weights.arch.input_dim))
        dev = float(np.abs(run_sequence(weights, X, "float") - run_sequence(weights, X, "dense")).max())
        rows.append({"check": "lstm float vs dense", "value": dev, "limit": 1e-8, "passed": dev < 1e-8})
    report.outputs["checks"] = rows
    report.metrics["instances"] = args.instances
    report.metrics["seconds"] = time.perf_counter() - t0
    report.metrics["passed"] = all(r["passed"] for r in rows)
    if not report.metrics["passed"]:
        raise VerificationFailed(report)
    return report


def _stage_rows(rep: dict) -> list[dict]:
    rows = []
    for i, st in enumerate(rep["stages"]):
        rows.append({"stage": i + 1, "ops": len(st),
                     "kinds": ",".join(sorted({n["kind"] for n in st})),
                     "max_N": max(n["N"] for n in st), "R": rep["replication"][i],
                     "cycles": rep["stage_cycles"][i]})
    return rows


def _schedule_outputs(rep: dict) -> dict:
    summary = {k: rep[k] for k in ("platform", "num_stages", "fps", "frequency", "feasible",
                                   "bottleneck_stage", "double_buffers", "replication",
                                   "stage_cycles", "compounded", "resources", "utilization")}
    nodes = [{"id": n["id"], "stage": i + 1, "kind": n["kind"], "N": n["N"], "label": n["label"]}
             for i, st in enumerate(rep["stages"]) for n in st]
    return {"summary": summary, "stages": _stage_rows(rep), "nodes": nodes}


def cmd_schedule(args) -> RunReport:
    report = RunReport("schedule", _digest(args, [args.bundle] if args.bundle else []))
    arch, _ = _arch_from(args, args.block_size)
    costs = _costs(args)
    platform = load_platform(args.budget or args.platform)
    G = build_graph(arch, args.layer, costs.lanes)
    assignment = plan(G, platform, costs, args.cap)
    rep = schedule_report(assignment, costs, platform)
    report.outputs.update(_schedule_outputs(rep))
    report.metrics["graph_nodes"] = len(G)
    report.metrics["graph_edges"] = G.dag.number_of_edges()
    if args.dag_out:
        Path(args.dag_out).write_text(G.to_text(assignment.parallelism))
        report.outputs["dag_file"] = str(args.dag_out)
    from .plots import plot_schedule
    _figure(args, report, "schedule.png", plot_schedule, rep)
    return report


def cmd_estimate(args) -> RunReport:
    report = RunReport("estimate", _digest(args, [args.bundle] if args.bundle else []))
    arch, _ = _arch_from(args, args.block_size)
    costs = _costs(args)
    platform = load_platform(args.platform)
    G = build_graph(arch, args.layer, costs.lanes)
    assignment = schedule(G, platform, costs)
    if args.replication:
        if len(args.replication) != assignment.num_stages:
            raise ValueError(f"--replication needs {assignment.num_stages} values")
        if min(args.replication) < 1:
            raise ValueError("replication factors must be positive")
        R = args.replication
    else:
        R = enumerate_replication(assignment, platform, costs, args.cap)
    est = estimate_pipeline(assignment, costs, platform, R)
    report.outputs["summary"] = {"platform": platform.name, "num_stages": assignment.num_stages,
                                 "replication": list(R), **est.to_dict()}
    report.outputs["stages"] = [{"stage": i + 1, "ops": len(st), "R": R[i], "cycles": est.stage_cycles[i]}
                                for i, st in enumerate(assignment.stages)]
    return report


def cmd_bench(args) -> RunReport:
    report = RunReport("bench", _digest(args, [args.bundle] if args.bundle else []))
    arch, _ = _arch_from(args)
    rows = []
    for k in args.block_sizes:
        row = bench_layer(arch, k, args.frames, args.repetitions, args.seed)
        stats = bench_stats_check(arch, k)
        row["ops_match_compression_stats"] = (stats["fft_ops"] == row["fft_ops_per_frame"]
                                              and stats["dense_ops"] == row["dense_ops_per_frame"])
        rows.append(row)
    report.outputs["bench"] = rows
    report.metrics["repetitions"] = args.repetitions
    from .plots import plot_bench
    _figure(args, report, "bench.png", plot_bench, rows)
    return report


def cmd_sweep(args) -> RunReport:
    report = RunReport("sweep", _digest(args))
    arch = load_arch(args.arch)
    rows = sweep_rows(arch, args.ks)
    report.outputs["compression"] = [
        {k: r[k] for k in ("block_size", "param_count", "dense_param_count", "compression_ratio",
                           "matrix_compression_ratio", "ratio_to_next", "fft_ops", "dense_ops",
                           "complexity_ratio")} for r in rows]
    pol = policy_rows(args.policy_ks, args.vectors, args.seed)
    report.outputs["fxp_policies"] = pol
    from .plots import plot_policy, plot_pwl, plot_sweep
    _figure(args, report, "sweep.png", plot_sweep, rows)
    _figure(args, report, "policies.png", plot_policy, pol)
    _figure(args, report, "pwl.png", plot_pwl)
    return report


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def add_globals(p, suppress):
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--seed", type=int, default=d(0), help="RNG seed (default 0)")
        p.add_argument("--format", choices=("json", "table", "csv"), default=d("json"))
        p.add_argument("--fxp", type=_fxp, default=d(None), metavar="Q<i>.<f>",
                       help="16-bit fixed-point format (default q3.12)")
        p.add_argument("--shift-policy", type=_policy, default=d(ShiftPolicy.DISTRIBUTED_IN_IDFT),
                       help="all-at-idft-end | distributed-in-idft | distributed-in-dft")
        p.add_argument("--platform", default=d("ku060"), help="ku060 | 7v3 | path to JSON")
        p.add_argument("--plot-dir", default=d(None), help="write figures into this directory")
        p.add_argument("--report", default=d(None), help="also write the JSON report here")

    parser = argparse.ArgumentParser(prog="circlstm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"circlstm {__version__}")
    add_globals(parser, False)
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compress", parents=[common], help="build a block-circulant model bundle")
    p.add_argument("--arch", default="google", help="google | small | path to JSON")
    p.add_argument("-k", "--block-size", type=_block_size)
    p.add_argument("--dense", help="project dense matrices from this .npz instead of random init")
    p.add_argument("-o", "--out", help="bundle directory")
    p.add_argument("--sweep", type=_block_list, help="e.g. 1,2,4,8,16: parameter table instead of/in addition to a bundle")
    p.add_argument("--no-spectra", action="store_true", help="do not store precomputed spectra")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("infer", parents=[common], help="run a sequence through a bundle")
    p.add_argument("bundle")
    p.add_argument("sequence", help=".json frames or raw little-endian float32")
    p.add_argument("--mode", choices=("float", "fxp", "dense"), default="float")
    p.add_argument("--verify", action="store_true", help="compare with the dense oracle")
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("-o", "--out", help="write outputs (.json or raw float32)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("verify", parents=[common], help="oracle checks of the spectral path")
    p.add_argument("--bundle")
    p.add_argument("--instances", type=_positive, default=500)
    p.add_argument("--frames", type=_positive, default=4)
    p.set_defaults(func=cmd_verify)

    for name, fn, text in (("schedule", cmd_schedule, "stage scheduling and replication"),
                           ("estimate", cmd_estimate, "throughput and resource estimate")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--bundle")
        p.add_argument("--arch", default="google")
        p.add_argument("-k", "--block-size", type=_block_size)
        p.add_argument("--costs", help="operator cost profile JSON")
        p.add_argument("--layer", type=int, default=0)
        p.add_argument("--cap", type=_positive, default=16, help="max replication per stage")
        p.set_defaults(func=fn)
        if name == "schedule":
            p.add_argument("--budget", help="'unlimited' or a platform; overrides --platform")
            p.add_argument("--dag-out", help="write the operator graph as text")
        else:
            p.add_argument("--replication", type=_int_list, help="R per stage, e.g. 16,2,13")

    p = sub.add_parser("bench", parents=[common], help="host timing, spectral vs dense")
    p.add_argument("--bundle")
    p.add_argument("--arch", default="google")
    p.add_argument("-k", "--block-sizes", type=_block_list, default=[16])
    p.add_argument("--frames", type=_positive, default=32)
    p.add_argument("--repetitions", type=_positive, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep", parents=[common], help="block-size sweep and fixed-point policy comparison")
    p.add_argument("--arch", default="google")
    p.add_argument("--ks", type=_block_list, default=[1, 2, 4, 8, 16])
    p.add_argument("--policy-ks", type=_block_list, default=[4, 8, 16])
    p.add_argument("--vectors", type=_positive, default=1000)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = sys.stdout
    try:
        report = args.func(args)
        code = EXIT_OK
    except VerificationFailed as e:
        report, code = e.args[0], EXIT_VERIFY
    except argparse.ArgumentTypeError as e:
        parser.error(str(e))
    except (BundleError, InfeasibleError, ValueError, KeyError, OSError) as e:
        print(f"circlstm {args.command}: error: {e}", file=sys.stderr)
        return EXIT_DATA
    text = render(report, args.format)
    out.write(text)
    if args.report:
        Path(args.report).write_text(render(report, "json"))
    return code


if __name__ == "__main__":
    sys.exit(main())
