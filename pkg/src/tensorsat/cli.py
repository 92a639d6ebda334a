"""Command-line driver: optimize graphs end-to-end, generate benchmark
graphs, emit ILP models, and run ablation sweeps.

Same config => byte-identical optimized graph and stats, except for the
wall-clock fields (keys containing "time").
"""

from __future__ import annotations

import argparse
import os
import random
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from . import bench
from .cost import CostModel, egraph_costs, graph_cost, load_cost_table
from .errors import TensorSatError
from .explorer import ExploreLimits, explore
from .extract import (
    ExtractionResult,
    build_ilp,
    export_lp,
    greedy_extract,
    parse_solution,
    reconstruct,
    solve_ilp,
)
from .rules import RewriteRule, default_rules, parse_rules
from .tensor_lang import TensorGraph, emit_graph, make_single_rooted, parse_graph


@dataclass
class RunConfig:
    graph: str
    rules: Optional[str] = None  # None: shipped default ruleset
    costs: Optional[str] = None  # None: synthetic model
    n_max: int = 50000
    k_max: int = 15
    k_multi: int = 1
    explore_time_limit_s: Optional[float] = None
    time_limit_s: float = 60.0  # ILP solver budget
    extractor: str = "ilp"  # greedy | ilp
    ilp_cycle: bool = False
    topo: str = "real"  # real | int
    filter_mode: str = "efficient"  # none | vanilla | efficient
    allow_self_pairs: bool = False
    out: Optional[str] = None
    stats_out: Optional[str] = None
    emit_lp: Optional[str] = None
    solution: Optional[str] = None

    def validate(self) -> None:
        if self.extractor not in ("greedy", "ilp"):
            raise TensorSatError(f"unknown extractor {self.extractor!r}")
        if self.extractor == "ilp" and not self.ilp_cycle and self.filter_mode == "none":
            raise TensorSatError(
                "ILP without cycle constraints requires cycle filtering "
                "(--filter vanilla|efficient)"
            )


@dataclass
class OptimizeOutcome:
    graph: TensorGraph
    result: Optional[ExtractionResult]
    stats: dict[str, object] = field(default_factory=dict)


def _load_rules(cfg: RunConfig) -> list[RewriteRule]:
    if cfg.rules is None:
        return list(default_rules())
    return parse_rules(Path(cfg.rules).read_text())


def _load_costs(cfg: RunConfig) -> CostModel:
    if cfg.costs is None:
        return CostModel()
    return load_cost_table(Path(cfg.costs).read_text())


def format_stats(stats: dict[str, object]) -> str:
    return "".join(f"{k} = {stats[k]}\n" for k in sorted(stats))


def run_optimize(cfg: RunConfig) -> OptimizeOutcome:
    """The end-to-end pipeline: parse, explore, extract, reconstruct."""
    cfg.validate()
    g = make_single_rooted(parse_graph(Path(cfg.graph).read_text()))
    rules = _load_rules(cfg)
    model = _load_costs(cfg)
    limits = ExploreLimits(
        n_max=cfg.n_max, k_max=cfg.k_max, k_multi=cfg.k_multi,
        time_limit_s=cfg.explore_time_limit_s,
    )

    t0 = time.perf_counter()
    eg, filt, report = explore(
        g, rules, limits, cfg.filter_mode, allow_self_pairs=cfg.allow_self_pairs
    )
    explore_s = time.perf_counter() - t0

    costs = egraph_costs(eg, model)
    stats: dict[str, object] = {
        "graph.nodes_in": len(g.semantic_nodes()),
        "cost.before": graph_cost(g, model),
        "time.explore_s": round(explore_s, 6),
    }
    stats.update(report.to_stats())

    t1 = time.perf_counter()
    result: Optional[ExtractionResult] = None
    if cfg.extractor == "greedy":
        result = greedy_extract(eg, costs, filt)
    else:
        ilp = build_ilp(eg, costs, filt, with_cycle=cfg.ilp_cycle, topo=cfg.topo)
        stats["ilp.vars"] = ilp.num_vars
        stats["ilp.rows"] = len(ilp.rows)
        stats["ilp.classes"] = ilp.num_classes
        if cfg.emit_lp:
            Path(cfg.emit_lp).write_text(export_lp(ilp))
        if cfg.solution is not None:
            result = parse_solution(ilp, eg, Path(cfg.solution).read_text())
        elif cfg.emit_lp and cfg.out is None:
            result = None  # export-only run
        else:
            result = solve_ilp(ilp, eg, cfg.time_limit_s)
            stats["ilp.nodes_explored"] = result.stats.nodes_explored
            stats["ilp.lp_solves"] = result.stats.lp_solves
            stats["ilp.optimal"] = int(result.stats.optimal)
    extract_s = time.perf_counter() - t1
    stats["time.extract_s"] = round(extract_s, 6)

    out_graph = g
    if result is not None:
        out_graph = reconstruct(eg, result.selection)
        stats["cost.after"] = result.total_cost
        stats["graph.nodes_out"] = len(out_graph.semantic_nodes())
        stats["cost.delta"] = stats["cost.before"] - result.total_cost
    return OptimizeOutcome(out_graph, result, stats)


# ------------------------------------------------------------- subcommands


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    outcome = run_optimize(cfg)
    if cfg.out:
        Path(cfg.out).write_text(emit_graph(outcome.graph))
    if cfg.stats_out:
        Path(cfg.stats_out).write_text(format_stats(outcome.stats))
    before = outcome.stats.get("cost.before")
    after = outcome.stats.get("cost.after")
    if after is not None:
        print(f"cost: {before:.6f} -> {after:.6f} ms")
    else:
        print(f"cost: {before:.6f} ms (no extraction run)")
    return 0


def cmd_genbench(args: argparse.Namespace) -> int:
    rng = None
    if args.random:
        seed = int(os.environ.get("TENSORSAT_SEED", "0"))
        rng = random.Random(seed)
    try:
        g = bench.generate(args.name, args.size, rng)
    except ValueError as e:
        raise TensorSatError(str(e)) from None
    text = emit_graph(g)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_emit_lp(args: argparse.Namespace) -> int:
    cfg = _config_from_args(args)
    cfg.extractor = "ilp"
    cfg.emit_lp = args.out
    cfg.out = None
    cfg.solution = None
    run_optimize(cfg)
    print(f"wrote {args.out}")
    return 0


def _parse_sweep(text: str) -> tuple[str, list[str]]:
    if "=" not in text:
        raise TensorSatError("sweep must look like k-multi=1,2,3")
    key, _, vals = text.partition("=")
    key = key.strip()
    if key not in ("k-multi", "extractor", "filter"):
        raise TensorSatError(f"unknown sweep dimension {key!r}")
    return key, [v.strip() for v in vals.split(",") if v.strip()]


def cmd_ablate(args: argparse.Namespace) -> int:
    base = _config_from_args(args)
    key, values = _parse_sweep(args.sweep)
    rows = []
    for v in values:
        cfg = replace(base, out=None, stats_out=None, emit_lp=None, solution=None)
        if key == "k-multi":
            cfg.k_multi = int(v)
            cfg.k_max = max(cfg.k_max, cfg.k_multi)
        elif key == "extractor":
            cfg.extractor = v
        else:
            cfg.filter_mode = v
        label = f"{key}={v}"
        try:
            outcome = run_optimize(cfg)
            s = outcome.stats
            rows.append(
                (
                    label,
                    f"{s['cost.before']:.6f}",
                    f"{s['cost.after']:.6f}",
                    f"{s['time.explore_s']:.3f}",
                    f"{s['time.extract_s']:.3f}",
                    str(s["explore.enodes_per_iter"]).split(",")[-1] or "0",
                    "ok",
                )
            )
        except TensorSatError as e:
            rows.append((label, "-", "-", "-", "-", "-", f"error: {e}"))
    header = ("setting", "cost_before", "cost_after", "explore_s", "extract_s", "enodes", "status")
    table = _render_table([header, *rows])
    if args.report_out:
        Path(args.report_out).write_text(table)
    else:
        sys.stdout.write(table)
    return 0


def _render_table(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ parser


def _add_pipeline_flags(p: argparse.ArgumentParser, need_out: bool = False) -> None:
    p.add_argument("--graph", required=True, help="input graph file")
    p.add_argument("--rules", help="rule file (default: shipped ruleset)")
    p.add_argument("--costs", help="cost table file (default: synthetic model)")
    p.add_argument("--k-multi", type=int, default=1, help="multi-pattern iteration budget")
    p.add_argument("--k-max", type=int, default=15, help="max exploration iterations")
    p.add_argument("--n-max", type=int, default=50000, help="max e-nodes in the e-graph")
    p.add_argument("--explore-time-limit", type=float, default=None, metavar="S")
    p.add_argument("--time-limit", type=float, default=60.0, metavar="S",
                   help="ILP solver budget in seconds")
    p.add_argument("--extract", choices=("greedy", "ilp"), default="ilp")
    p.add_argument("--ilp-cycle-constraints", choices=("on", "off"), default="off")
    p.add_argument("--topo", choices=("real", "int"), default="real",
                   help="topological-order variable kind for cycle constraints")
    p.add_argument("--filter", choices=("none", "vanilla", "efficient"), default="efficient")
    p.add_argument("--allow-self-pairs", action="store_true",
                   help="let a multi-pattern match combine with itself")
    if need_out:
        p.add_argument("--out", required=True, help="output path")
    else:
        p.add_argument("--out", help="optimized graph output path")
        p.add_argument("--stats-out", help="write flat key=value stats here")
        p.add_argument("--emit-lp", metavar="PATH", help="export the ILP model")
        p.add_argument("--solution", metavar="PATH",
                       help="import an external solver solution instead of solving")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        graph=args.graph,
        rules=args.rules,
        costs=args.costs,
        n_max=args.n_max,
        k_max=args.k_max,
        k_multi=args.k_multi,
        explore_time_limit_s=args.explore_time_limit,
        time_limit_s=args.time_limit,
        extractor=args.extract,
        ilp_cycle=args.ilp_cycle_constraints == "on",
        topo=args.topo,
        filter_mode=args.filter,
        allow_self_pairs=args.allow_self_pairs,
        out=getattr(args, "out", None),
        stats_out=getattr(args, "stats_out", None),
        emit_lp=getattr(args, "emit_lp", None),
        solution=getattr(args, "solution", None),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensorsat",
        description="Tensor-graph superoptimizer: equality saturation with "
        "greedy or ILP extraction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="optimize a graph end to end")
    _add_pipeline_flags(p_opt)
    p_opt.set_defaults(fn=cmd_optimize)

    p_gen = sub.add_parser("genbench", help="generate a benchmark graph")
    p_gen.add_argument("name", choices=bench.BENCH_NAMES)
    p_gen.add_argument("size", type=int)
    p_gen.add_argument("--out", help="output path (default: stdout)")
    p_gen.add_argument("--random", action="store_true",
                       help="randomize dimensions (seed: TENSORSAT_SEED)")
    p_gen.set_defaults(fn=cmd_genbench)

    p_lp = sub.add_parser("emit-lp", help="explore and export the ILP model")
    _add_pipeline_flags(p_lp, need_out=True)
    p_lp.set_defaults(fn=cmd_emit_lp)

    p_abl = sub.add_parser("ablate", help="sweep one setting and tabulate")
    _add_pipeline_flags(p_abl)
    p_abl.add_argument("--sweep", required=True,
                       help="k-multi=1,2,3 | extractor=greedy,ilp | filter=vanilla,efficient")
    p_abl.add_argument("--report-out", help="table output path (default: stdout)")
    p_abl.set_defaults(fn=cmd_ablate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except TensorSatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
