"""Per-operator cost model: deterministic synthetic costs plus a
loadable measured-cost table.

Costs are milliseconds (reals >= 0) and sum over nodes; noop, input and
weight nodes are free.  The synthetic model charges a per-call overhead
plus FLOP-proportional work; data movement (concat/split/transpose/...)
runs at ``KAPPA`` times the elementwise rate, which keeps plumbing cheap
relative to compute so that merging operators with shared operands can
pay off.

Table keys are canonicalized operator signatures::

    conv[activation=0,padding=0,stride_h=1,stride_w=1](1x8x9x9,16x8x3x3) = 0.31

with parameters sorted by name and input shapes in argument order
(tensor-tuple inputs render as ``AxB|CxD``).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Sequence, Union

from .egraph import EGraph
from .errors import GraphParseError, ShapeMismatch, UnknownSignature
from .tensor_lang import (
    SIGNATURES,
    Shape,
    TensorGraph,
    ValueKind,
    conv_out_hw,
)

ShapeArg = Union[Shape, tuple[Shape, Shape]]  # T, or TT as a pair

# synthetic model constants (documented, frozen)
RATE_EW = 1e-7  # ms per element, elementwise/activation work
RATE_MM = 1e-6  # ms per multiply-accumulate
KAPPA = 0.05  # movement rate relative to RATE_EW
RATE_MOVE = KAPPA * RATE_EW
FUSED_ACT_FACTOR = 0.2  # extra elementwise work for a fused activation

BASE_COST = {
    "matmul": 0.05,
    "conv": 0.05,
    "poolmax": 0.02,
    "poolavg": 0.02,
    "ewadd": 0.01,
    "ewmul": 0.01,
    "relu": 0.01,
    "tanh": 0.01,
    "sigmoid": 0.01,
    "transpose": 0.005,
    "enlarge": 0.005,
    "merge": 0.005,
    "reshape": 0.005,
    "split": 0.005,
    "split_0": 0.005,
    "split_1": 0.005,
    "input": 0.0,
    "weight": 0.0,
    "noop": 0.0,
}
for _n in range(2, 7):
    BASE_COST[f"concat_{_n}"] = 0.005


def _numel(shape: Shape) -> int:
    return math.prod(shape)


def _is_pair(shape: ShapeArg) -> bool:
    return bool(shape) and isinstance(shape[0], tuple)


def synthetic_node_cost(op: str, scalars: Sequence[int | str], input_shapes: Sequence[ShapeArg]) -> float:
    base = BASE_COST.get(op)
    if base is None:
        raise ShapeMismatch(f"unknown operator {op!r}")
    if op in ("input", "weight", "noop"):
        return 0.0
    work = 0.0
    if op == "matmul":
        (act,) = scalars
        a, b = input_shapes
        macs = _numel(a) * b[-1]  # batch * m * k * n
        work = RATE_MM * macs
        if act != 0:
            work += FUSED_ACT_FACTOR * RATE_EW * (_numel(a) // a[-1]) * b[-1]
    elif op == "conv":
        sh, sw, pad, act = scalars
        x, w = input_shapes
        n, _, h, wd = x
        cout, cin_pg, kh, kw = w
        oh, ow = conv_out_hw(h, wd, kh, kw, sh, sw, pad)
        out_elems = n * cout * oh * ow
        work = RATE_MM * out_elems * cin_pg * kh * kw
        if act != 0:
            work += FUSED_ACT_FACTOR * RATE_EW * out_elems
    elif op in ("ewadd", "ewmul", "relu", "tanh", "sigmoid"):
        work = RATE_EW * _numel(input_shapes[0])
    elif op in ("poolmax", "poolavg"):
        kh, kw, sh, sw, pad, act = scalars
        x = input_shapes[0]
        oh, ow = conv_out_hw(x[2], x[3], kh, kw, sh, sw, pad)
        work = RATE_EW * x[0] * x[1] * oh * ow * kh * kw
        if act != 0:
            work += FUSED_ACT_FACTOR * RATE_EW * x[0] * x[1] * oh * ow
    elif op.startswith("concat_"):
        work = RATE_MOVE * sum(_numel(s) for s in input_shapes)
    elif op == "split":
        work = RATE_MOVE * _numel(input_shapes[0])
    elif op in ("split_0", "split_1"):
        pair = input_shapes[0]
        work = RATE_MOVE * _numel(pair[0 if op == "split_0" else 1])
    elif op == "enlarge":
        x, ref = input_shapes
        work = RATE_MOVE * _numel(x[:2] + ref[2:])
    elif op == "merge":
        (count,) = scalars
        work = RATE_MOVE * _numel(input_shapes[0]) * count
    elif op in ("transpose", "reshape"):
        work = RATE_MOVE * _numel(input_shapes[0])
    return base + work


def _render_shape(shape: ShapeArg) -> str:
    if _is_pair(shape):
        return "|".join("x".join(map(str, s)) for s in shape)
    return "x".join(map(str, shape))


def signature_key(op: str, scalars: Sequence[int | str], input_shapes: Sequence[ShapeArg]) -> str:
    sig = SIGNATURES[op]
    params = sorted(zip(sig.param_names, scalars))
    inside = ",".join(f"{k}={v}" for k, v in params)
    shapes = ",".join(_render_shape(s) for s in input_shapes)
    return f"{op}[{inside}]({shapes})" if params else f"{op}({shapes})"


_KEY_RE = re.compile(r"(\w+)(?:\[([^\]]*)\])?\(([^)]*)\)\Z")


def normalize_signature(key: str) -> str:
    """Sort the parameter list so permuted orderings collide."""
    m = _KEY_RE.match(key.strip())
    if m is None:
        raise GraphParseError(f"bad signature {key!r}")
    op, params, shapes = m.groups()
    if not params:
        return f"{op}({shapes})"
    items = sorted(p.strip() for p in params.split(","))
    return f"{op}[{','.join(items)}]({shapes})"


@dataclass
class CostModel:
    mode: str = "synthetic"  # "synthetic" | "table"
    table: dict[str, float] = field(default_factory=dict)
    strict: bool = False  # table mode: error on miss instead of synthetic fallback

    def node_cost(self, op: str, scalars: Sequence[int | str], input_shapes: Sequence[ShapeArg]) -> float:
        if op in ("input", "weight", "noop"):
            return 0.0
        if self.mode == "table":
            key = signature_key(op, scalars, input_shapes)
            hit = self.table.get(key)
            if hit is not None:
                return hit
            if self.strict:
                raise UnknownSignature(f"no cost for {key}")
        return synthetic_node_cost(op, scalars, input_shapes)


def load_cost_table(text: str, strict: bool = False) -> CostModel:
    table: dict[str, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line or line.rindex("=") <= line.index("("):
            raise GraphParseError(f"expected 'signature = cost_ms' in {line!r}", line=lineno)
        key, _, value = line.rpartition("=")
        key = normalize_signature(key.strip())
        try:
            cost = float(value)
        except ValueError:
            raise GraphParseError(f"bad cost {value.strip()!r}", line=lineno) from None
        if cost < 0:
            raise GraphParseError(f"negative cost {cost}", line=lineno)
        if key in table:
            raise GraphParseError(f"duplicate signature {key}", line=lineno)
        table[key] = cost
    return CostModel(mode="table", table=table, strict=strict)


def emit_cost_table(model: CostModel) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in sorted(model.table.items()))


# ------------------------------------------------------------ applications


def node_cost_args(g: TensorGraph, name: str) -> tuple[str, list, list]:
    node = g.nodes[name]
    sig = SIGNATURES[node.op]
    scalars = [node.params[p] for p in sig.param_names]
    shapes: list[ShapeArg] = []
    for ref in node.inputs:
        v = g.values[ref]
        shapes.append(v.shape if v.kind == ValueKind.T else v.pair)
    return node.op, scalars, shapes


def graph_cost(g: TensorGraph, model: CostModel) -> float:
    total = 0.0
    for name in g.nodes:
        op, scalars, shapes = node_cost_args(g, name)
        total += model.node_cost(op, scalars, shapes)
    return total


def egraph_costs(eg: EGraph, model: CostModel) -> dict[int, float]:
    """Per-e-node cost vector c_i, shared by greedy and ILP extraction.

    Literal leaves (N/S atoms) cost zero."""
    costs: dict[int, float] = {}
    for node in eg.iter_nodes():
        if not node.children:
            costs[node.id] = 0.0
            continue
        scalars: list[int | str] = []
        shapes: list[ShapeArg] = []
        for child in node.children:
            v = eg.eclass(child).analysis
            if v.kind == ValueKind.N:
                scalars.append(v.ival)
            elif v.kind == ValueKind.S:
                scalars.append(v.sval)
            elif v.kind == ValueKind.T:
                shapes.append(v.shape)
            else:
                shapes.append(v.pair)
        costs[node.id] = model.node_cost(node.op, scalars, shapes)
    return costs
