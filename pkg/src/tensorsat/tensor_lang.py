"""Tensor operator language: node kinds, typed parameters, shape
inference, graph construction/parsing, and single-rooting via noop.

Value kinds follow the operator table: tensors (T), strings (S),
integers (N) and tensor tuples (TT).  Integer parameters encode modes:
padding {0=SAME, 1=VALID}, activation {0=NONE, 1=RELU, 2=SIGMOID,
3=TANH}.  Variable-length parameters use underscore-joined strings
("dim1_dim2_...", "axis1_axis2_...", "name@dim1_dim2_...").

Shape inference also tracks *split origins*: a concat along an axis
records its own interior cut positions plus each segment's nested cut
tree, geometry-preserving operators propagate them where well defined
(matmul carries its operands' row/column origins, conv maps the
weight's output-channel origin to the output's channel axis), and
``split`` consumes the most recent concat's first cut, handing each
half its segment's subtree (so nested merges stay splittable at any
depth).  Splitting an axis that has no recorded origin is a hard error
rather than a guess.

Only shape-level semantics are implemented; there is no numeric tensor
execution.  ``noop`` exists purely to make graphs single-rooted and
gets the dummy shape (1,).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .egraph import EGraph
from .errors import (
    AnalysisMergeError,
    GraphParseError,
    MissingSplitOrigin,
    ShapeMismatch,
)
from .sexpr import App, Atom, Term

MAX_RANK = 4
MAX_CONCAT_INPUTS = 6

PAD_SAME, PAD_VALID = 0, 1
ACT_NONE, ACT_RELU, ACT_SIGMOID, ACT_TANH = 0, 1, 2, 3

Shape = tuple[int, ...]
# A cut tree describes how an axis extent was assembled by (nested)
# concats: the most recent concat's cumulative interior positions plus
# one subtree (or None) per segment.  Origins map axes to cut trees.
CutTree = tuple[Shape, tuple]  # (positions, per-segment subtrees)
Origins = frozenset  # of (axis, CutTree)
_NO_ORIGINS: Origins = frozenset()


def cut_tree(positions: Iterable[int], children: Iterable[Optional[CutTree]] = ()) -> CutTree:
    positions = tuple(positions)
    children = tuple(children) or (None,) * (len(positions) + 1)
    if len(children) != len(positions) + 1:
        raise ValueError("cut tree needs one subtree per segment")
    return (positions, children)


class ValueKind(str, Enum):
    N = "N"
    S = "S"
    T = "T"
    TT = "TT"


@dataclass(frozen=True)
class Value:
    """Analysis payload of one e-class / graph node."""

    kind: ValueKind
    ival: Optional[int] = None
    sval: Optional[str] = None
    shape: Optional[Shape] = None
    pair: Optional[tuple[Shape, Shape]] = None
    origins: Origins = _NO_ORIGINS
    pair_origins: tuple[Origins, Origins] = (_NO_ORIGINS, _NO_ORIGINS)

    @staticmethod
    def of_int(i: int) -> "Value":
        return Value(ValueKind.N, ival=i)

    @staticmethod
    def of_str(s: str) -> "Value":
        return Value(ValueKind.S, sval=s)

    @staticmethod
    def of_tensor(shape: Shape, origins: Origins = _NO_ORIGINS) -> "Value":
        return Value(ValueKind.T, shape=tuple(shape), origins=origins)

    @staticmethod
    def of_pair(a: Shape, b: Shape, oa: Origins = _NO_ORIGINS, ob: Origins = _NO_ORIGINS) -> "Value":
        return Value(ValueKind.TT, pair=(tuple(a), tuple(b)), pair_origins=(oa, ob))

    def same_data(self, other: "Value") -> bool:
        """Equality ignoring split-origin annotations."""
        return (
            self.kind == other.kind
            and self.ival == other.ival
            and self.sval == other.sval
            and self.shape == other.shape
            and self.pair == other.pair
        )

    def __str__(self) -> str:
        if self.kind == ValueKind.N:
            return f"N:{self.ival}"
        if self.kind == ValueKind.S:
            return f"S:{self.sval}"
        if self.kind == ValueKind.T:
            return "T:" + "x".join(map(str, self.shape))
        a, b = self.pair
        return "TT:" + "x".join(map(str, a)) + "|" + "x".join(map(str, b))


def merge_values(a: Value, b: Value) -> Value:
    """Analysis join: shapes must agree exactly; origin info is unioned."""
    if not a.same_data(b):
        raise AnalysisMergeError(f"incompatible analyses {a} vs {b}")
    if a.kind == ValueKind.T:
        return Value(ValueKind.T, shape=a.shape, origins=a.origins | b.origins)
    if a.kind == ValueKind.TT:
        return Value(
            ValueKind.TT,
            pair=a.pair,
            pair_origins=(
                a.pair_origins[0] | b.pair_origins[0],
                a.pair_origins[1] | b.pair_origins[1],
            ),
        )
    return a


# ------------------------------------------------------------ signatures


@dataclass(frozen=True)
class OpSig:
    name: str
    args: tuple[tuple[str, ValueKind], ...]
    out: ValueKind

    @property
    def arity(self) -> int:
        return len(self.args)

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(n for n, k in self.args if k in (ValueKind.N, ValueKind.S))

    @property
    def tensor_arg_names(self) -> tuple[str, ...]:
        return tuple(n for n, k in self.args if k in (ValueKind.T, ValueKind.TT))


def _sig(name, args, out=ValueKind.T):
    return OpSig(name, tuple((n, k) for n, k in args), out)


N, S, T, TT = ValueKind.N, ValueKind.S, ValueKind.T, ValueKind.TT

SIGNATURES: dict[str, OpSig] = {
    s.name: s
    for s in [
        _sig("ewadd", [("input1", T), ("input2", T)]),
        _sig("ewmul", [("input1", T), ("input2", T)]),
        _sig("matmul", [("activation", N), ("input1", T), ("input2", T)]),
        _sig(
            "conv",
            [
                ("stride_h", N),
                ("stride_w", N),
                ("padding", N),
                ("activation", N),
                ("input", T),
                ("weight", T),
            ],
        ),
        _sig("relu", [("input", T)]),
        _sig("tanh", [("input", T)]),
        _sig("sigmoid", [("input", T)]),
        _sig(
            "poolmax",
            [
                ("input", T),
                ("kernel_h", N),
                ("kernel_w", N),
                ("stride_h", N),
                ("stride_w", N),
                ("padding", N),
                ("activation", N),
            ],
        ),
        _sig(
            "poolavg",
            [
                ("input", T),
                ("kernel_h", N),
                ("kernel_w", N),
                ("stride_h", N),
                ("stride_w", N),
                ("padding", N),
                ("activation", N),
            ],
        ),
        _sig("transpose", [("input", T), ("perm", S)]),
        _sig("enlarge", [("input", T), ("ref", T)]),
        _sig("split", [("axis", N), ("input", T)], out=TT),
        _sig("split_0", [("input", TT)]),
        _sig("split_1", [("input", TT)]),
        _sig("merge", [("weight", T), ("count", N)]),
        _sig("reshape", [("input", T), ("shape", S)]),
        _sig("input", [("identifier", S)]),
        _sig("weight", [("identifier", S)]),
        _sig("noop", [("input1", T), ("input2", T)]),
    ]
}
for _n in range(2, MAX_CONCAT_INPUTS + 1):
    SIGNATURES[f"concat_{_n}"] = _sig(
        f"concat_{_n}", [("axis", N)] + [(f"input{_i}", T) for _i in range(1, _n + 1)]
    )


def is_op(op: Atom) -> bool:
    return isinstance(op, str) and op in SIGNATURES


# --------------------------------------------------------- shape helpers


def dims_to_str(dims: Iterable[int]) -> str:
    return "_".join(str(d) for d in dims)


def parse_dims(s: str) -> Shape:
    try:
        dims = tuple(int(p) for p in s.split("_"))
    except ValueError:
        raise ShapeMismatch(f"bad dimension string {s!r}")
    return dims


def make_identifier(name: str, shape: Shape) -> str:
    return f"{name}@{dims_to_str(shape)}"


def parse_identifier(ident: str) -> tuple[str, Shape]:
    if "@" not in ident:
        raise ShapeMismatch(f"identifier {ident!r} missing '@shape' suffix")
    name, _, dims = ident.rpartition("@")
    if not name:
        raise ShapeMismatch(f"identifier {ident!r} has empty name")
    return name, parse_dims(dims)


def _check_shape(shape: Shape, what: str) -> Shape:
    if not (1 <= len(shape) <= MAX_RANK):
        raise ShapeMismatch(f"{what}: rank {len(shape)} outside 1..{MAX_RANK}")
    if any(d < 1 for d in shape):
        raise ShapeMismatch(f"{what}: non-positive extent in {shape}")
    return shape


def conv_out_hw(h: int, w: int, kh: int, kw: int, sh: int, sw: int, padding: int) -> tuple[int, int]:
    if sh < 1 or sw < 1:
        raise ShapeMismatch(f"stride ({sh},{sw}) must be >= 1")
    if padding == PAD_SAME:
        return math.ceil(h / sh), math.ceil(w / sw)
    if padding == PAD_VALID:
        if h < kh or w < kw:
            raise ShapeMismatch(f"VALID: kernel ({kh},{kw}) larger than input ({h},{w})")
        return (h - kh) // sh + 1, (w - kw) // sw + 1
    raise ShapeMismatch(f"unknown padding mode {padding}")


def _origin_on(origins: Origins, axis: int) -> list[CutTree]:
    return sorted((tree for ax, tree in origins if ax == axis), key=repr)


def _keep_axes(origins: Origins, axes: Iterable[int]) -> Origins:
    keep = set(axes)
    return frozenset(e for e in origins if e[0] in keep)


# --------------------------------------------------------- shape inference


def infer_shape(op: str, values: Sequence[Value]) -> Value:
    """Output value of an operator from its argument values.

    Raises ShapeMismatch / MissingSplitOrigin on precondition failures."""
    sig = SIGNATURES.get(op)
    if sig is None:
        raise ShapeMismatch(f"unknown operator {op!r}")
    if len(values) != sig.arity:
        raise ShapeMismatch(f"{op}: expected {sig.arity} args, got {len(values)}")
    for (arg_name, kind), v in zip(sig.args, values):
        if v.kind != kind:
            raise ShapeMismatch(f"{op}: argument {arg_name} must be {kind.value}, got {v.kind.value}")
    return _INFER[op](op, values)


def _int_arg(op: str, name: str, v: Value, lo: int, hi: Optional[int] = None) -> int:
    i = v.ival
    if i < lo or (hi is not None and i > hi):
        raise ShapeMismatch(f"{op}: {name}={i} out of range")
    return i


def _infer_elementwise(op, values):
    a, b = values
    if a.shape != b.shape:
        raise ShapeMismatch(f"{op}: shapes {a.shape} vs {b.shape} differ")
    return Value.of_tensor(a.shape, a.origins | b.origins)


def _infer_matmul(op, values):
    act, a, b = values
    _int_arg(op, "activation", act, ACT_NONE, ACT_TANH)
    sa, sb = a.shape, b.shape
    if len(sa) < 2 or len(sb) < 2 or len(sa) != len(sb):
        raise ShapeMismatch(f"{op}: ranks {len(sa)} vs {len(sb)} unsupported")
    if sa[:-2] != sb[:-2]:
        raise ShapeMismatch(f"{op}: batch dims {sa[:-2]} vs {sb[:-2]} differ")
    if sa[-1] != sb[-2]:
        raise ShapeMismatch(f"{op}: inner dims {sa[-1]} vs {sb[-2]} differ")
    out = sa[:-1] + (sb[-1],)
    r = len(out)
    origins = _keep_axes(a.origins, [r - 2]) | frozenset(
        (r - 1, pos) for ax, pos in b.origins if ax == len(sb) - 1
    )
    return Value.of_tensor(out, origins)


def _infer_conv(op, values):
    sh_v, sw_v, pad_v, act_v, x, w = values
    sh = _int_arg(op, "stride_h", sh_v, 1)
    sw = _int_arg(op, "stride_w", sw_v, 1)
    pad = _int_arg(op, "padding", pad_v, PAD_SAME, PAD_VALID)
    _int_arg(op, "activation", act_v, ACT_NONE, ACT_TANH)
    if len(x.shape) != 4 or len(w.shape) != 4:
        raise ShapeMismatch(f"{op}: input/weight must be rank 4, got {x.shape}/{w.shape}")
    n, c, h, wth = x.shape
    cout, cin_pg, kh, kw = w.shape
    if c % cin_pg != 0:
        raise ShapeMismatch(f"{op}: channels {c} not divisible by per-group channels {cin_pg}")
    groups = c // cin_pg
    if cout % groups != 0:
        raise ShapeMismatch(f"{op}: output channels {cout} not divisible by groups {groups}")
    oh, ow = conv_out_hw(h, wth, kh, kw, sh, sw, pad)
    # weight axis 0 (output channels) becomes output axis 1
    origins = frozenset((1, pos) for ax, pos in w.origins if ax == 0)
    return Value.of_tensor((n, cout, oh, ow), origins)


def _infer_activation(op, values):
    (x,) = values
    return Value.of_tensor(x.shape, x.origins)


def _infer_pool(op, values):
    x, kh_v, kw_v, sh_v, sw_v, pad_v, act_v = values
    kh = _int_arg(op, "kernel_h", kh_v, 1)
    kw = _int_arg(op, "kernel_w", kw_v, 1)
    sh = _int_arg(op, "stride_h", sh_v, 1)
    sw = _int_arg(op, "stride_w", sw_v, 1)
    pad = _int_arg(op, "padding", pad_v, PAD_SAME, PAD_VALID)
    _int_arg(op, "activation", act_v, ACT_NONE, ACT_TANH)
    if len(x.shape) != 4:
        raise ShapeMismatch(f"{op}: input must be rank 4, got {x.shape}")
    n, c, h, w = x.shape
    oh, ow = conv_out_hw(h, w, kh, kw, sh, sw, pad)
    return Value.of_tensor((n, c, oh, ow), _keep_axes(x.origins, [0, 1]))


def _infer_transpose(op, values):
    x, perm_v = values
    perm = parse_dims(perm_v.sval)
    rank = len(x.shape)
    if sorted(perm) != list(range(rank)):
        raise ShapeMismatch(f"{op}: {perm} is not a permutation of 0..{rank - 1}")
    out = tuple(x.shape[p] for p in perm)
    inv = {p: i for i, p in enumerate(perm)}
    origins = frozenset((inv[ax], pos) for ax, pos in x.origins)
    return Value.of_tensor(out, origins)


def _infer_enlarge(op, values):
    x, ref = values
    if len(x.shape) != 4 or len(ref.shape) != 4:
        raise ShapeMismatch(f"{op}: kernels must be rank 4")
    if x.shape[2] > ref.shape[2] or x.shape[3] > ref.shape[3]:
        raise ShapeMismatch(f"{op}: kernel {x.shape} larger than reference {ref.shape}")
    out = x.shape[:2] + ref.shape[2:]
    return Value.of_tensor(out, _keep_axes(x.origins, [0, 1]))


def _infer_concat(op, values):
    axis_v, inputs = values[0], values[1:]
    rank = len(inputs[0].shape)
    axis = _int_arg(op, "axis", axis_v, 0, rank - 1)
    for v in inputs[1:]:
        if len(v.shape) != rank:
            raise ShapeMismatch(f"{op}: rank mismatch {inputs[0].shape} vs {v.shape}")
        for ax in range(rank):
            if ax != axis and v.shape[ax] != inputs[0].shape[ax]:
                raise ShapeMismatch(
                    f"{op}: extent mismatch on axis {ax}: {inputs[0].shape} vs {v.shape}"
                )
    total = sum(v.shape[axis] for v in inputs)
    out = inputs[0].shape[:axis] + (total,) + inputs[0].shape[axis + 1 :]
    cuts = []
    acc = 0
    for v in inputs[:-1]:
        acc += v.shape[axis]
        cuts.append(acc)
    # segment subtrees keep nested merges splittable; an ambiguous segment
    # origin (possible only after class merges) degrades to None
    children = []
    for v in inputs:
        nested = _origin_on(v.origins, axis)
        children.append(nested[0] if len(nested) == 1 else None)
    tree = cut_tree(cuts, children)
    return Value.of_tensor(_check_shape(out, op), frozenset([(axis, tree)]))


def _infer_split(op, values):
    axis_v, x = values
    rank = len(x.shape)
    axis = _int_arg(op, "axis", axis_v, 0, rank - 1)
    recorded = _origin_on(x.origins, axis)
    if not recorded:
        raise MissingSplitOrigin(f"{op}: no concat recorded on axis {axis} of {x.shape}")
    if len(recorded) > 1:
        raise ShapeMismatch(f"{op}: ambiguous split origins on axis {axis}")
    positions, children = recorded[0]
    cut = positions[0]
    total = x.shape[axis]
    if not (0 < cut < total):
        raise ShapeMismatch(f"{op}: cut {cut} outside axis extent {total}")
    left = x.shape[:axis] + (cut,) + x.shape[axis + 1 :]
    right = x.shape[:axis] + (total - cut,) + x.shape[axis + 1 :]
    other = frozenset(e for e in x.origins if e[0] != axis)
    rest = tuple(p - cut for p in positions[1:])
    if rest:
        right_tree = cut_tree(rest, children[1:])
    else:
        right_tree = children[1]
    left_tree = children[0]
    left_origins = other | (frozenset([(axis, left_tree)]) if left_tree else frozenset())
    right_origins = other | (frozenset([(axis, right_tree)]) if right_tree else frozenset())
    return Value.of_pair(left, right, left_origins, right_origins)


def _infer_split_proj(op, values):
    (p,) = values
    idx = 0 if op == "split_0" else 1
    return Value.of_tensor(p.pair[idx], p.pair_origins[idx])


def _infer_merge(op, values):
    w, count_v = values
    count = _int_arg(op, "count", count_v, 1)
    if len(w.shape) != 4:
        raise ShapeMismatch(f"{op}: weight must be rank 4, got {w.shape}")
    cout, cin_pg, kh, kw = w.shape
    return Value.of_tensor((cout, cin_pg * count, kh, kw))


def _infer_reshape(op, values):
    x, shape_v = values
    out = _check_shape(parse_dims(shape_v.sval), op)
    if math.prod(out) != math.prod(x.shape):
        raise ShapeMismatch(f"{op}: cannot reshape {x.shape} to {out}")
    return Value.of_tensor(out)


def _infer_io(op, values):
    (ident,) = values
    _, shape = parse_identifier(ident.sval)
    return Value.of_tensor(_check_shape(shape, op))


def _infer_noop(op, values):
    return Value.of_tensor((1,))


_INFER = {
    "ewadd": _infer_elementwise,
    "ewmul": _infer_elementwise,
    "matmul": _infer_matmul,
    "conv": _infer_conv,
    "relu": _infer_activation,
    "tanh": _infer_activation,
    "sigmoid": _infer_activation,
    "poolmax": _infer_pool,
    "poolavg": _infer_pool,
    "transpose": _infer_transpose,
    "enlarge": _infer_enlarge,
    "split": _infer_split,
    "split_0": _infer_split_proj,
    "split_1": _infer_split_proj,
    "merge": _infer_merge,
    "reshape": _infer_reshape,
    "input": _infer_io,
    "weight": _infer_io,
    "noop": _infer_noop,
}
for _n in range(2, MAX_CONCAT_INPUTS + 1):
    _INFER[f"concat_{_n}"] = _infer_concat


# ------------------------------------------------------------- tensor graph

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_SVAL = re.compile(r"[A-Za-z0-9_@.\-]+\Z")


@dataclass
class GraphNode:
    name: str
    op: str
    inputs: tuple[str, ...]
    params: dict[str, int | str] = field(default_factory=dict)


class TensorGraph:
    """DAG of operator nodes with validated shapes.

    Nodes are added in topological order (inputs must already exist),
    so the insertion order is a valid evaluation order."""

    def __init__(self) -> None:
        self.nodes: dict[str, GraphNode] = {}
        self.outputs: list[str] = []
        self.root: Optional[str] = None
        self.values: dict[str, Value] = {}

    def add(self, name: str, op: str, inputs: Sequence[str] = (), **params) -> str:
        if not _NAME.match(name):
            raise ShapeMismatch(f"bad node name {name!r}")
        if name in self.nodes:
            raise ShapeMismatch(f"duplicate node {name!r}")
        sig = SIGNATURES.get(op)
        if sig is None:
            raise ShapeMismatch(f"node {name}: unknown operator {op!r}")
        node = GraphNode(name, op, tuple(inputs), dict(params))
        try:
            self.values[name] = infer_shape(op, self._arg_values(node))
        except ShapeMismatch as e:
            raise type(e)(f"node {name}: {e}") from None
        self.nodes[name] = node
        return name

    def _arg_values(self, node: GraphNode) -> list[Value]:
        sig = SIGNATURES[node.op]
        missing = [p for p in sig.param_names if p not in node.params]
        extra = [p for p in node.params if p not in sig.param_names]
        if missing or extra:
            raise ShapeMismatch(
                f"{node.op} params: missing {missing or '-'}, unexpected {extra or '-'}"
            )
        if len(node.inputs) != len(sig.tensor_arg_names):
            raise ShapeMismatch(
                f"{node.op}: expected {len(sig.tensor_arg_names)} inputs, got {len(node.inputs)}"
            )
        out: list[Value] = []
        tensor_iter = iter(node.inputs)
        for arg_name, kind in sig.args:
            if kind == ValueKind.N:
                v = node.params[arg_name]
                if not isinstance(v, int):
                    raise ShapeMismatch(f"{node.op}: param {arg_name} must be int, got {v!r}")
                out.append(Value.of_int(v))
            elif kind == ValueKind.S:
                v = node.params[arg_name]
                if not isinstance(v, str) or not _SVAL.match(v):
                    raise ShapeMismatch(f"{node.op}: param {arg_name} bad string {v!r}")
                out.append(Value.of_str(v))
            else:
                ref = next(tensor_iter)
                if ref not in self.nodes:
                    raise ShapeMismatch(f"{node.op}: unknown input node {ref!r}")
                out.append(self.values[ref])
        return out

    def set_outputs(self, names: Sequence[str]) -> None:
        for n in names:
            if n not in self.nodes:
                raise ShapeMismatch(f"unknown output node {n!r}")
        self.outputs = list(names)

    def value(self, name: str) -> Value:
        return self.values[name]

    def copy(self) -> "TensorGraph":
        g = TensorGraph()
        for node in self.nodes.values():
            g.nodes[node.name] = GraphNode(node.name, node.op, node.inputs, dict(node.params))
            g.values[node.name] = self.values[node.name]
        g.outputs = list(self.outputs)
        g.root = self.root
        return g

    def semantic_nodes(self) -> list[str]:
        return [n for n, node in self.nodes.items() if node.op != "noop"]


def make_single_rooted(g: TensorGraph) -> TensorGraph:
    """Combine all outputs pairwise left-to-right with noops so the graph
    has exactly one root.  Noop nodes carry zero cost and are never rewritten."""
    if not g.outputs:
        raise ShapeMismatch("graph has no outputs")
    out = g.copy()
    if len(out.outputs) == 1:
        out.root = out.outputs[0]
        return out
    counter = 0
    current = out.outputs[0]
    for nxt in out.outputs[1:]:
        while f"_noop{counter}" in out.nodes:
            counter += 1
        current = out.add(f"_noop{counter}", "noop", (current, nxt))
        counter += 1
    out.root = current
    return out


# -------------------------------------------------------------- file format

_HEADER = "tensorgraph v1"
_NODE_RE = re.compile(r"(\w+)\s*=\s*(\w+)\s*\(([^)]*)\)\s*(?:#\s*params:\s*(.*))?\Z")


def parse_graph(text: str) -> TensorGraph:
    """Parse the line-oriented graph format; shapes are validated on parse."""
    g = TensorGraph()
    lines = text.splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise GraphParseError(f"expected header {_HEADER!r}", line=1)
    outputs: Optional[list[str]] = None
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("outputs:"):
            if outputs is not None:
                raise GraphParseError("duplicate outputs line", line=lineno)
            outputs = line[len("outputs:") :].split()
            continue
        m = _NODE_RE.match(line)
        if m is None:
            raise GraphParseError(f"bad node line {line!r}", line=lineno)
        name, op, args, params_text = m.groups()
        if op == "noop":
            # single-rooting plumbing is derived, never stored
            raise GraphParseError("noop nodes do not belong in graph files", line=lineno)
        inputs = [a.strip() for a in args.split(",") if a.strip()]
        params: dict[str, int | str] = {}
        if params_text:
            for item in params_text.split(","):
                if "=" not in item:
                    raise GraphParseError(f"bad param {item.strip()!r}", line=lineno)
                k, _, v = item.partition("=")
                k, v = k.strip(), v.strip()
                params[k] = int(v) if re.fullmatch(r"-?\d+", v) else v
        try:
            g.add(name, op, inputs, **params)
        except ShapeMismatch as e:
            raise GraphParseError(str(e), line=lineno) from None
    if outputs is None:
        raise GraphParseError("missing outputs line")
    try:
        g.set_outputs(outputs)
    except ShapeMismatch as e:
        raise GraphParseError(str(e)) from None
    return g


def emit_graph(g: TensorGraph) -> str:
    """Canonical text form; emit(parse(t)) is a fixpoint.

    Noop single-rooting plumbing is derived state and is not written."""
    lines = [_HEADER]
    for node in g.nodes.values():
        if node.op == "noop":
            continue
        sig = SIGNATURES[node.op]
        line = f"{node.name} = {node.op}({', '.join(node.inputs)})"
        if sig.param_names:
            rendered = ", ".join(f"{p}={node.params[p]}" for p in sig.param_names)
            line += f" # params: {rendered}"
        lines.append(line)
    lines.append("outputs: " + " ".join(g.outputs))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------- S-expressions


def node_sexpr(g: TensorGraph, name: str) -> Term:
    """Term for one node, recursing through its tensor inputs."""
    node = g.nodes[name]
    sig = SIGNATURES[node.op]
    args: list[Term] = []
    tensor_iter = iter(node.inputs)
    for arg_name, kind in sig.args:
        if kind == ValueKind.N:
            args.append(App(node.params[arg_name]))
        elif kind == ValueKind.S:
            args.append(App(node.params[arg_name]))
        else:
            args.append(node_sexpr(g, next(tensor_iter)))
    return App(node.op, tuple(args))


def graph_sexprs(g: TensorGraph) -> list[Term]:
    roots = [g.root] if g.root is not None else g.outputs
    return [node_sexpr(g, r) for r in roots]


# --------------------------------------------------------------- e-graph tie


class TensorAnalysis:
    """E-class analysis for the tensor language: childless atoms are N/S
    literals; applications shape-infer from child analyses."""

    def make(self, op: Atom, child_values: list[Value]) -> Value:
        if not child_values:
            if isinstance(op, int):
                return Value.of_int(op)
            if isinstance(op, str) and op not in SIGNATURES:
                return Value.of_str(op)
            raise ShapeMismatch(f"operator {op!r} used without arguments")
        if not is_op(op):
            raise ShapeMismatch(f"unknown operator {op!r}")
        return infer_shape(op, child_values)

    def merge(self, a: Value, b: Value) -> Value:
        return merge_values(a, b)


def build_egraph(g: TensorGraph) -> tuple[EGraph, dict[str, int]]:
    """Initial e-graph for a single-rooted graph; returns it plus the
    node-name -> e-class map."""
    if g.root is None:
        raise ShapeMismatch("graph must be single-rooted (run make_single_rooted)")
    eg = EGraph(TensorAnalysis())
    classes: dict[str, int] = {}
    for node in g.nodes.values():
        sig = SIGNATURES[node.op]
        children: list[int] = []
        tensor_iter = iter(node.inputs)
        for arg_name, kind in sig.args:
            if kind in (ValueKind.N, ValueKind.S):
                children.append(eg.add_enode(node.params[arg_name]))
            else:
                children.append(classes[next(tensor_iter)])
        classes[node.name] = eg.add_enode(node.op, children)
    eg.root = classes[g.root]
    return eg, classes
