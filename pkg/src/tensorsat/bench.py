"""Deterministic benchmark graph generators.

Miniature versions of the graph families where operator merging pays
off: stacked matmuls sharing an input (RNN-cell flavour), convolution
fan-outs and inception-style blocks.  All generators return shape-valid,
single-rooted graphs.
"""

from __future__ import annotations

import random
from typing import Optional

from .tensor_lang import TensorGraph, make_identifier, make_single_rooted

BENCH_NAMES = ("matmul-chain", "rnn-cell-stack", "conv-fanout", "inception-block")


def matmul_chain(n: int, rows: int = 64, inner: int = 128, cols: int = 32) -> TensorGraph:
    """n matmuls sharing one left input; each pair is a merge candidate."""
    if n < 1:
        raise ValueError("size must be >= 1")
    g = TensorGraph()
    g.add("x", "input", identifier=make_identifier("x", (rows, inner)))
    outs = []
    for i in range(n):
        g.add(f"w{i}", "weight", identifier=make_identifier(f"w{i}", (inner, cols)))
        outs.append(g.add(f"m{i}", "matmul", ("x", f"w{i}"), activation=0))
    g.set_outputs(outs)
    return make_single_rooted(g)


def matmul_feedback(n: int, dim: int = 64) -> TensorGraph:
    """Chain m_{i+1} = matmul(x, m_i): merges can close loops in the e-graph."""
    if n < 2:
        raise ValueError("size must be >= 2")
    g = TensorGraph()
    g.add("x", "input", identifier=make_identifier("x", (dim, dim)))
    g.add("w", "weight", identifier=make_identifier("w", (dim, dim)))
    prev = g.add("m0", "matmul", ("x", "w"), activation=0)
    for i in range(1, n):
        prev = g.add(f"m{i}", "matmul", ("x", prev), activation=0)
    g.set_outputs([prev])
    return make_single_rooted(g)


def rnn_cell_stack(n: int, batch: int = 8, width: int = 64) -> TensorGraph:
    """n recurrent cells with shared weights:
    h_{t+1} = tanh(x_t @ Wx + h_t @ Wh)."""
    if n < 1:
        raise ValueError("size must be >= 1")
    g = TensorGraph()
    g.add("wx", "weight", identifier=make_identifier("wx", (width, width)))
    g.add("wh", "weight", identifier=make_identifier("wh", (width, width)))
    h = g.add("h0", "input", identifier=make_identifier("h0", (batch, width)))
    for t in range(n):
        x = g.add(f"x{t}", "input", identifier=make_identifier(f"x{t}", (batch, width)))
        mx = g.add(f"mx{t}", "matmul", (x, "wx"), activation=0)
        mh = g.add(f"mh{t}", "matmul", (h, "wh"), activation=0)
        s = g.add(f"s{t}", "ewadd", (mx, mh))
        h = g.add(f"h{t + 1}", "tanh", (s,))
    g.set_outputs([h])
    return make_single_rooted(g)


def conv_fanout(n: int, channels: int = 8, filters: int = 16, kernel: int = 3, hw: int = 9) -> TensorGraph:
    """n convolutions sharing one input."""
    if n < 1:
        raise ValueError("size must be >= 1")
    g = TensorGraph()
    g.add("x", "input", identifier=make_identifier("x", (1, channels, hw, hw)))
    outs = []
    for i in range(n):
        g.add(
            f"w{i}", "weight",
            identifier=make_identifier(f"w{i}", (filters, channels, kernel, kernel)),
        )
        outs.append(
            g.add(
                f"c{i}", "conv", ("x", f"w{i}"),
                stride_h=1, stride_w=1, padding=0, activation=0,
            )
        )
    g.set_outputs(outs)
    return make_single_rooted(g)


def inception_block(n: int, channels: int = 8, branch: int = 8, hw: int = 9) -> TensorGraph:
    """n stacked blocks: 1x1 / 3x3 / 5x5 convs plus pooled 1x1 over a shared
    input, concatenated along channels."""
    if n < 1:
        raise ValueError("size must be >= 1")
    g = TensorGraph()
    cur = g.add("x", "input", identifier=make_identifier("x", (1, channels, hw, hw)))
    c = channels
    for b in range(n):
        names = []
        for tag, k in (("b1", 1), ("b3", 3), ("b5", 5)):
            w = g.add(
                f"{tag}w{b}", "weight",
                identifier=make_identifier(f"{tag}w{b}", (branch, c, k, k)),
            )
            names.append(
                g.add(f"{tag}c{b}", "conv", (cur, w), stride_h=1, stride_w=1, padding=0, activation=0)
            )
        p = g.add(f"pool{b}", "poolavg", (cur,), kernel_h=3, kernel_w=3,
                  stride_h=1, stride_w=1, padding=0, activation=0)
        pw = g.add(f"pw{b}", "weight", identifier=make_identifier(f"pw{b}", (branch, c, 1, 1)))
        names.append(
            g.add(f"pc{b}", "conv", (p, pw), stride_h=1, stride_w=1, padding=0, activation=0)
        )
        cur = g.add(f"cat{b}", "concat_4", names, axis=1)
        c = 4 * branch
    g.set_outputs([cur])
    return make_single_rooted(g)


def generate(name: str, size: int, rng: Optional[random.Random] = None) -> TensorGraph:
    """Build a named benchmark; with an rng, dimensions are randomized."""
    if name not in BENCH_NAMES:
        raise ValueError(f"unknown benchmark {name!r}; choose from {BENCH_NAMES}")
    if size < 1:
        raise ValueError("size must be >= 1")
    if rng is None:
        plain = {
            "matmul-chain": matmul_chain,
            "rnn-cell-stack": rnn_cell_stack,
            "conv-fanout": conv_fanout,
            "inception-block": inception_block,
        }
        return plain[name](size)
    r = rng.randint
    if name == "matmul-chain":
        return matmul_chain(size, rows=8 * r(2, 16), inner=8 * r(4, 32), cols=8 * r(2, 8))
    if name == "rnn-cell-stack":
        return rnn_cell_stack(size, batch=r(2, 16), width=8 * r(4, 16))
    if name == "conv-fanout":
        return conv_fanout(size, channels=4 * r(1, 4), filters=4 * r(2, 8), hw=r(5, 14))
    return inception_block(size, channels=4 * r(1, 4), branch=4 * r(1, 4), hw=r(5, 14))
