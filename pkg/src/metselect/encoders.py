"""GCN, GAT and GIN encoders returning every layer's node representation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .graph import Graph, normalize_adjacency
from .sparse import ShapeError, SparseCSR

Params = Dict[str, np.ndarray]

ARCHITECTURES = ("gcn", "gat", "gin")


@dataclass(frozen=True)
class EncoderConfig:
    arch: str = "gcn"
    depth: int = 2
    hidden: int = 32
    in_features: int = 16
    self_loops: bool = False
    leaky_slope: float = ad.LEAKY_SLOPE

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.hidden < 1 or self.in_features < 1:
            raise ValueError("widths must be >= 1")


class GraphOperators:
    """Per-graph structures an encoder needs, built once and reused across epochs."""

    def __init__(self, g: Graph, self_loops: bool):
        self.num_nodes = g.num_nodes
        self.norm_adj = normalize_adjacency(g, self_loops=self_loops)
        self.adj = g.adjacency()
        src, dst = g.directed_edges(self_loops=self_loops)
        if not self_loops:
            # attention softmax needs a nonempty neighbourhood
            isolated = np.flatnonzero(np.bincount(src, minlength=g.num_nodes) == 0)
            src = np.concatenate([src, isolated])
            dst = np.concatenate([dst, isolated])
        # target i attends over sources j
        self.att_target = src
        self.att_source = dst


def glorot(rng, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> Params:
    d = cfg.hidden
    p = {
        "input.W": glorot(rng, cfg.in_features, d),
        "input.b": np.zeros(d),
    }
    for l in range(1, cfg.depth + 1):
        pre = f"layer{l}."
        if cfg.arch in ("gcn", "gat"):
            p[pre + "W"] = glorot(rng, d, d)
        if cfg.arch == "gcn":
            p[pre + "b"] = np.zeros(d)
        elif cfg.arch == "gat":
            p[pre + "a"] = glorot(rng, 2 * d, 1, shape=(2 * d,))
        else:
            p[pre + "eps"] = np.zeros(1)
            p[pre + "W1"] = glorot(rng, d, d)
            p[pre + "b1"] = np.zeros(d)
            p[pre + "W2"] = glorot(rng, d, d)
            p[pre + "b2"] = np.zeros(d)
    return p


def input_transform(x, w0: Node, b0: Node) -> Node:
    """h0 = X W0 + b0, applied row-wise."""
    tape = w0.tape
    x = tape.lift(x)
    return ad.matmul(x, w0) + b0


def gcn_layer(h: Node, norm_adj: SparseCSR, w: Node, b: Node, final: bool = False) -> Node:
    out = ad.matmul(ad.spmm(norm_adj, h), w) + b
    return out if final else ad.relu(out)


def gat_layer(
    h: Node, target, source, w: Node, a: Node, final: bool = False,
    slope: float = ad.LEAKY_SLOPE,
) -> Node:
    """Single-head attention over edges ``source -> target``.

    ``e_ij = LeakyReLU(a . [W h_i || W h_j])`` is normalized over each target's
    neighbourhood and used to average ``W h_j``.
    """
    n, d = h.shape
    if a.shape != (2 * d,):
        raise ShapeError(f"attention vector must have shape ({2 * d},), got {a.shape}")
    wh = ad.matmul(h, w)
    a_dst = ad.matmul(wh, ad.reshape(ad.slice_rows(a, 0, d), (d, 1)))
    a_src = ad.matmul(wh, ad.reshape(ad.slice_rows(a, d, 2 * d), (d, 1)))
    scores = ad.add(ad.gather_rows(a_dst, target), ad.gather_rows(a_src, source))
    scores = ad.leaky_relu(ad.reshape(scores, (-1,)), slope)
    alpha = ad.segment_softmax(scores, target, n)
    msgs = ad.mul(ad.gather_rows(wh, source), ad.reshape(alpha, (-1, 1)))
    out = ad.segment_sum(msgs, target, n)
    return out if final else ad.relu(out)


def gin_layer(
    h: Node, adj: SparseCSR, eps: Node, w1: Node, b1: Node, w2: Node, b2: Node,
    final: bool = False,
) -> Node:
    """MLP((1 + eps) h_i + sum of neighbour rows)."""
    agg = ad.add(ad.mul(ad.add(eps, 1.0), h), ad.spmm(adj, h))
    hidden = ad.relu(ad.matmul(agg, w1) + b1)
    out = ad.matmul(hidden, w2) + b2
    return out if final else ad.relu(out)


def encode(
    tape: Tape, g: Graph | GraphOperators, x, cfg: EncoderConfig, params: Params | dict
) -> list[Node]:
    """Run the encoder and return ``[h0, h1, ..., hL]``.

    ``params`` maps names to arrays (registered on ``tape`` here) or to nodes
    already on the tape.
    """
    ops = g if isinstance(g, GraphOperators) else GraphOperators(g, cfg.self_loops)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ops.num_nodes, cfg.in_features):
        raise ShapeError(f"features {x.shape} do not match ({ops.num_nodes}, {cfg.in_features})")
    P = {k: v if isinstance(v, Node) else tape.param(k, v) for k, v in params.items()}
    h = input_transform(x, P["input.W"], P["input.b"])
    stack = [h]
    for l in range(1, cfg.depth + 1):
        pre = f"layer{l}."
        final = l == cfg.depth
        if cfg.arch == "gcn":
            h = gcn_layer(h, ops.norm_adj, P[pre + "W"], P[pre + "b"], final)
        elif cfg.arch == "gat":
            h = gat_layer(h, ops.att_target, ops.att_source, P[pre + "W"], P[pre + "a"],
                          final, cfg.leaky_slope)
        else:
            h = gin_layer(h, ops.adj, P[pre + "eps"], P[pre + "W1"], P[pre + "b1"],
                          P[pre + "W2"], P[pre + "b2"], final)
        stack.append(h)
    return stack
