"""Budgeted structural poisoning: toggle ``round(p |E|)`` distinct node pairs.

A flip adds the edge when the pair is unconnected and deletes it otherwise.
Features and labels are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph

ATTACKS = ("random", "greedy")
ALIASES = {"random-flip": "random", "hetero-greedy": "greedy"}
MAX_BUDGET = 0.5


@dataclass(frozen=True)
class AttackSpec:
    attack: str = "random"
    p: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attack", ALIASES.get(self.attack, self.attack))
        if self.attack not in ATTACKS:
            raise ValueError(f"unknown attack {self.attack!r}; expected one of {ATTACKS}")
        if not 0.0 <= self.p <= MAX_BUDGET:
            raise ValueError(f"budget fraction {self.p} outside [0, {MAX_BUDGET}]")

    def budget(self, num_edges: int) -> int:
        # half-up rounding, so p = 0.5 on 5 edges gives 3 flips
        return int(np.floor(self.p * num_edges + 0.5))


def _keys(edges: np.ndarray, n: int) -> np.ndarray:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lo, hi = edges.min(axis=1), edges.max(axis=1)
    return lo * n + hi


def _pairs(keys: np.ndarray, n: int) -> np.ndarray:
    return np.stack([keys // n, keys % n], axis=1)


def toggle_pairs(g: Graph, pairs) -> Graph:
    """Flip every pair in ``pairs``; duplicate or self pairs are rejected."""
    n = g.num_nodes
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if np.any(pairs[:, 0] == pairs[:, 1]):
        raise ValueError("cannot toggle a self-pair")
    flips = _keys(pairs, n)
    if len(np.unique(flips)) != len(flips):
        raise ValueError("toggled pairs must be distinct")
    new = np.setxor1d(_keys(g.edges, n), flips)
    return g.with_edges(_pairs(new, n))


def _random_pairs(rng, n: int, count: int, exclude: np.ndarray) -> np.ndarray:
    """``count`` distinct uniformly random unordered pairs whose keys avoid ``exclude``."""
    chosen = np.empty(0, dtype=np.int64)
    exclude = np.unique(exclude)
    while len(chosen) < count:
        need = count - len(chosen)
        u = rng.integers(0, n, size=2 * need + 8)
        v = rng.integers(0, n, size=2 * need + 8)
        keep = u != v
        keys = np.minimum(u, v)[keep] * n + np.maximum(u, v)[keep]
        # keep first occurrences in draw order so the result depends only on the seed
        _, first = np.unique(keys, return_index=True)
        keys = keys[np.sort(first)]
        keys = keys[~np.isin(keys, exclude) & ~np.isin(keys, chosen)]
        chosen = np.concatenate([chosen, keys[:need]])
    return chosen


def _check_budget(g: Graph, budget: int) -> None:
    n = g.num_nodes
    total = n * (n - 1) // 2
    if budget > total:
        raise ValueError(f"budget {budget} exceeds the {total} possible node pairs")


def random_flip_attack(g: Graph, spec: AttackSpec) -> Graph:
    """Toggle ``budget`` distinct pairs drawn uniformly at random."""
    budget = spec.budget(g.num_edges)
    _check_budget(g, budget)
    if budget == 0:
        return g
    rng = np.random.default_rng(spec.seed)
    keys = _random_pairs(rng, g.num_nodes, budget, np.empty(0, dtype=np.int64))
    return toggle_pairs(g, _pairs(keys, g.num_nodes))


def greedy_candidates(g: Graph, train_labels) -> tuple[np.ndarray, np.ndarray]:
    """Keys of absent different-label train pairs and of present same-label train edges.

    ``train_labels`` holds a label for training nodes and ``-1`` elsewhere.
    """
    n = g.num_nodes
    y = np.asarray(train_labels, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError(f"expected {n} masked labels, got shape {y.shape}")
    train = np.flatnonzero(y >= 0)
    present = _keys(g.edges, n) if g.num_edges else np.empty(0, dtype=np.int64)
    iu, ju = np.triu_indices(len(train), k=1)
    u, v = train[iu], train[ju]
    differ = y[u] != y[v]
    add = u[differ] * n + v[differ]
    add = add[~np.isin(add, present)]
    e = g.edges
    same = (y[e[:, 0]] >= 0) & (y[e[:, 1]] >= 0) & (y[e[:, 0]] == y[e[:, 1]])
    delete = present[same]
    return np.sort(add), np.sort(delete)


def hetero_greedy_attack(g: Graph, spec: AttackSpec, train_labels) -> Graph:
    """Label-aware poisoning that sees only training labels.

    Alternates adding an absent edge between differently labelled training
    nodes and deleting an edge between same-label training nodes, each drawn
    at random from its category. When one category runs dry the other carries
    on; when both are exhausted the rest of the budget goes to random flips.
    """
    budget = spec.budget(g.num_edges)
    _check_budget(g, budget)
    if budget == 0:
        return g
    rng = np.random.default_rng(spec.seed)
    add, delete = greedy_candidates(g, train_labels)
    add = add[rng.permutation(len(add))]
    delete = delete[rng.permutation(len(delete))]
    # interleave add, delete, add, ... then append whichever list is longer
    k = min(len(add), len(delete))
    both = np.empty(2 * k, dtype=np.int64)
    both[0::2], both[1::2] = add[:k], delete[:k]
    order = np.concatenate([both, add[k:], delete[k:]])[:budget]
    if len(order) < budget:
        extra = _random_pairs(rng, g.num_nodes, budget - len(order), order)
        order = np.concatenate([order, extra])
    return toggle_pairs(g, _pairs(order, g.num_nodes))


def attack(g: Graph, spec: AttackSpec, train_labels=None) -> Graph:
    if spec.attack == "random":
        return random_flip_attack(g, spec)
    if train_labels is None:
        raise ValueError("the greedy attack needs training labels")
    return hetero_greedy_attack(g, spec, train_labels)


def masked_train_labels(g: Graph, train_mask) -> np.ndarray:
    """Labels visible to the attacker: training labels, ``-1`` everywhere else."""
    y = np.full(g.num_nodes, -1, dtype=np.int64)
    y[train_mask] = g.labels[train_mask]
    return y
