"""Per-node layer selection from per-layer class probabilities.

All rules take a probability tensor of shape ``(n, layers, C)`` whose layer
axis is indexed ``0..L`` and return one layer per node. Ties always resolve to
the smaller layer index (``np.argmax``/``np.argmin`` return the first hit).

Default rules follow the confidence reading: inference picks the layer whose
nearest prototype is most dominant, training picks the layer where the true
class is most probable. ``literal=True`` applies the printed argmin forms
instead. The ``max`` rules invert whichever rule is active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

POLICIES = ("final", "metselect", "metselect-max")


@dataclass(frozen=True)
class SelectionResult:
    layers: np.ndarray
    probs: np.ndarray | None
    policy: str

    def chosen_probs(self) -> np.ndarray | None:
        if self.probs is None:
            return None
        return self.probs[np.arange(len(self.layers)), self.layers]


def _check(probs) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 3:
        raise ValueError(f"expected (n, layers, C) probabilities, got shape {probs.shape}")
    return probs


def _true_class(probs, labels) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    return probs[np.arange(probs.shape[0]), :, labels]


def select_inference(probs, literal: bool = False) -> np.ndarray:
    probs = _check(probs)
    if literal:
        return np.argmin(probs.min(axis=2), axis=1)
    return np.argmax(probs.max(axis=2), axis=1)


def select_training(probs, labels, literal: bool = False) -> np.ndarray:
    probs = _check(probs)
    score = _true_class(probs, labels)
    return np.argmin(score, axis=1) if literal else np.argmax(score, axis=1)


def select_final(depth: int, n: int) -> np.ndarray:
    return np.full(n, depth, dtype=np.int64)


def select_max_distance(probs, labels=None, literal: bool = False) -> np.ndarray:
    """Inverted MetSelect: the training rule when ``labels`` is given, else the inference rule."""
    probs = _check(probs)
    if labels is None:
        score = probs.min(axis=2) if literal else probs.max(axis=2)
    else:
        score = _true_class(probs, labels)
    return np.argmax(score, axis=1) if literal else np.argmin(score, axis=1)


def select(policy: str, probs=None, labels=None, depth: int | None = None,
           n: int | None = None, literal: bool = False) -> SelectionResult:
    """Dispatch on the policy tag; ``labels`` switches to the training rules."""
    if policy == "final":
        if depth is None:
            depth = _check(probs).shape[1] - 1
        if n is None:
            n = _check(probs).shape[0]
        return SelectionResult(select_final(depth, n), probs, policy)
    if policy == "metselect":
        if labels is None:
            layers = select_inference(probs, literal)
        else:
            layers = select_training(probs, labels, literal)
    elif policy == "metselect-max":
        layers = select_max_distance(probs, labels, literal)
    else:
        raise ValueError(f"unknown selection policy {policy!r}")
    return SelectionResult(layers.astype(np.int64), probs, policy)


def layer_histogram(layers, depth: int) -> np.ndarray:
    """Fraction of nodes assigned to each layer ``0..depth``."""
    layers = np.asarray(layers, dtype=np.int64)
    if layers.size == 0:
        raise ValueError("layer histogram of an empty node set")
    return np.bincount(layers, minlength=depth + 1) / layers.size
