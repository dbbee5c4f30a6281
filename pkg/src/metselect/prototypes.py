"""Class prototypes, pooled covariances and Mahalanobis distances per layer.

Moments are plain arrays computed from node *values*; they enter a tape only
as constant leaves, so no gradient ever flows into a mean or a covariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular

from . import autodiff as ad
from .autodiff import Node, Tape
from .encoders import glorot


class MomentError(ValueError):
    """Moments cannot be formed from the given training nodes."""


class NumericalError(FloatingPointError):
    """A covariance stayed indefinite after regularization retries."""


EPS_FLOOR = 1e-6
EPS_TRACE_SCALE = 1e-4
FACTOR_RETRIES = 3


def transform_names(layer: int, shared: bool) -> tuple[str, str]:
    pre = "transform." if shared else f"transform{layer}."
    return pre + "W", pre + "b"


def init_transforms(layers: Sequence[int], d: int, rng, shared: bool = False) -> dict:
    params = {}
    for l in layers:
        wn, bn = transform_names(l, shared)
        if wn not in params:
            params[wn] = glorot(rng, d, d)
            params[bn] = np.zeros(d)
    return params


def transform_stack(stack: dict[int, Node], params: dict[str, Node], shared: bool = False) -> dict[int, Node]:
    """``h~_l = h_l W_l^T + b_l`` for every layer in ``stack``."""
    out = {}
    for l, h in stack.items():
        wn, bn = transform_names(l, shared)
        out[l] = ad.affine_t(h, params[wn], params[bn])
    return out


def _check_classes(labels, num_classes):
    counts = np.bincount(labels, minlength=num_classes)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        raise MomentError(f"class {int(empty[0])} has no training nodes")
    return counts


def class_means(h: np.ndarray, labels, train_mask, num_classes: int) -> np.ndarray:
    """Mean transformed embedding of the training nodes of each class."""
    h = np.asarray(h, dtype=np.float64)
    y = np.asarray(labels)[train_mask]
    rows = h[train_mask]
    counts = _check_classes(y, num_classes)
    sums = np.zeros((num_classes, h.shape[1]))
    np.add.at(sums, y, rows)
    return sums / counts[:, None]


def pooled_covariance(h: np.ndarray, labels, train_mask, means: np.ndarray) -> np.ndarray:
    """Covariance of class-centred training rows with an N-1 denominator."""
    h = np.asarray(h, dtype=np.float64)
    y = np.asarray(labels)[train_mask]
    if len(y) < 2:
        raise MomentError("pooled covariance needs at least 2 training nodes")
    centred = h[train_mask] - means[y]
    k = centred.T @ centred / (len(y) - 1)
    return 0.5 * (k + k.T)


def regularize_and_factor(k: np.ndarray) -> tuple[float, np.ndarray]:
    """Return ``(eps, L)`` with ``L L^T = K + eps I``.

    ``eps = max(1e-6, 1e-4 * trace(K) / d)``, multiplied by 10 on each failed
    factorization, at most three times.
    """
    k = 0.5 * (np.asarray(k, dtype=np.float64) + np.asarray(k, dtype=np.float64).T)
    d = k.shape[0]
    eps = max(EPS_FLOOR, EPS_TRACE_SCALE * np.trace(k) / d)
    for _ in range(FACTOR_RETRIES + 1):
        try:
            return eps, np.linalg.cholesky(k + eps * np.eye(d))
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise NumericalError(f"covariance not positive definite after {FACTOR_RETRIES} retries (eps={eps / 10:g})")


def mahalanobis(h, mu, chol) -> float:
    """Squared Mahalanobis distance of one embedding to one prototype."""
    z = solve_triangular(chol, np.asarray(h, dtype=np.float64) - mu, lower=True, check_finite=False)
    return float(z @ z)


def mahalanobis_matrix(h: np.ndarray, means: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Distances of all rows of ``h`` to all class means, shape (n, C)."""
    h = np.asarray(h)
    both = solve_triangular(chol, np.vstack([h, means]).T, lower=True, check_finite=False).T
    z, zm = both[:len(h)], both[len(h):]
    sq = (z * z).sum(axis=1)[:, None] - 2.0 * (z @ zm.T) + (zm * zm).sum(axis=1)
    return np.maximum(sq, 0.0)


def layer_class_probs(dist: np.ndarray) -> np.ndarray:
    """Softmax of negated distances along the last axis."""
    neg = -np.asarray(dist, dtype=np.float64)
    neg = neg - neg.max(axis=-1, keepdims=True)
    ex = np.exp(neg)
    return ex / ex.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class LayerMoments:
    means: np.ndarray
    cov: np.ndarray
    eps: float
    chol: np.ndarray

    @classmethod
    def from_moments(cls, means, cov) -> LayerMoments:
        eps, chol = regularize_and_factor(cov)
        return cls(means, 0.5 * (cov + cov.T), eps, chol)

    @property
    def chol_inv(self) -> np.ndarray:
        """``L^-1`` from one triangular solve, cached for the lifetime of these moments."""
        cached = self.__dict__.get("_chol_inv")
        if cached is None:
            d = self.chol.shape[0]
            cached = solve_triangular(self.chol, np.eye(d), lower=True, check_finite=False)
            object.__setattr__(self, "_chol_inv", cached)
        return cached

    def distances(self, h: np.ndarray) -> np.ndarray:
        return mahalanobis_matrix(h, self.means, self.chol)

    def tape_distances(self, h: Node) -> Node:
        tape = h.tape
        mu, chol = tape.constant(self.means, "means"), tape.constant(self.chol, "chol")
        return ad.mahalanobis(h, mu, chol, self.chol_inv)


@dataclass(frozen=True)
class ClassMoments:
    layers: dict[int, LayerMoments]
    counts: np.ndarray
    epoch: int = 0

    def distances(self, tstack: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
        return {l: m.distances(tstack[l]) for l, m in self.layers.items()}

    def probs(self, tstack: dict[int, np.ndarray]) -> np.ndarray:
        """Per-node, per-layer, per-class probabilities, shape (n, layers, C)."""
        dist = self.distances(tstack)
        return np.stack([layer_class_probs(dist[l]) for l in sorted(dist)], axis=1)


def tape_distances(tstack: dict[int, Node], moments: ClassMoments, rows=None) -> dict[int, Node]:
    """Distance nodes differentiable in the embeddings only.

    With ``rows`` given, only those nodes are scored and the result has one
    row per entry of ``rows``.
    """
    out = {}
    for l, h in tstack.items():
        if rows is not None:
            h = ad.gather_rows(h, rows)
        out[l] = moments.layers[l].tape_distances(h)
    return out


class MomentAccumulator:
    """Streaming per-class sums and raw second moments for each layer.

    Memory is ``O(layers * (C d + d^2))`` regardless of how many rows are fed.
    """

    def __init__(self, layers: Sequence[int], num_classes: int, d: int):
        self.num_classes = num_classes
        self.sums = {l: np.zeros((num_classes, d)) for l in layers}
        self.second = {l: np.zeros((d, d)) for l in layers}
        self.counts = np.zeros(num_classes, dtype=np.int64)

    def update(self, rows: dict[int, np.ndarray], labels) -> None:
        labels = np.asarray(labels, dtype=np.int64)
        onehot = np.eye(self.num_classes)[labels]
        for l, r in rows.items():
            self.sums[l] += onehot.T @ r
            self.second[l] += r.T @ r
        self.counts += np.bincount(labels, minlength=self.num_classes)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def finalize(self, epoch: int = 0) -> ClassMoments:
        empty = np.flatnonzero(self.counts == 0)
        if len(empty):
            raise MomentError(f"class {int(empty[0])} has no training nodes")
        n = self.total
        if n < 2:
            raise MomentError("pooled covariance needs at least 2 training nodes")
        keys = list(self.sums)
        means = np.stack([self.sums[l] for l in keys]) / self.counts[:, None]
        corr = np.einsum("lcd,c,lce->lde", means, self.counts, means)
        cov = (np.stack([self.second[l] for l in keys]) - corr) / (n - 1)
        cov = 0.5 * (cov + cov.transpose(0, 2, 1))
        d = cov.shape[1]
        eps = np.maximum(EPS_FLOOR, EPS_TRACE_SCALE * np.trace(cov, axis1=1, axis2=2) / d)
        try:
            # one batched factorization; any failure falls back to per-layer retries
            chol = np.linalg.cholesky(cov + eps[:, None, None] * np.eye(d))
            layers = {l: LayerMoments(means[i], cov[i], float(eps[i]), chol[i]) for i, l in enumerate(keys)}
        except np.linalg.LinAlgError:
            layers = {l: LayerMoments.from_moments(means[i], cov[i]) for i, l in enumerate(keys)}
        return ClassMoments(layers, self.counts.copy(), epoch)


def moments_epoch_pass(
    tstack: dict[int, np.ndarray], labels, train_mask, num_classes: int,
    epoch: int = 0, chunk: int = 256,
) -> ClassMoments:
    """One streaming pass over the training rows of every layer."""
    idx = np.flatnonzero(train_mask)
    labels = np.asarray(labels)
    d = next(iter(tstack.values())).shape[1]
    acc = MomentAccumulator(sorted(tstack), num_classes, d)
    for start in range(0, len(idx), chunk):
        part = idx[start:start + chunk]
        acc.update({l: np.asarray(h)[part] for l, h in tstack.items()}, labels[part])
    return acc.finalize(epoch)


def batch_moments(tstack: dict[int, np.ndarray], labels, train_mask, num_classes: int) -> ClassMoments:
    """Direct per-class means and centred pooled covariance for every layer."""
    layers = {}
    y = np.asarray(labels)
    for l, h in tstack.items():
        mu = class_means(h, y, train_mask, num_classes)
        layers[l] = LayerMoments.from_moments(mu, pooled_covariance(h, y, train_mask, mu))
    counts = np.bincount(y[train_mask], minlength=num_classes)
    return ClassMoments(layers, counts)
