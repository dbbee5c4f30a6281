"""Training objectives, Adam, and the epoch loop with validation model selection.

Per epoch the loop (1) builds the loss on the tape of the current forward
pass, using the moments finalized from that same forward pass as constants,
(2) takes one Adam step, and (3) runs the next forward pass, which refreshes
the moments and scores the validation set. Moments used in epoch ``e`` are
therefore the ones finalized at the end of epoch ``e - 1``; epoch 1 uses a
bootstrap pass over the initial parameters.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .encoders import EncoderConfig, GraphOperators, encode, glorot, init_encoder
from .graph import Graph, Split
from .prototypes import (
    ClassMoments, init_transforms, layer_class_probs, moments_epoch_pass, tape_distances,
    transform_stack,
)
from .selection import POLICIES, select_final, select_inference, select_max_distance, select_training

LOSSES = ("ce", "distance")


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce"
    margin: float = 1.0
    epochs: int = 500
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    policy: str = "metselect"
    eq4_literal: bool = False
    shared_transform: bool = False
    aux_distance_weight: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown selection policy {self.policy!r}")

    @property
    def uses_moments(self) -> bool:
        return self.policy != "final" or self.loss == "distance" or self.aux_distance_weight > 0

    def moment_layers(self, depth: int) -> list[int]:
        return [depth] if self.policy == "final" else list(range(depth + 1))

    def decoder_layers(self, depth: int) -> list[int]:
        if self.loss != "ce":
            return []
        return [depth] if self.policy == "final" else list(range(depth + 1))


# ---------------------------------------------------------------------------
# losses


def personalized_ce_loss(stack: Sequence[Node], decoders: dict[str, Node], selections,
                         labels, train_mask) -> Node:
    """Mean cross-entropy of each train node decoded from its selected layer."""
    idx = np.flatnonzero(train_mask)
    sel = np.asarray(selections, dtype=np.int64)
    sel = sel[idx] if len(sel) == len(train_mask) else sel
    if len(sel) != len(idx):
        raise ValueError("need one selection per train node")
    if sel.size and (sel.min() < 0 or sel.max() >= len(stack)):
        raise ValueError(f"selected layer outside [0, {len(stack) - 1}]")
    y = np.asarray(labels)[idx]
    total = None
    for l in np.unique(sel):
        rows = idx[sel == l]
        logits = ad.matmul(ad.gather_rows(stack[l], rows), decoders[f"decoder{l}.W"]) + decoders[f"decoder{l}.b"]
        nll = ad.pick(ad.log_softmax(logits), np.arange(len(rows)), y[sel == l])
        part = ad.sum_all(nll)
        total = part if total is None else total + part
    return ad.scale(total, -1.0 / len(idx))


def distance_margin_loss(distances: dict[int, Node], selections, labels, train_mask,
                         alpha: float = 1.0) -> Node:
    """Mean hinge ``max(0, alpha + d_true(selected) + logsumexp_{layers, wrong}(-d))``."""
    idx = np.flatnonzero(train_mask)
    sel = np.asarray(selections, dtype=np.int64)
    sel = sel[idx] if len(sel) == len(train_mask) else sel
    layers = sorted(distances)
    pos = {l: k for k, l in enumerate(layers)}
    y = np.asarray(labels)[idx]
    C = distances[layers[0]].shape[1]
    block = ad.concat_cols([ad.gather_rows(distances[l], idx) for l in layers])
    slot = np.array([pos[int(s)] for s in sel], dtype=np.int64)
    true_d = ad.pick(block, np.arange(len(idx)), slot * C + y)
    wrong = np.ones(block.shape, dtype=bool)
    for k in range(len(layers)):
        wrong[np.arange(len(idx)), k * C + y] = False
    lse = ad.logsumexp(ad.scale(block, -1.0), wrong)
    hinge = ad.relu(ad.add(ad.add(true_d, lse), alpha))
    return ad.mean_all(hinge)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First and second moment estimates over the flattened parameter vector."""

    t: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam update. Returns new ``(params, state)``; inputs are untouched.

    Parameters missing from ``grads`` are treated as having zero gradient.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    names = list(params)
    flat_p = np.concatenate([np.ravel(params[k]) for k in names])
    flat_g = np.concatenate([
        np.ravel(grads[k]) if k in grads else np.zeros(np.size(params[k])) for k in names
    ])
    t = state.t + 1
    m = (1 - beta1) * flat_g if state.m is None else beta1 * state.m + (1 - beta1) * flat_g
    v = (1 - beta2) * flat_g * flat_g if state.v is None else beta2 * state.v + (1 - beta2) * flat_g * flat_g
    step = lr / (1 - beta1 ** t)
    denom = np.sqrt(v / (1 - beta2 ** t)) + eps
    flat_p = flat_p - step * m / denom
    new_params, offset = {}, 0
    for k in names:
        shape = np.shape(params[k])
        size = int(np.prod(shape))
        new_params[k] = flat_p[offset:offset + size].reshape(shape)
        offset += size
    return new_params, AdamState(t, m, v)


# ---------------------------------------------------------------------------
# model


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_f1: float
    val_f1: float
    seconds: float


@dataclass
class TrainedModel:
    encoder: EncoderConfig
    config: TrainConfig
    num_classes: int
    params: dict[str, np.ndarray]
    moments: ClassMoments | None
    best_epoch: int
    history: list[EpochRecord]

    @property
    def sec_per_epoch(self) -> float:
        return float(np.mean([r.seconds for r in self.history])) if self.history else 0.0

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss", "train_f1", "val_f1"])
            for r in self.history:
                w.writerow([r.epoch, repr(r.loss), repr(r.train_f1), repr(r.val_f1)])


def init_params(enc: EncoderConfig, cfg: TrainConfig, num_classes: int, rng) -> dict[str, np.ndarray]:
    params = init_encoder(enc, rng)
    if cfg.uses_moments:
        params.update(init_transforms(cfg.moment_layers(enc.depth), enc.hidden, rng, cfg.shared_transform))
    for l in cfg.decoder_layers(enc.depth):
        params[f"decoder{l}.W"] = glorot(rng, enc.hidden, num_classes)
        params[f"decoder{l}.b"] = np.zeros(num_classes)
    return params


@dataclass
class ForwardPass:
    tape: Tape
    nodes: dict[str, Node]
    stack: list[Node]
    transformed: dict[int, Node] | None
    _dist: tuple | None = None

    def transformed_values(self) -> dict[int, np.ndarray]:
        return {l: h.value for l, h in self.transformed.items()}

    def distances(self, moments: ClassMoments) -> tuple[dict[int, Node], np.ndarray]:
        """Tape distance nodes for every node and the matching (n, layers, C) probabilities.

        Recorded once per (forward pass, moments) pair and shared by selection,
        prediction and the loss.
        """
        if self._dist is None or self._dist[0] is not moments:
            nodes = tape_distances(self.transformed, moments)
            probs = np.stack([layer_class_probs(nodes[l].value) for l in sorted(nodes)], axis=1)
            self._dist = (moments, nodes, probs)
        return self._dist[1], self._dist[2]

    def probs(self, moments: ClassMoments) -> np.ndarray:
        return self.distances(moments)[1]


def forward(ops: GraphOperators, x, enc: EncoderConfig, cfg: TrainConfig, params) -> ForwardPass:
    tape = Tape()
    nodes = {k: tape.param(k, v) for k, v in params.items()}
    stack = encode(tape, ops, x, enc, nodes)
    tstack = None
    if cfg.uses_moments:
        layers = cfg.moment_layers(enc.depth)
        tstack = transform_stack({l: stack[l] for l in layers}, nodes, cfg.shared_transform)
    return ForwardPass(tape, nodes, stack, tstack)


def inference_layers(policy: str, probs, depth: int, n: int, literal: bool) -> np.ndarray:
    if policy == "final":
        return select_final(depth, n)
    if policy == "metselect":
        return select_inference(probs, literal)
    return select_max_distance(probs, None, literal)


def predict(fp: ForwardPass, moments: ClassMoments | None, enc: EncoderConfig, cfg: TrainConfig,
            params, policy: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Predicted labels and selected layers for every node."""
    policy = policy or cfg.policy
    n, L = fp.stack[0].shape[0], enc.depth
    probs = None
    if policy != "final" or cfg.loss == "distance":
        if moments is None:
            raise ValueError("this policy needs class moments")
        layer_ids = sorted(moments.layers)
        if policy != "final" and layer_ids != list(range(L + 1)):
            raise ValueError(f"policy {policy!r} needs moments for every layer")
        probs = fp.probs(moments)
    layers = inference_layers(policy, probs, L, n, cfg.eq4_literal)
    preds = np.empty(n, dtype=np.int64)
    if cfg.loss == "ce":
        for l in np.unique(layers):
            rows = layers == l
            logits = fp.stack[l].value[rows] @ params[f"decoder{l}.W"] + params[f"decoder{l}.b"]
            preds[rows] = np.argmax(logits, axis=1)
    else:
        slot = {l: k for k, l in enumerate(sorted(moments.layers))}
        idx = np.array([slot[int(l)] for l in layers])
        preds = np.argmax(probs[np.arange(n), idx], axis=1)
    return preds, layers


def _accuracy(pred, labels, mask) -> float:
    return float(np.mean(pred[mask] == labels[mask]))


def build_loss(fp: ForwardPass, moments: ClassMoments | None, enc: EncoderConfig, cfg: TrainConfig,
               labels, train_mask) -> Node:
    L = enc.depth
    n = len(labels)
    idx = np.flatnonzero(train_mask)
    distances = None
    if cfg.uses_moments:
        distances = fp.distances(moments)[0]
    if cfg.policy == "final":
        sel = select_final(L, n)
    else:
        probs = fp.probs(moments)[idx]
        if cfg.policy == "metselect":
            chosen = select_training(probs, labels[idx], cfg.eq4_literal)
        else:
            chosen = select_max_distance(probs, labels[idx], cfg.eq4_literal)
        sel = np.zeros(n, dtype=np.int64)
        sel[idx] = chosen
    if cfg.loss == "ce":
        loss = personalized_ce_loss(fp.stack, fp.nodes, sel, labels, train_mask)
        if cfg.aux_distance_weight > 0:
            aux = distance_margin_loss(distances, sel, labels, train_mask, cfg.margin)
            loss = loss + ad.scale(aux, cfg.aux_distance_weight)
        return loss
    return distance_margin_loss(distances, sel, labels, train_mask, cfg.margin)


def initial_model(g: Graph, split: Split, enc: EncoderConfig, cfg: TrainConfig,
                  ops: GraphOperators | None = None) -> TrainedModel:
    """The untrained model: initial parameters with moments from one bootstrap pass."""
    ops = ops or GraphOperators(g, enc.self_loops)
    params = init_params(enc, cfg, g.num_classes, np.random.default_rng(cfg.seed))
    moments = None
    if cfg.uses_moments:
        train_mask = split.masks(g.num_nodes)[0]
        fp = forward(ops, g.features, enc, cfg, params)
        moments = moments_epoch_pass(fp.transformed_values(), g.labels, train_mask, g.num_classes)
    return TrainedModel(enc, cfg, g.num_classes, params, moments, 0, [])


def train(g: Graph, split: Split, enc: EncoderConfig, cfg: TrainConfig,
          ops: GraphOperators | None = None) -> TrainedModel:
    """Train for ``cfg.epochs`` epochs and keep the parameters with the best validation micro-F1."""
    if enc.in_features != g.num_features:
        raise ValueError(f"encoder expects {enc.in_features} features, graph has {g.num_features}")
    ops = ops or GraphOperators(g, enc.self_loops)
    rng = np.random.default_rng(cfg.seed)
    params = init_params(enc, cfg, g.num_classes, rng)
    train_mask, val_mask, _ = split.masks(g.num_nodes)
    labels = g.labels
    x = g.features
    state = AdamState()
    moment_layers = cfg.moment_layers(enc.depth)

    def refresh(fp, epoch):
        if not cfg.uses_moments:
            return None
        return moments_epoch_pass(fp.transformed_values(), labels, train_mask, g.num_classes, epoch)

    fp = forward(ops, x, enc, cfg, params)
    moments = refresh(fp, 0)
    best = (-1.0, 0, params, moments)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        try:
            loss = build_loss(fp, moments, enc, cfg, labels, train_mask)
            grads = ad.backward(loss)
            params, state = adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            fp = forward(ops, x, enc, cfg, params)
            moments = refresh(fp, epoch)
            pred, _ = predict(fp, moments, enc, cfg, params)
        except (FloatingPointError, ValueError) as exc:
            raise type(exc)(f"epoch {epoch}: {exc}") from exc
        seconds = time.perf_counter() - t0
        rec = EpochRecord(epoch, float(loss.value.ravel()[0]), _accuracy(pred, labels, train_mask),
                          _accuracy(pred, labels, val_mask), seconds)
        history.append(rec)
        if rec.val_f1 > best[0]:
            best = (rec.val_f1, epoch, params, moments)
    _, best_epoch, best_params, best_moments = best
    return TrainedModel(enc, cfg, g.num_classes, best_params, best_moments, best_epoch, history)
