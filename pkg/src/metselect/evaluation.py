"""Micro-F1, per-split reports and their aggregation."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .encoders import GraphOperators
from .graph import Graph, Split
from .selection import layer_histogram
from .training import TrainedModel, forward, predict

METRICS = ("train_f1", "val_f1", "test_f1")
RESULT_COLUMNS = ("dataset", "model", "policy", "split", "train_f1", "val_f1", "test_f1", "sec_per_epoch")


def micro_f1(predictions, labels, mask) -> float:
    """Fraction of correct predictions on ``mask``; equals accuracy for single-label tasks."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    mask = np.asarray(mask)
    if mask.dtype != bool:
        idx = mask.astype(np.int64)
    else:
        idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError("micro-F1 of an empty node set")
    return float(np.mean(predictions[idx] == labels[idx]))


@dataclass
class SplitReport:
    split: int
    policy: str
    train_f1: float
    val_f1: float
    test_f1: float
    histogram: list[float]
    sec_per_epoch: float
    best_epoch: int
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for m in METRICS:
            v = getattr(self, m)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{m}={v} outside [0, 1]")
        if abs(sum(self.histogram) - 1.0) > 1e-9:
            raise ValueError("layer histogram must sum to 1")


@dataclass
class RunReport:
    entries: list[SplitReport] = field(default_factory=list)

    def append(self, entry: SplitReport) -> None:
        self.entries.append(entry)

    def aggregate(self) -> dict[str, tuple[float, float]]:
        return aggregate_splits(self.entries)

    def to_json(self) -> str:
        return json.dumps({"entries": [asdict(e) for e in self.entries]}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> RunReport:
        return cls([SplitReport(**e) for e in json.loads(text)["entries"]])


def evaluate(model: TrainedModel, g: Graph, split: Split, policy: str | None = None,
             split_index: int = 0, ops: GraphOperators | None = None) -> SplitReport:
    """Fresh forward pass with the stored snapshot, then inference-time selection per ``policy``."""
    policy = policy or model.config.policy
    ops = ops or GraphOperators(g, model.encoder.self_loops)
    fp = forward(ops, g.features, model.encoder, model.config, model.params)
    preds, layers = predict(fp, model.moments, model.encoder, model.config, model.params, policy)
    train, val, test = split.masks(g.num_nodes)
    hist = layer_histogram(layers[test], model.encoder.depth)
    config = {
        "arch": model.encoder.arch,
        "depth": model.encoder.depth,
        "hidden": model.encoder.hidden,
        "self_loops": model.encoder.self_loops,
        "loss": model.config.loss,
        "lr": model.config.lr,
        "epochs": model.config.epochs,
        "seed": model.config.seed,
        "trained_policy": model.config.policy,
        "eq4_literal": model.config.eq4_literal,
    }
    return SplitReport(
        split=split_index, policy=policy,
        train_f1=micro_f1(preds, g.labels, train),
        val_f1=micro_f1(preds, g.labels, val),
        test_f1=micro_f1(preds, g.labels, test),
        histogram=[float(x) for x in hist],
        sec_per_epoch=model.sec_per_epoch,
        best_epoch=model.best_epoch,
        config=config,
    )


def mean_std(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot aggregate zero values")
    # sorting makes the float sums independent of input order
    v = np.sort(v)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


def aggregate_splits(reports: Iterable) -> dict[str, tuple[float, float]]:
    """Mean and sample std of each metric over split reports (objects or mappings)."""
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate_splits needs at least one report")

    def get(r, m):
        return r[m] if isinstance(r, dict) else getattr(r, m)

    return {m: mean_std([get(r, m) for r in reports]) for m in METRICS}


def delta_max(table) -> np.ndarray:
    """Per-method mean gap to the best method, averaged over datasets.

    ``table`` is (methods, datasets); NaN cells are skipped in both the column
    max and the per-method average.
    """
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.shape[1] == 0:
        raise ValueError("delta_max needs a (methods, datasets) table with at least one dataset")
    gap = np.nanmax(t, axis=0) - t
    return np.nanmean(gap, axis=1)


def write_histogram_csv(path, histogram: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["layer", "proportion"])
        for l, p in enumerate(histogram):
            w.writerow([l, f"{p:.6f}"])
